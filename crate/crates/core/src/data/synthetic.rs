use std::f64::consts::TAU;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::{Dataset, DatasetRecipe, LabeledSample};
use crate::error::{Error, Result};
use crate::seed::{self, Stream};
use crate::tensor::Tensor;

const COMPONENTS: usize = 3;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

/// One smooth pattern per class: a per-channel offset plus a few plane waves
/// with at most two cycles across the image, centred on mid-grey and clamped
/// to `[0, 1]`. The offset survives downscaling, the waves mostly do not.
pub fn class_templates(recipe: &DatasetRecipe, data_seed: u64) -> Vec<Tensor> {
    let (h, w, c) = (recipe.height, recipe.width, recipe.channels);
    (0..recipe.classes)
        .map(|k| {
            let mut rng = seed::rng(data_seed, Stream::Templates, k as u64);
            let offset: Vec<f64> = (0..c).map(|_| rng.random_range(-1.0..1.0)).collect();
            let waves: Vec<(f64, f64, f64, Vec<f64>)> = (0..COMPONENTS)
                .map(|_| {
                    let (fy, fx) = loop {
                        let fy = rng.random_range(0..=2) as f64;
                        let fx = rng.random_range(0..=2) as f64;
                        if fy + fx > 0.0 {
                            break (fy, fx);
                        }
                    };
                    let phase = rng.random_range(0.0..TAU);
                    let amps = (0..c).map(|_| rng.random_range(-1.0..1.0)).collect();
                    (fy, fx, phase, amps)
                })
                .collect();
            let mut data = Vec::with_capacity(h * w * c);
            for i in 0..h {
                for j in 0..w {
                    let y = (i as f64 + 0.5) / h as f64;
                    let x = (j as f64 + 0.5) / w as f64;
                    for ch in 0..c {
                        let v: f64 = offset[ch]
                            + waves
                            .iter()
                            .map(|(fy, fx, ph, amps)| amps[ch] * (TAU * (fy * y + fx * x) + ph).sin())
                                .sum::<f64>();
                        data.push((0.5 + 0.25 * v).clamp(0.0, 1.0));
                    }
                }
            }
            Tensor::new(vec![h, w, c], data).expect("template shape")
        })
        .collect()
}

/// Samples of each class are its template plus i.i.d. Gaussian pixel noise,
/// clamped to `[0, 1]`. Each class draws from its own stream, so the output
/// does not depend on generation order.
pub fn gen_synthetic_split(recipe: &DatasetRecipe, split: Split, counts: &[usize]) -> Result<Dataset> {
    if counts.len() != recipe.classes {
        return Err(Error::Invalid(format!("{} counts for {} classes", counts.len(), recipe.classes)));
    }
    let data_seed = recipe
        .seed
        .ok_or_else(|| Error::Invalid("synthetic generation needs a data seed".into()))?;
    let templates = class_templates(recipe, data_seed);
    let stream = match split {
        Split::Train => Stream::TrainSamples,
        Split::Test => Stream::TestSamples,
    };
    let noise = if recipe.pixel_noise > 0.0 {
        Some(Normal::new(0.0, recipe.pixel_noise).map_err(|e| Error::Invalid(e.to_string()))?)
    } else {
        None
    };
    let mut samples = Vec::with_capacity(counts.iter().sum());
    for (k, (&n, template)) in counts.iter().zip(&templates).enumerate() {
        let mut rng = seed::rng(data_seed, stream, k as u64);
        for _ in 0..n {
            let image = match &noise {
                None => template.clone(),
                Some(dist) => {
                    let data = template
                        .data()
                        .iter()
                        .map(|v| (v + dist.sample(&mut rng)).clamp(0.0, 1.0))
                        .collect();
                    Tensor::new(template.shape().to_vec(), data)?
                }
            };
            samples.push(LabeledSample {
                image,
                label: k,
                original_label: k,
            });
        }
    }
    Dataset::new(recipe.classes, recipe.shape(), samples)
}

/// Training split with the recipe's per-class counts.
pub fn gen_synthetic(recipe: &DatasetRecipe) -> Result<Dataset> {
    gen_synthetic_split(recipe, Split::Train, &recipe.resolved_counts()?)
}
