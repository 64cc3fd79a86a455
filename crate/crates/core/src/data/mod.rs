//! Datasets: synthetic generation, long-tail and label-noise shaping,
//! IDX / CIFAR-binary loaders and class-sampling baselines.

mod formats;
mod sampling;
mod synthetic;

use std::path::PathBuf;

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

pub use formats::{
    load_cifar_binary, load_idx, load_idx_dataset, read_idx, write_idx_images, write_idx_labels, IdxData,
};
pub use sampling::{class_sampling_probs, epoch_order, SamplerConfig, SamplerKind};
pub use synthetic::{class_templates, gen_synthetic, gen_synthetic_split, Split};

use crate::error::{Error, Result};
use crate::nscore::Normalization;
use crate::seed::{self, Stream};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct LabeledSample {
    pub image: Tensor,
    /// Training label, possibly corrupted.
    pub label: usize,
    /// Label before noise injection; only for diagnostics.
    pub original_label: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub classes: usize,
    pub shape: [usize; 3],
    pub samples: Vec<LabeledSample>,
}

impl Dataset {
    pub fn new(classes: usize, shape: [usize; 3], samples: Vec<LabeledSample>) -> Result<Self> {
        for s in &samples {
            if s.label >= classes || s.original_label >= classes {
                return Err(Error::LabelOutOfRange {
                    label: s.label.max(s.original_label),
                    classes,
                });
            }
            if s.image.shape() != shape {
                return Err(Error::shape("Dataset::new", format!("{:?} vs {shape:?}", s.image.shape())));
            }
        }
        Ok(Dataset { classes, shape, samples })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn labels(&self) -> Vec<usize> {
        self.samples.iter().map(|s| s.label).collect()
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.classes];
        for s in &self.samples {
            counts[s.label] += 1;
        }
        counts
    }

    /// Per-channel mean and (population) standard deviation over all pixels.
    /// Channels with zero spread get a unit std.
    pub fn channel_stats(&self) -> Normalization {
        let c = self.shape[2];
        let mut sum = vec![0.0; c];
        let mut sq = vec![0.0; c];
        let mut n = 0usize;
        for s in &self.samples {
            for px in s.image.data().chunks(c) {
                for ch in 0..c {
                    sum[ch] += px[ch];
                    sq[ch] += px[ch] * px[ch];
                }
                n += 1;
            }
        }
        let n = n.max(1) as f64;
        let mean: Vec<f64> = sum.iter().map(|s| s / n).collect();
        let std = sq
            .iter()
            .zip(&mean)
            .map(|(q, m)| {
                let var = (q / n - m * m).max(0.0);
                if var > 1e-24 { var.sqrt() } else { 1.0 }
            })
            .collect();
        Normalization { mean, std }
    }

    /// Keeps the first `counts[k]` samples of each class, in dataset order.
    pub fn take_per_class(&self, counts: &[usize]) -> Result<Dataset> {
        if counts.len() != self.classes {
            return Err(Error::Invalid(format!("{} counts for {} classes", counts.len(), self.classes)));
        }
        let mut seen = vec![0; self.classes];
        let samples = self
            .samples
            .iter()
            .filter(|s| {
                seen[s.label] += 1;
                seen[s.label] <= counts[s.label]
            })
            .cloned()
            .collect();
        Dataset::new(self.classes, self.shape, samples)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetKind {
    SyntheticBlobs,
    IdxFiles,
    CifarBinary,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LongTail {
    pub n_max: usize,
    pub imbalance_factor: f64,
}

fn default_test_per_class() -> usize {
    100
}

/// Everything needed to build the train and test splits of a run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetRecipe {
    pub kind: DatasetKind,
    pub classes: usize,
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    /// Explicit per-class training counts. Ignored when `longtail` is set.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub counts: Vec<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub longtail: Option<LongTail>,
    #[serde(default = "default_test_per_class")]
    pub test_per_class: usize,
    #[serde(default)]
    pub pixel_noise: f64,
    #[serde(default)]
    pub label_noise: f64,
    /// Fixed data seed. When absent, each run seed derives its own.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    /// IDX: `[images, labels]`; CIFAR: one or more batch files.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub train_files: Vec<PathBuf>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub test_files: Vec<PathBuf>,
}

impl DatasetRecipe {
    pub fn synthetic(classes: usize, shape: [usize; 3], counts: Vec<usize>, pixel_noise: f64, seed: u64) -> Self {
        DatasetRecipe {
            kind: DatasetKind::SyntheticBlobs,
            classes,
            height: shape[0],
            width: shape[1],
            channels: shape[2],
            counts,
            longtail: None,
            test_per_class: default_test_per_class(),
            pixel_noise,
            label_noise: 0.0,
            seed: Some(seed),
            train_files: Vec::new(),
            test_files: Vec::new(),
        }
    }

    pub fn shape(&self) -> [usize; 3] {
        [self.height, self.width, self.channels]
    }

    /// Training counts per class, from `longtail` when present.
    pub fn resolved_counts(&self) -> Result<Vec<usize>> {
        match self.longtail {
            Some(lt) => longtail_counts(lt.n_max, self.classes, lt.imbalance_factor),
            None => Ok(self.counts.clone()),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.classes < 2 {
            return Err(Error::Invalid(format!("need at least 2 classes, got {}", self.classes)));
        }
        if self.height < 2 || self.width < 2 || self.channels == 0 {
            return Err(Error::Invalid("image must be at least 2x2 with one channel".into()));
        }
        if !(self.pixel_noise >= 0.0 && self.pixel_noise.is_finite()) {
            return Err(Error::Invalid("pixel_noise must be non-negative".into()));
        }
        if !(0.0..1.0).contains(&self.label_noise) {
            return Err(Error::Invalid("label_noise must be in [0, 1)".into()));
        }
        let counts = self.resolved_counts()?;
        match self.kind {
            DatasetKind::SyntheticBlobs => {
                if counts.len() != self.classes {
                    return Err(Error::Invalid(format!(
                        "{} per-class counts for {} classes",
                        counts.len(),
                        self.classes
                    )));
                }
                if counts.contains(&0) {
                    return Err(Error::Invalid("per-class counts must be positive".into()));
                }
            }
            DatasetKind::IdxFiles => {
                if self.train_files.len() != 2 || self.test_files.len() != 2 {
                    return Err(Error::Invalid("idx_files needs [images, labels] for train and test".into()));
                }
            }
            DatasetKind::CifarBinary => {
                if self.train_files.is_empty() || self.test_files.is_empty() {
                    return Err(Error::Invalid("cifar_binary needs train and test files".into()));
                }
            }
        }
        if !counts.is_empty() && counts.len() != self.classes {
            return Err(Error::Invalid("per-class counts length must equal class count".into()));
        }
        Ok(())
    }
}

/// Train and test splits of one run.
#[derive(Clone, Debug, PartialEq)]
pub struct Splits {
    pub train: Dataset,
    pub test: Dataset,
}

/// Builds both splits. `run_seed` supplies the data seed when the recipe
/// does not pin one. Label noise touches only the training split.
pub fn load(recipe: &DatasetRecipe, run_seed: u64) -> Result<Splits> {
    recipe.validate()?;
    let data_seed = recipe
        .seed
        .unwrap_or_else(|| seed::derive(run_seed, Stream::Dataset, 0));
    let counts = recipe.resolved_counts()?;
    let (train, test) = match recipe.kind {
        DatasetKind::SyntheticBlobs => {
            let mut r = recipe.clone();
            r.seed = Some(data_seed);
            r.counts = counts.clone();
            r.longtail = None;
            let test_counts = vec![recipe.test_per_class; recipe.classes];
            (
                gen_synthetic(&r)?,
                gen_synthetic_split(&r, synthetic::Split::Test, &test_counts)?,
            )
        }
        DatasetKind::IdxFiles => {
            let train = load_idx_dataset(&recipe.train_files[0], &recipe.train_files[1], recipe.classes)?;
            let test = load_idx_dataset(&recipe.test_files[0], &recipe.test_files[1], recipe.classes)?;
            (train, test)
        }
        DatasetKind::CifarBinary => {
            let train = load_cifar_binary(&recipe.train_files, recipe.classes)?;
            let test = load_cifar_binary(&recipe.test_files, recipe.classes)?;
            (train, test)
        }
    };
    let train = if recipe.kind != DatasetKind::SyntheticBlobs && !counts.is_empty() {
        train.take_per_class(&counts)?
    } else {
        train
    };
    if train.shape != recipe.shape() || test.shape != recipe.shape() {
        return Err(Error::Invalid(format!(
            "loaded images {:?} do not match recipe {:?}",
            train.shape,
            recipe.shape()
        )));
    }
    let train = inject_label_noise(&train, recipe.label_noise, seed::derive(data_seed, Stream::LabelNoise, 0))?;
    Ok(Splits { train, test })
}

/// Exponentially decaying class sizes,
/// `n_k = round(n_max * imbalance_factor^(-k / (K - 1)))`, floored at one.
pub fn longtail_counts(n_max: usize, classes: usize, imbalance_factor: f64) -> Result<Vec<usize>> {
    if classes < 2 {
        return Err(Error::Invalid(format!("long tail needs at least 2 classes, got {classes}")));
    }
    if !(imbalance_factor >= 1.0 && imbalance_factor.is_finite()) {
        return Err(Error::Invalid(format!("imbalance factor {imbalance_factor} must be >= 1")));
    }
    if n_max == 0 {
        return Err(Error::Invalid("n_max must be positive".into()));
    }
    Ok((0..classes)
        .map(|k| {
            let e = -(k as f64) / (classes - 1) as f64;
            ((n_max as f64 * imbalance_factor.powf(e)).round() as usize).max(1)
        })
        .collect())
}

/// Replaces `floor(rate * N)` labels, chosen by `seed`, with a different
/// class drawn uniformly from the other `K - 1`.
pub fn inject_label_noise(data: &Dataset, rate: f64, seed: u64) -> Result<Dataset> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::Invalid(format!("noise rate {rate} not in [0, 1)")));
    }
    let mut out = data.clone();
    let n = data.len();
    let flips = (rate * n as f64).floor() as usize;
    if flips == 0 {
        return Ok(out);
    }
    let mut rng = seed::rng(seed, Stream::LabelNoise, 1);
    let mut chosen = index::sample(&mut rng, n, flips).into_vec();
    chosen.sort_unstable();
    for i in chosen {
        let s = &mut out.samples[i];
        let mut y = rng.random_range(0..data.classes - 1);
        if y >= s.original_label {
            y += 1;
        }
        s.label = y;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn longtail_examples() {
        assert_eq!(longtail_counts(100, 2, 100.0).unwrap(), vec![100, 1]);
        assert_eq!(longtail_counts(100, 3, 100.0).unwrap(), vec![100, 10, 1]);
        assert_eq!(longtail_counts(37, 5, 1.0).unwrap(), vec![37; 5]);
        assert!(longtail_counts(100, 1, 10.0).is_err());
        assert!(longtail_counts(100, 3, 0.5).is_err());
    }

    proptest! {
        #[test]
        fn longtail_monotone_with_exact_endpoints(n_max in 1usize..5000, k in 2usize..30, f in 1.0f64..500.0) {
            let c = longtail_counts(n_max, k, f).unwrap();
            prop_assert!(c.windows(2).all(|w| w[0] >= w[1]));
            prop_assert_eq!(c[0], n_max);
            prop_assert_eq!(c[k - 1], ((n_max as f64 / f).round() as usize).max(1));
            prop_assert!(c.iter().all(|&n| n >= 1));
        }
    }

    fn small() -> Dataset {
        gen_synthetic(&DatasetRecipe::synthetic(4, [3, 3, 1], vec![250; 4], 0.1, 3)).unwrap()
    }

    #[test]
    fn label_noise_zero_is_identity() {
        let d = small();
        assert_eq!(inject_label_noise(&d, 0.0, 1).unwrap(), d);
    }

    #[test]
    fn label_noise_flips_exact_count() {
        let d = small();
        let noisy = inject_label_noise(&d, 0.2, 99).unwrap();
        let flipped: Vec<_> = noisy.samples.iter().filter(|s| s.label != s.original_label).collect();
        assert_eq!(flipped.len(), 200);
        assert!(noisy.samples.iter().zip(&d.samples).all(|(a, b)| a.original_label == b.label));
        assert_eq!(noisy, inject_label_noise(&d, 0.2, 99).unwrap());
    }

    #[test]
    fn take_per_class_keeps_prefix() {
        let d = small();
        let t = d.take_per_class(&[5, 1, 3, 0]).unwrap();
        assert_eq!(t.class_counts(), vec![5, 1, 3, 0]);
    }

    #[test]
    fn recipe_validation() {
        let mut r = DatasetRecipe::synthetic(3, [4, 4, 1], vec![5, 5], 0.0, 1);
        assert!(r.validate().is_err());
        r.counts = vec![5, 5, 5];
        assert!(r.validate().is_ok());
        r.label_noise = 1.0;
        assert!(r.validate().is_err());
    }

    #[test]
    fn load_applies_noise_to_train_only() {
        let mut r = DatasetRecipe::synthetic(3, [4, 4, 1], vec![20, 20, 20], 0.05, 8);
        r.label_noise = 0.5;
        r.test_per_class = 10;
        let s = load(&r, 2024).unwrap();
        assert_eq!(s.train.samples.iter().filter(|x| x.label != x.original_label).count(), 30);
        assert!(s.test.samples.iter().all(|x| x.label == x.original_label));
        assert_eq!(s.test.class_counts(), vec![10, 10, 10]);
    }
}
