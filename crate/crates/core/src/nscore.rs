//! Group competition scores.
//!
//! A mini-batch (already shuffled) is cut into contiguous groups of `m`
//! samples. Each group is stitched into one composite image, resized back to
//! the model's input size, normalized like an ordinary input, and classified
//! once without recording gradients. Every member reads the composite's
//! posterior at its own label (`q_i = p[y_i]`), and the raw values are
//! normalized within the group (`s_i = q_i / sum_j q_j`).
//!
//! When `m` does not divide the batch, the trailing samples are not scored
//! and get the neutral value `1/m`.

use crate::error::{Error, Result};
use crate::imageops::{self, GridLayout};
use crate::model::Classifier;
use crate::tensor::{self, Tensor};

/// Guards the group normalizer; unreachable with a strictly positive softmax.
const SUM_FLOOR: f64 = 1e-12;

/// One competition group: a layout plus the batch positions of its members.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GroupSpec {
    pub layout: GridLayout,
    pub members: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Partition {
    pub groups: Vec<GroupSpec>,
    /// Trailing batch positions that do not fill a whole group.
    pub leftover: Vec<usize>,
}

/// Per-channel statistics applied to every model input.
#[derive(Clone, Debug, PartialEq)]
pub struct Normalization {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Normalization {
    pub fn identity(channels: usize) -> Self {
        Normalization {
            mean: vec![0.0; channels],
            std: vec![1.0; channels],
        }
    }

    pub fn apply(&self, img: &Tensor) -> Result<Tensor> {
        imageops::channel_normalize(img, &self.mean, &self.std)
    }
}

/// Scores for one batch, in batch order.
#[derive(Clone, Debug, PartialEq)]
pub struct NsResult {
    /// Raw score `q_i`: the composite's posterior at the member's label.
    pub raw: Vec<f64>,
    /// Normalized score `s_i`; sums to one within each group.
    pub score: Vec<f64>,
    /// Group of each sample; `None` for the unscored leftover.
    pub group: Vec<Option<usize>>,
    /// Composite forward passes performed.
    pub inferences: usize,
}

pub fn partition_groups(batch_size: usize, layout: GridLayout) -> Result<Partition> {
    let m = layout.group_size();
    if m < 2 {
        return Err(Error::Invalid(format!("group size {m} must be at least 2")));
    }
    if batch_size == 0 {
        return Err(Error::Invalid("empty batch".into()));
    }
    let full = batch_size / m;
    let groups = (0..full)
        .map(|g| GroupSpec {
            layout,
            members: (g * m..(g + 1) * m).collect(),
        })
        .collect();
    Ok(Partition {
        groups,
        leftover: (full * m..batch_size).collect(),
    })
}

/// `s_i = q_i / sum_j q_j`.
pub fn normalize_scores(raw: &[f64]) -> Vec<f64> {
    let total: f64 = raw.iter().sum();
    let total = total.max(SUM_FLOOR);
    raw.iter().map(|q| q / total).collect()
}

/// Stitch, resize to the model input size and normalize.
pub fn composite(
    images: &[&Tensor],
    layout: GridLayout,
    model: &Classifier,
    norm: &Normalization,
) -> Result<Tensor> {
    let cfg = model.config();
    let stitched = imageops::stitch(images, layout)?;
    let resized = imageops::bilinear_resize(&stitched, cfg.height, cfg.width)?;
    norm.apply(&resized)
}

fn check_inputs(images: &[&Tensor], labels: &[usize], model: &Classifier) -> Result<()> {
    let cfg = model.config();
    if images.len() != labels.len() {
        return Err(Error::shape(
            "ns scores",
            format!("{} images, {} labels", images.len(), labels.len()),
        ));
    }
    if let Some(&y) = labels.iter().find(|&&y| y >= cfg.classes) {
        return Err(Error::LabelOutOfRange {
            label: y,
            classes: cfg.classes,
        });
    }
    if let Some(im) = images.iter().find(|im| im.shape() != cfg.input_shape()) {
        return Err(Error::shape(
            "ns scores",
            format!("image {:?} for model input {:?}", im.shape(), cfg.input_shape()),
        ));
    }
    Ok(())
}

/// `(q_i, s_i)` for each member of one group.
pub fn group_ns_scores(
    group: &GroupSpec,
    images: &[&Tensor],
    labels: &[usize],
    model: &Classifier,
    norm: &Normalization,
) -> Result<Vec<(f64, f64)>> {
    check_inputs(images, labels, model)?;
    let members: Vec<&Tensor> = group
        .members
        .iter()
        .map(|&i| images.get(i).copied().ok_or_else(|| Error::Invalid(format!("member {i} out of batch"))))
        .collect::<Result<_>>()?;
    let x = composite(&members, group.layout, model, norm)?;
    let p = tensor::softmax_rows(&model.logits_batch(&x.reshape(&[1, x.len()])?)?)?;
    let raw: Vec<f64> = group.members.iter().map(|&i| p.data()[labels[i]]).collect();
    let s = normalize_scores(&raw);
    Ok(raw.into_iter().zip(s).collect())
}

/// Scores a whole batch. Composites are classified together in one untaped
/// pass; each row is computed independently, so results match group-by-group
/// scoring bit for bit.
pub fn batch_ns_scores(
    images: &[&Tensor],
    labels: &[usize],
    model: &Classifier,
    layout: GridLayout,
    norm: &Normalization,
) -> Result<NsResult> {
    check_inputs(images, labels, model)?;
    let part = partition_groups(images.len(), layout)?;
    let m = layout.group_size();
    let d = model.config().input_dim();
    let k = model.config().classes;
    let neutral = 1.0 / m as f64;
    let n = images.len();
    let mut out = NsResult {
        raw: vec![neutral; n],
        score: vec![neutral; n],
        group: vec![None; n],
        inferences: part.groups.len(),
    };
    if part.groups.is_empty() {
        return Ok(out);
    }
    let mut rows = Vec::with_capacity(part.groups.len() * d);
    for g in &part.groups {
        let members: Vec<&Tensor> = g.members.iter().map(|&i| images[i]).collect();
        rows.extend_from_slice(composite(&members, layout, model, norm)?.data());
    }
    let x = Tensor::new(vec![part.groups.len(), d], rows)?;
    let p = tensor::softmax_rows(&model.logits_batch(&x)?)?;
    for (gi, g) in part.groups.iter().enumerate() {
        let row = &p.data()[gi * k..(gi + 1) * k];
        let raw: Vec<f64> = g.members.iter().map(|&i| row[labels[i]]).collect();
        for ((&i, q), s) in g.members.iter().zip(&raw).zip(normalize_scores(&raw)) {
            out.raw[i] = *q;
            out.score[i] = s;
            out.group[i] = Some(gi);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ClassifierConfig;

    fn constant_model(classes: usize) -> Classifier {
        let mut m = Classifier::new(ClassifierConfig {
            height: 2,
            width: 2,
            channels: 1,
            hidden: vec![3],
            conv: None,
            classes,
            init_seed: 5,
        })
        .unwrap();
        m.zero_output_layer();
        m
    }

    #[test]
    fn partition_examples() {
        let l4 = GridLayout::new(2, 2).unwrap();
        let p = partition_groups(8, l4).unwrap();
        assert_eq!(p.groups.len(), 2);
        assert_eq!(p.groups[0].members, vec![0, 1, 2, 3]);
        assert_eq!(p.groups[1].members, vec![4, 5, 6, 7]);
        assert!(p.leftover.is_empty());

        let p = partition_groups(4, GridLayout::new(1, 2).unwrap()).unwrap();
        assert_eq!(p.groups[0].members, vec![0, 1]);
        assert_eq!(p.groups[1].members, vec![2, 3]);

        let p = partition_groups(6, l4).unwrap();
        assert_eq!(p.groups.len(), 1);
        assert_eq!(p.leftover, vec![4, 5]);

        assert!(partition_groups(4, GridLayout::new(1, 1).unwrap()).is_err());
    }

    #[test]
    fn constant_model_scores_half() {
        let m = constant_model(2);
        let a = Tensor::full(&[2, 2, 1], 0.2);
        let b = Tensor::full(&[2, 2, 1], 0.9);
        let g = GroupSpec {
            layout: GridLayout::new(1, 2).unwrap(),
            members: vec![0, 1],
        };
        let r = group_ns_scores(&g, &[&a, &b], &[0, 1], &m, &Normalization::identity(1)).unwrap();
        assert_eq!(r, vec![(0.5, 0.5), (0.5, 0.5)]);
    }

    #[test]
    fn same_label_group_is_uniform() {
        let m = Classifier::new(ClassifierConfig {
            height: 2,
            width: 2,
            channels: 1,
            hidden: vec![],
            conv: None,
            classes: 3,
            init_seed: 9,
        })
        .unwrap();
        let ims: Vec<Tensor> = (0..4).map(|i| Tensor::full(&[2, 2, 1], i as f64 * 0.3)).collect();
        let refs: Vec<&Tensor> = ims.iter().collect();
        let r = batch_ns_scores(&refs, &[2, 2, 2, 2], &m, GridLayout::new(2, 2).unwrap(), &Normalization::identity(1)).unwrap();
        assert!(r.score.iter().all(|&s| s == 0.25));
    }

    #[test]
    fn leftover_gets_neutral_score() {
        let m = constant_model(3);
        let ims: Vec<Tensor> = (0..6).map(|_| Tensor::zeros(&[2, 2, 1])).collect();
        let refs: Vec<&Tensor> = ims.iter().collect();
        let r = batch_ns_scores(&refs, &[0, 1, 2, 0, 1, 2], &m, GridLayout::new(2, 2).unwrap(), &Normalization::identity(1)).unwrap();
        assert_eq!(r.inferences, 1);
        assert_eq!(&r.score[4..], &[0.25, 0.25]);
        assert_eq!(r.group[4], None);
        assert_eq!(r.group[0], Some(0));
    }

    #[test]
    fn normalize_is_scale_invariant() {
        let q = [0.1, 0.4, 0.25, 0.05];
        let s = normalize_scores(&q);
        let scaled: Vec<f64> = q.iter().map(|v| v * 37.5).collect();
        for (a, b) in s.iter().zip(normalize_scores(&scaled)) {
            assert!((a - b).abs() <= 1e-12);
        }
    }

    #[test]
    fn wrong_label_rejected() {
        let m = constant_model(2);
        let a = Tensor::zeros(&[2, 2, 1]);
        let err = batch_ns_scores(&[&a, &a], &[0, 2], &m, GridLayout::new(1, 2).unwrap(), &Normalization::identity(1));
        assert!(matches!(err, Err(Error::LabelOutOfRange { .. })));
    }
}
