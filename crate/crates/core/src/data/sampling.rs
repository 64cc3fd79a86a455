//! Class-level sampling baselines: class-balanced, square-root and
//! progressively-balanced sampling, next to plain instance shuffling.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SamplerKind {
    /// Every sample once per epoch, shuffled.
    #[default]
    InstanceUniform,
    /// Uniform over classes.
    Cbs,
    /// Proportional to the square root of class size.
    Srs,
    /// Linear blend from instance-frequency to class-balanced over training.
    Pbs,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplerConfig {
    pub kind: SamplerKind,
    /// Horizon `T` for progressive balancing; defaults to the last epoch.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub total_epochs: Option<usize>,
}

/// Probability of drawing each class at epoch `t` of `total`.
pub fn class_sampling_probs(counts: &[usize], kind: SamplerKind, t: usize, total: usize) -> Result<Vec<f64>> {
    if counts.is_empty() || counts.contains(&0) {
        return Err(Error::Invalid("class counts must be positive".into()));
    }
    let k = counts.len() as f64;
    let n: f64 = counts.iter().map(|&c| c as f64).sum();
    let freq = || counts.iter().map(|&c| c as f64 / n);
    Ok(match kind {
        SamplerKind::InstanceUniform => freq().collect(),
        SamplerKind::Cbs => vec![1.0 / k; counts.len()],
        SamplerKind::Srs => {
            let z: f64 = counts.iter().map(|&c| (c as f64).sqrt()).sum();
            counts.iter().map(|&c| (c as f64).sqrt() / z).collect()
        }
        SamplerKind::Pbs => {
            let a = if total == 0 { 1.0 } else { (t.min(total)) as f64 / total as f64 };
            freq().map(|f| (1.0 - a) * f + a / k).collect()
        }
    })
}

/// Sample indices for one epoch. Instance-uniform returns a permutation;
/// class-level samplers draw `N` indices with replacement, first a class by
/// its probability and then a member uniformly.
pub fn epoch_order(
    labels: &[usize],
    classes: usize,
    sampler: &SamplerConfig,
    epoch: usize,
    epochs: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<usize>> {
    let n = labels.len();
    if sampler.kind == SamplerKind::InstanceUniform {
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(rng);
        return Ok(order);
    }
    let mut members = vec![Vec::new(); classes];
    for (i, &y) in labels.iter().enumerate() {
        members[y].push(i);
    }
    // Absent classes cannot be drawn; sample over the present ones.
    let present: Vec<usize> = (0..classes).filter(|&k| !members[k].is_empty()).collect();
    let counts: Vec<usize> = present.iter().map(|&k| members[k].len()).collect();
    let total = sampler.total_epochs.unwrap_or(epochs.saturating_sub(1));
    let probs = class_sampling_probs(&counts, sampler.kind, epoch, total)?;
    let mut cdf = Vec::with_capacity(probs.len());
    let mut acc = 0.0;
    for p in &probs {
        acc += p;
        cdf.push(acc);
    }
    Ok((0..n)
        .map(|_| {
            let u: f64 = rng.random::<f64>() * acc;
            let c = cdf.iter().position(|&v| u < v).unwrap_or(cdf.len() - 1);
            let pool = &members[present[c]];
            pool[rng.random_range(0..pool.len())]
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;

    #[test]
    fn examples() {
        assert_eq!(class_sampling_probs(&[7, 1, 40, 3], SamplerKind::Cbs, 0, 1).unwrap(), vec![0.25; 4]);
        let srs = class_sampling_probs(&[100, 1], SamplerKind::Srs, 0, 1).unwrap();
        assert!((srs[0] - 10.0 / 11.0).abs() < 1e-15 && (srs[1] - 1.0 / 11.0).abs() < 1e-15);
        let counts = [50, 20, 5];
        let inst = class_sampling_probs(&counts, SamplerKind::InstanceUniform, 0, 9).unwrap();
        let cbs = class_sampling_probs(&counts, SamplerKind::Cbs, 0, 9).unwrap();
        assert_eq!(class_sampling_probs(&counts, SamplerKind::Pbs, 0, 9).unwrap(), inst);
        let end = class_sampling_probs(&counts, SamplerKind::Pbs, 9, 9).unwrap();
        for (a, b) in end.iter().zip(&cbs) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    proptest! {
        #[test]
        fn probabilities_sum_to_one(counts in proptest::collection::vec(1usize..1000, 1..20), t in 0usize..10) {
            for kind in [SamplerKind::InstanceUniform, SamplerKind::Cbs, SamplerKind::Srs, SamplerKind::Pbs] {
                let p = class_sampling_probs(&counts, kind, t, 9).unwrap();
                prop_assert!((p.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
                prop_assert!(p.iter().all(|&v| v >= 0.0));
            }
        }
    }

    #[test]
    fn instance_order_is_permutation() {
        let labels = vec![0, 0, 1, 2, 2, 2];
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut o = epoch_order(&labels, 3, &SamplerConfig::default(), 0, 5, &mut rng).unwrap();
        o.sort();
        assert_eq!(o, (0..6).collect::<Vec<_>>());
    }

    #[test]
    fn cbs_balances_classes() {
        let mut labels = vec![0; 900];
        labels.extend(vec![1; 100]);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let cfg = SamplerConfig { kind: SamplerKind::Cbs, total_epochs: None };
        let o = epoch_order(&labels, 2, &cfg, 0, 5, &mut rng).unwrap();
        let minority = o.iter().filter(|&&i| labels[i] == 1).count();
        assert!((400..600).contains(&minority), "{minority}");
    }
}
