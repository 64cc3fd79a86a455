//! Score-to-weight mappings.
//!
//! The competition weight is affine in the group score, `w = sigma + rho * s`.
//! A positive `rho` favours group winners, a negative `rho` favours losers,
//! and `sigma` sets the floor that keeps every weight away from zero.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    /// Winner-strengthening, `rho > 0`.
    NsWs,
    /// Loser-focusing, `rho < 0`.
    NsLf,
    /// Constant weight `sigma`; `rho` must be zero.
    Uniform,
    /// `w = sigma + rho * (1 - s)^gamma`, a focal-style modulation of the score.
    FocalLike,
}

impl Strategy {
    /// The label implied by the sign of `rho` for the affine mapping.
    pub fn from_rho(rho: f64) -> Strategy {
        if rho > 0.0 {
            Strategy::NsWs
        } else if rho < 0.0 {
            Strategy::NsLf
        } else {
            Strategy::Uniform
        }
    }

    pub fn uses_scores(&self) -> bool {
        !matches!(self, Strategy::Uniform)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WeightingConfig {
    pub strategy: Strategy,
    #[serde(default = "default_sigma")]
    pub sigma: f64,
    #[serde(default)]
    pub rho: f64,
    /// Exponent for [`Strategy::FocalLike`].
    #[serde(default = "default_gamma")]
    pub gamma: f64,
}

fn default_sigma() -> f64 {
    1.0
}

fn default_gamma() -> f64 {
    2.0
}

impl Default for WeightingConfig {
    fn default() -> Self {
        WeightingConfig::uniform()
    }
}

impl WeightingConfig {
    pub fn uniform() -> Self {
        WeightingConfig {
            strategy: Strategy::Uniform,
            sigma: 1.0,
            rho: 0.0,
            gamma: default_gamma(),
        }
    }

    /// Affine mapping with the strategy label taken from the sign of `rho`.
    pub fn affine(sigma: f64, rho: f64) -> Self {
        WeightingConfig {
            strategy: Strategy::from_rho(rho),
            sigma,
            rho,
            gamma: default_gamma(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma >= 0.0 && self.sigma.is_finite()) {
            return Err(Error::Invalid(format!("sigma {} must be non-negative", self.sigma)));
        }
        if !self.rho.is_finite() {
            return Err(Error::Invalid("rho must be finite".into()));
        }
        let ok = match self.strategy {
            Strategy::NsWs => self.rho > 0.0,
            Strategy::NsLf => self.rho < 0.0,
            Strategy::Uniform => self.rho == 0.0,
            Strategy::FocalLike => self.gamma >= 0.0,
        };
        if !ok {
            return Err(Error::Invalid(format!(
                "strategy {:?} inconsistent with rho {}",
                self.strategy, self.rho
            )));
        }
        Ok(())
    }

    /// Whether every score in `(0, 1)` maps to a non-negative weight.
    pub fn is_nonnegative_on_unit_interval(&self) -> bool {
        self.sigma + self.rho.min(0.0) >= 0.0
    }

    /// Closed range every emitted weight falls in.
    pub fn bounds(&self) -> (f64, f64) {
        let (a, b) = (self.sigma, self.sigma + self.rho);
        (a.min(b), a.max(b))
    }

    fn map(&self, s: f64) -> f64 {
        match self.strategy {
            Strategy::NsWs | Strategy::NsLf | Strategy::Uniform => self.sigma + self.rho * s,
            Strategy::FocalLike => self.sigma + self.rho * (1.0 - s).powf(self.gamma),
        }
    }
}

/// Maps scores to weights. Fails rather than emitting a negative weight.
pub fn compute_weights(scores: &[f64], cfg: &WeightingConfig) -> Result<Vec<f64>> {
    scores
        .iter()
        .map(|&s| {
            let w = cfg.map(s);
            if !w.is_finite() {
                return Err(Error::Invalid(format!("weight for score {s} is not finite")));
            }
            if w < 0.0 {
                return Err(Error::NegativeWeight {
                    weight: w,
                    sigma: cfg.sigma,
                    rho: cfg.rho,
                    score: s,
                });
            }
            Ok(w)
        })
        .collect()
}

/// Evenly spaced scores in `(0, 1)`, largest first: `(n - r - 0.5) / n`.
pub fn simulated_scores(n: usize) -> Vec<f64> {
    (0..n).map(|r| (n - r) as f64 / n as f64 - 0.5 / n as f64).collect()
}

/// `(rank, weight)` pairs for the given scores sorted in descending order.
pub fn weight_curve_from_scores(scores: &[f64], cfg: &WeightingConfig) -> Result<Vec<(usize, f64)>> {
    let mut sorted = scores.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    Ok(compute_weights(&sorted, cfg)?.into_iter().enumerate().collect())
}

/// Weight curve over `n` evenly spaced simulated scores.
pub fn weight_curve(n: usize, cfg: &WeightingConfig) -> Result<Vec<(usize, f64)>> {
    if n == 0 {
        return Err(Error::Invalid("weight curve needs at least one sample".into()));
    }
    weight_curve_from_scores(&simulated_scores(n), cfg)
}

pub fn weight_curve_csv(curve: &[(usize, f64)]) -> String {
    let mut out = String::from("rank,weight\n");
    for (r, w) in curve {
        out.push_str(&format!("{r},{w}\n"));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn examples() {
        let w = compute_weights(&[0.25], &WeightingConfig::affine(0.7, 1.0)).unwrap();
        assert!((w[0] - 0.95).abs() < 1e-15);
        let w = compute_weights(&[0.1, 0.9], &WeightingConfig::affine(0.8, 0.0)).unwrap();
        assert_eq!(w, vec![0.8, 0.8]);
        let w = compute_weights(&[0.5], &WeightingConfig::affine(2.5, -1.0)).unwrap();
        assert_eq!(w, vec![2.0]);
    }

    #[test]
    fn negative_weight_is_an_error() {
        let cfg = WeightingConfig::affine(0.2, -1.0);
        assert!(matches!(
            compute_weights(&[0.5], &cfg),
            Err(Error::NegativeWeight { .. })
        ));
        assert!(!cfg.is_nonnegative_on_unit_interval());
    }

    #[test]
    fn validation() {
        assert!(WeightingConfig::affine(-0.1, 1.0).validate().is_err());
        let mut c = WeightingConfig::affine(1.0, 1.0);
        c.strategy = super::Strategy::NsLf;
        assert!(c.validate().is_err());
        assert!(WeightingConfig::affine(1.0, -1.0).validate().is_ok());
    }

    #[test]
    fn curves_are_monotone() {
        let ws = weight_curve(50, &WeightingConfig::affine(0.5, 1.0)).unwrap();
        assert!(ws.windows(2).all(|p| p[0].1 >= p[1].1));
        let lf = weight_curve(50, &WeightingConfig::affine(1.5, -1.0)).unwrap();
        assert!(lf.windows(2).all(|p| p[0].1 <= p[1].1));
    }

    #[test]
    fn unfloored_curve_approaches_zero() {
        let cfg = WeightingConfig::affine(0.0, 1.0);
        let small = weight_curve(10, &cfg).unwrap().last().unwrap().1;
        let smaller = weight_curve(10_000, &cfg).unwrap().last().unwrap().1;
        assert!(smaller < small);
        assert!(smaller <= 1e-4);
    }

    #[test]
    fn focal_like_in_bounds() {
        let cfg = WeightingConfig {
            strategy: super::Strategy::FocalLike,
            sigma: 0.5,
            rho: 1.0,
            gamma: 2.0,
        };
        let w = compute_weights(&[0.0, 0.5, 1.0], &cfg).unwrap();
        assert_eq!(w, vec![1.5, 0.75, 0.5]);
    }

    proptest! {
        #[test]
        fn affine_order_and_bounds(sigma in 0.0f64..3.0, rho in -1.0f64..2.0, a in 0.001f64..0.999, b in 0.001f64..0.999) {
            let sigma = sigma.max(-rho);
            let cfg = WeightingConfig::affine(sigma, rho);
            let w = compute_weights(&[a, b], &cfg).unwrap();
            let (lo, hi) = cfg.bounds();
            prop_assert!(w.iter().all(|&x| x >= lo && x <= hi));
            if rho > 0.0 {
                prop_assert_eq!(a > b, w[0] > w[1]);
            } else if rho < 0.0 {
                prop_assert_eq!(a > b, w[0] < w[1]);
            }
        }

        #[test]
        fn full_group_mean_weight(m in 2usize..9, raw in proptest::collection::vec(0.01f64..1.0, 8), rho in -1.0f64..1.0) {
            let s = crate::nscore::normalize_scores(&raw[..m]);
            let cfg = WeightingConfig::affine(1.0, rho);
            let w = compute_weights(&s, &cfg).unwrap();
            let mean = w.iter().sum::<f64>() / m as f64;
            prop_assert!((mean - (1.0 + rho / m as f64)).abs() <= 1e-12);
        }
    }
}
