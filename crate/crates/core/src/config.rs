//! Experiment configuration in TOML.
//!
//! Defaults:
//!
//! | key                   | default                    |
//! |-----------------------|----------------------------|
//! | `label`               | `"run"`                    |
//! | `seeds`               | `[2024, 2025, 2026]`       |
//! | `output_dir`          | `"runs"`                   |
//! | `model.hidden`        | `[64]`                     |
//! | `train.batch_size`    | `128`                      |
//! | `train.epochs`        | `164`                      |
//! | `train.lr`            | `0.1`                      |
//! | `train.momentum`      | `0.9`                      |
//! | `train.milestones`    | `[[81, 0.1], [122, 0.1]]`  |
//! | `train.layout`        | `"2x2"` (or from `group_size`) |
//! | `train.track_scores`  | `false`                    |
//! | `weighting.strategy`  | `"uniform"`                |
//! | `weighting.sigma`     | `1.0`                      |
//! | `weighting.rho`       | `1` for `ns_ws`/`focal_like`, `-1` for `ns_lf`, `0` for `uniform` |
//! | `weighting.gamma`     | `2.0`                      |
//! | `sampler.kind`        | `"instance_uniform"`       |
//! | `loss.kind`           | `"cross_entropy"`          |

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::data::{DatasetRecipe, SamplerConfig};
use crate::error::{Error, Result};
use crate::imageops::GridLayout;
use crate::model::{ClassifierConfig, ConvConfig, LossConfig};
use crate::seed::{self, Stream};
use crate::trainer::TrainConfig;
use crate::weighting::{Strategy, WeightingConfig};

pub const DEFAULT_SEEDS: [u64; 3] = [2024, 2025, 2026];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    #[serde(default = "default_hidden")]
    pub hidden: Vec<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub conv: Option<ConvConfig>,
}

fn default_hidden() -> Vec<usize> {
    vec![64]
}

impl Default for ModelSection {
    fn default() -> Self {
        ModelSection {
            hidden: default_hidden(),
            conv: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TrainSection {
    pub batch_size: usize,
    pub epochs: usize,
    pub lr: f64,
    pub momentum: f64,
    pub milestones: Vec<(usize, f64)>,
    pub group_size: usize,
    pub layout: GridLayout,
    pub track_scores: bool,
}

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawTrain {
    batch_size: Option<usize>,
    epochs: Option<usize>,
    lr: Option<f64>,
    momentum: Option<f64>,
    milestones: Option<Vec<(usize, f64)>>,
    group_size: Option<usize>,
    layout: Option<GridLayout>,
    track_scores: Option<bool>,
}

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawWeighting {
    strategy: Option<Strategy>,
    sigma: Option<f64>,
    rho: Option<f64>,
    gamma: Option<f64>,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    label: Option<String>,
    seeds: Option<Vec<u64>>,
    output_dir: Option<PathBuf>,
    dataset: DatasetRecipe,
    #[serde(default)]
    model: ModelSection,
    #[serde(default)]
    train: RawTrain,
    #[serde(default)]
    weighting: RawWeighting,
    #[serde(default)]
    sampler: SamplerConfig,
    #[serde(default)]
    loss: LossConfig,
}

/// A fully resolved experiment.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ExperimentConfig {
    pub label: String,
    pub seeds: Vec<u64>,
    pub output_dir: PathBuf,
    pub dataset: DatasetRecipe,
    pub model: ModelSection,
    pub train: TrainSection,
    pub weighting: WeightingConfig,
    pub sampler: SamplerConfig,
    pub loss: LossConfig,
}

/// Square-ish layout for a group size: 2 -> 1x2, 4 -> 2x2, 8 -> 2x4, 16 -> 4x4.
pub fn default_layout(m: usize) -> Result<GridLayout> {
    let mut r = (m as f64).sqrt() as usize;
    while r > 1 && m % r != 0 {
        r -= 1;
    }
    GridLayout::new(r.max(1), m / r.max(1))
}

fn default_rho(strategy: Strategy) -> f64 {
    match strategy {
        Strategy::NsWs | Strategy::FocalLike => 1.0,
        Strategy::NsLf => -1.0,
        Strategy::Uniform => 0.0,
    }
}

fn resolve_layout(group_size: Option<usize>, layout: Option<GridLayout>) -> Result<GridLayout> {
    match (group_size, layout) {
        (Some(m), Some(l)) if l.group_size() != m => Err(Error::Config(format!(
            "layout {l} holds {} samples but group_size is {m}",
            l.group_size()
        ))),
        (_, Some(l)) => Ok(l),
        (Some(m), None) => default_layout(m),
        (None, None) => GridLayout::new(2, 2),
    }
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let raw: RawConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        let t = raw.train;
        let strategy = raw.weighting.strategy.unwrap_or(Strategy::Uniform);
        let cfg = ExperimentConfig {
            label: raw.label.unwrap_or_else(|| "run".into()),
            seeds: raw.seeds.unwrap_or_else(|| DEFAULT_SEEDS.to_vec()),
            output_dir: raw.output_dir.unwrap_or_else(|| "runs".into()),
            dataset: raw.dataset,
            model: raw.model,
            train: {
                let layout = resolve_layout(t.group_size, t.layout)?;
                TrainSection {
                    batch_size: t.batch_size.unwrap_or(128),
                    epochs: t.epochs.unwrap_or(164),
                    lr: t.lr.unwrap_or(0.1),
                    momentum: t.momentum.unwrap_or(0.9),
                    milestones: t.milestones.unwrap_or_else(|| vec![(81, 0.1), (122, 0.1)]),
                    group_size: layout.group_size(),
                    layout,
                    track_scores: t.track_scores.unwrap_or(false),
                }
            },
            weighting: WeightingConfig {
                strategy,
                sigma: raw.weighting.sigma.unwrap_or(1.0),
                rho: raw.weighting.rho.unwrap_or_else(|| default_rho(strategy)),
                gamma: raw.weighting.gamma.unwrap_or(2.0),
            },
            sampler: raw.sampler,
            loss: raw.loss,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(Error::Config("seed list is empty".into()));
        }
        if self.train.layout.group_size() != self.train.group_size {
            return Err(Error::Config(format!(
                "layout {} does not hold group_size {}",
                self.train.layout, self.train.group_size
            )));
        }
        self.dataset.validate().map_err(|e| Error::Config(e.to_string()))?;
        self.classifier_config(self.seeds[0])
            .validate()
            .map_err(|e| Error::Config(e.to_string()))?;
        self.train_config(self.seeds[0])
            .validate()
            .map_err(|e| Error::Config(e.to_string()))
    }

    pub fn train_config(&self, seed: u64) -> TrainConfig {
        let t = &self.train;
        TrainConfig {
            batch_size: t.batch_size,
            epochs: t.epochs,
            lr: t.lr,
            momentum: t.momentum,
            milestones: t.milestones.clone(),
            layout: t.layout,
            weighting: self.weighting,
            sampler: self.sampler,
            loss: self.loss,
            seed,
            track_scores: t.track_scores,
        }
    }

    /// Model shape from the dataset, initialization from the run seed.
    pub fn classifier_config(&self, seed: u64) -> ClassifierConfig {
        let d = &self.dataset;
        ClassifierConfig {
            height: d.height,
            width: d.width,
            channels: d.channels,
            hidden: self.model.hidden.clone(),
            conv: self.model.conv,
            classes: d.classes,
            init_seed: seed::derive(seed, Stream::Init, 0),
        }
    }

    pub fn apply(&mut self, o: &Overrides) -> Result<()> {
        if let Some(s) = o.strategy {
            self.weighting.strategy = s;
            if o.rho.is_none() {
                let mag = if self.weighting.rho == 0.0 { 1.0 } else { self.weighting.rho.abs() };
                self.weighting.rho = default_rho(s) * mag;
            }
        }
        if let Some(v) = o.sigma {
            self.weighting.sigma = v;
        }
        if let Some(v) = o.rho {
            self.weighting.rho = v;
            if o.strategy.is_none() && self.weighting.strategy != Strategy::FocalLike {
                self.weighting.strategy = Strategy::from_rho(v);
            }
        }
        if o.group_size.is_some() || o.layout.is_some() {
            let l = resolve_layout(o.group_size, o.layout)?;
            self.train.layout = l;
            self.train.group_size = l.group_size();
        }
        if let Some(s) = &o.seeds {
            self.seeds = s.clone();
        }
        if let Some(d) = &o.output_dir {
            self.output_dir = d.clone();
        }
        if let Some(l) = &o.label {
            self.label = l.clone();
        }
        self.validate()
    }
}

/// Command-line overrides applied on top of a parsed config.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub strategy: Option<Strategy>,
    pub sigma: Option<f64>,
    pub rho: Option<f64>,
    pub group_size: Option<usize>,
    pub layout: Option<GridLayout>,
    pub seeds: Option<Vec<u64>>,
    pub output_dir: Option<PathBuf>,
    pub label: Option<String>,
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
[dataset]
kind = "synthetic_blobs"
classes = 3
height = 4
width = 4
channels = 1
counts = [20, 10, 5]

[weighting]
strategy = "ns_ws"
"#;

    #[test]
    fn minimal_defaults() {
        let c = ExperimentConfig::parse(MINIMAL).unwrap();
        assert_eq!(c.seeds, DEFAULT_SEEDS.to_vec());
        assert_eq!(c.train.batch_size, 128);
        assert_eq!(c.train.layout, GridLayout::new(2, 2).unwrap());
        assert_eq!(c.weighting.rho, 1.0);
        assert_eq!(c.weighting.sigma, 1.0);
        assert_eq!(c.model.hidden, vec![64]);
        assert_eq!(c.label, "run");
    }

    #[test]
    fn round_trip_is_fixed_point() {
        let c = ExperimentConfig::parse(MINIMAL).unwrap();
        let text = c.to_toml();
        let c2 = ExperimentConfig::parse(&text).unwrap();
        assert_eq!(c, c2);
        assert_eq!(text, c2.to_toml());
    }

    #[test]
    fn rejections() {
        let bad_sigma = MINIMAL.replace("strategy = \"ns_ws\"", "strategy = \"ns_ws\"\nsigma = -0.1");
        assert!(ExperimentConfig::parse(&bad_sigma).is_err());
        let ok = format!("{MINIMAL}\n[train]\ngroup_size = 4\nlayout = \"2x2\"\n");
        assert!(ExperimentConfig::parse(&ok).is_ok());
        let bad = format!("{MINIMAL}\n[train]\ngroup_size = 4\nlayout = \"1x2\"\n");
        assert!(ExperimentConfig::parse(&bad).is_err());
        let unknown = format!("{MINIMAL}\n[train]\nbatchsize = 4\n");
        assert!(ExperimentConfig::parse(&unknown).is_err());
        let small_batch = format!("{MINIMAL}\n[train]\nbatch_size = 2\n");
        assert!(ExperimentConfig::parse(&small_batch).is_err());
        let missing = "[weighting]\nstrategy = \"ns_ws\"\n";
        assert!(ExperimentConfig::parse(missing).is_err());
        let wrong_type = MINIMAL.replace("classes = 3", "classes = \"three\"");
        assert!(ExperimentConfig::parse(&wrong_type).is_err());
    }

    #[test]
    fn layouts_from_group_size() {
        assert_eq!(default_layout(2).unwrap().to_string(), "1x2");
        assert_eq!(default_layout(4).unwrap().to_string(), "2x2");
        assert_eq!(default_layout(8).unwrap().to_string(), "2x4");
        assert_eq!(default_layout(16).unwrap().to_string(), "4x4");
    }

    #[test]
    fn overrides() {
        let mut c = ExperimentConfig::parse(MINIMAL).unwrap();
        c.apply(&Overrides {
            strategy: Some(Strategy::NsLf),
            sigma: Some(2.5),
            group_size: Some(2),
            seeds: Some(vec![7]),
            ..Default::default()
        })
        .unwrap();
        assert_eq!(c.weighting.rho, -1.0);
        assert_eq!(c.train.layout.to_string(), "1x2");
        assert_eq!(c.seeds, vec![7]);
        assert!(c
            .apply(&Overrides {
                sigma: Some(0.5),
                ..Default::default()
            })
            .is_err());
    }
}
