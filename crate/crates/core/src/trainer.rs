//! Training loop: per-step group scoring, weighted loss, SGD with momentum and
//! a step-decay schedule, plus evaluation.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::analysis;
use crate::data::{epoch_order, Dataset, SamplerConfig, Splits};
use crate::error::{Error, Result};
use crate::imageops::GridLayout;
use crate::model::{batch_losses, Classifier, LossConfig};
use crate::nscore::{batch_ns_scores, Normalization, NsResult};
use crate::seed::{self, Stream};
use crate::tape::{Tape, Var};
use crate::tensor::{self, Tensor};
use crate::weighting::{compute_weights, WeightingConfig};

const EVAL_CHUNK: usize = 256;

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub epochs: usize,
    pub lr: f64,
    pub momentum: f64,
    /// `(epoch, factor)`: from `epoch` on the rate is multiplied by `factor`.
    pub milestones: Vec<(usize, f64)>,
    pub layout: GridLayout,
    pub weighting: WeightingConfig,
    pub sampler: SamplerConfig,
    pub loss: LossConfig,
    pub seed: u64,
    /// Compute scores even when the strategy ignores them.
    pub track_scores: bool,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Invalid(format!("learning rate {} must be positive", self.lr)));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Invalid(format!("momentum {} outside [0, 1)", self.momentum)));
        }
        if self.epochs == 0 {
            return Err(Error::Invalid("epochs must be positive".into()));
        }
        let m = self.layout.group_size();
        if m < 2 {
            return Err(Error::Invalid("group size must be at least 2".into()));
        }
        if self.batch_size < m {
            return Err(Error::Invalid(format!(
                "batch size {} smaller than group size {m}",
                self.batch_size
            )));
        }
        if self.milestones.iter().any(|&(_, f)| !(f > 0.0 && f.is_finite())) {
            return Err(Error::Invalid("milestone factors must be positive".into()));
        }
        self.weighting.validate()?;
        if !self.weighting.is_nonnegative_on_unit_interval() {
            return Err(Error::Invalid(format!(
                "sigma {} with rho {} admits negative weights",
                self.weighting.sigma, self.weighting.rho
            )));
        }
        self.loss.validate()
    }

    pub fn lr_at(&self, epoch: usize) -> f64 {
        self.milestones
            .iter()
            .filter(|&&(e, _)| e <= epoch)
            .fold(self.lr, |lr, &(_, f)| lr * f)
    }

    fn scores_needed(&self) -> bool {
        self.weighting.strategy.uses_scores() || self.track_scores
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Train,
    Test,
}

impl Phase {
    pub fn as_str(&self) -> &'static str {
        match self {
            Phase::Train => "train",
            Phase::Test => "test",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricsRecord {
    pub epoch: usize,
    pub phase: Phase,
    pub mean_loss: f64,
    pub accuracy: f64,
    /// `None` for classes absent from the split.
    pub per_class_accuracy: Vec<Option<f64>>,
    /// Mean normalized score of grouped samples per class; `None` when not scored.
    pub per_class_ns_score: Vec<Option<f64>>,
    pub wall_seconds: f64,
    pub ns_seconds: f64,
    /// Per-sample forward passes through the trained network.
    pub train_forward: usize,
    /// Composite forward passes spent on scoring.
    pub ns_forward: usize,
}

impl MetricsRecord {
    /// Mean of the per-class accuracies over present classes.
    pub fn balanced_accuracy(&self) -> f64 {
        let present: Vec<f64> = self.per_class_accuracy.iter().flatten().copied().collect();
        present.iter().sum::<f64>() / present.len().max(1) as f64
    }

    /// Scoring time relative to the rest of the epoch.
    pub fn ns_overhead(&self) -> f64 {
        let base = self.wall_seconds - self.ns_seconds;
        if base > 0.0 {
            self.ns_seconds / base
        } else {
            0.0
        }
    }
}

/// Weighted mean `(1/B) sum_i w_i l_i` on the tape.
pub fn weighted_batch_loss(tape: &mut Tape, losses: Var, weights: &[f64]) -> Result<Var> {
    let n = tape.value(losses)?.len();
    if n != weights.len() {
        return Err(Error::shape(
            "weighted_batch_loss",
            format!("{n} losses, {} weights", weights.len()),
        ));
    }
    let w = tape.constant(Tensor::new(vec![n], weights.to_vec())?);
    let wl = tape.mul(losses, w)?;
    let total = tape.sum(wl)?;
    tape.scale(total, 1.0 / n as f64)
}

/// Untaped counterpart of [`weighted_batch_loss`].
pub fn weighted_mean(losses: &[f64], weights: &[f64]) -> Result<f64> {
    if losses.len() != weights.len() || losses.is_empty() {
        return Err(Error::shape(
            "weighted_mean",
            format!("{} losses, {} weights", losses.len(), weights.len()),
        ));
    }
    Ok(losses.iter().zip(weights).map(|(l, w)| w * l).sum::<f64>() / losses.len() as f64)
}

/// `v <- mu v + g; theta <- theta - eta v`, in place.
pub fn sgd_momentum_step(params: &mut [Tensor], grads: &[Tensor], velocity: &mut [Tensor], lr: f64, momentum: f64) -> Result<()> {
    if params.len() != grads.len() || params.len() != velocity.len() {
        return Err(Error::shape("sgd_momentum_step", "parameter, gradient and velocity counts differ"));
    }
    for ((p, g), v) in params.iter_mut().zip(grads).zip(velocity.iter_mut()) {
        if p.shape() != g.shape() || p.shape() != v.shape() {
            return Err(Error::shape(
                "sgd_momentum_step",
                format!("{:?} vs {:?} vs {:?}", p.shape(), g.shape(), v.shape()),
            ));
        }
        for ((pv, &gv), vv) in p.data_mut().iter_mut().zip(g.data()).zip(v.data_mut()) {
            *vv = momentum * *vv + gv;
            *pv -= lr * *vv;
        }
    }
    Ok(())
}

/// SGD with momentum, velocity starting at zero.
#[derive(Clone, Debug)]
pub struct Sgd {
    pub momentum: f64,
    velocity: Vec<Tensor>,
}

impl Sgd {
    pub fn new(params: &[Tensor], momentum: f64) -> Self {
        Sgd {
            momentum,
            velocity: params.iter().map(|p| Tensor::zeros(p.shape())).collect(),
        }
    }

    pub fn step(&mut self, params: &mut [Tensor], grads: &[Tensor], lr: f64) -> Result<()> {
        sgd_momentum_step(params, grads, &mut self.velocity, lr, self.momentum)
    }
}

/// Evaluation summary for one split.
#[derive(Clone, Debug, PartialEq)]
pub struct Evaluation {
    pub mean_loss: f64,
    pub accuracy: f64,
    pub per_class_accuracy: Vec<Option<f64>>,
    pub predictions: Vec<usize>,
}

fn flatten_normalized(data: &Dataset, norm: &Normalization) -> Result<Vec<f64>> {
    let mut rows = Vec::with_capacity(data.len() * data.shape.iter().product::<usize>());
    for s in &data.samples {
        rows.extend_from_slice(norm.apply(&s.image)?.data());
    }
    Ok(rows)
}

fn per_class_accuracy(predictions: &[usize], labels: &[usize], classes: usize) -> (f64, Vec<Option<f64>>) {
    let mut hit = vec![0usize; classes];
    let mut seen = vec![0usize; classes];
    for (&p, &y) in predictions.iter().zip(labels) {
        seen[y] += 1;
        hit[y] += usize::from(p == y);
    }
    let total: usize = hit.iter().sum();
    let per = hit
        .iter()
        .zip(&seen)
        .map(|(&h, &n)| (n > 0).then(|| h as f64 / n as f64))
        .collect();
    (total as f64 / predictions.len().max(1) as f64, per)
}

/// Cross-entropy and argmax accuracy with no weighting. Ties go to the
/// smallest class index.
pub fn evaluate(model: &Classifier, data: &Dataset, norm: &Normalization) -> Result<Evaluation> {
    if data.is_empty() {
        return Err(Error::Invalid("cannot evaluate an empty dataset".into()));
    }
    let d = model.config().input_dim();
    let k = model.config().classes;
    if data.classes != k {
        return Err(Error::Invalid(format!("dataset has {} classes, model {k}", data.classes)));
    }
    let rows = flatten_normalized(data, norm)?;
    let labels = data.labels();
    let mut loss = 0.0;
    let mut predictions = Vec::with_capacity(data.len());
    for (ci, chunk) in labels.chunks(EVAL_CHUNK).enumerate() {
        let start = ci * EVAL_CHUNK * d;
        let x = Tensor::new(vec![chunk.len(), d], rows[start..start + chunk.len() * d].to_vec())?;
        let z = model.logits_batch(&x)?;
        let lp = tensor::log_softmax_rows(&z)?;
        for (r, &y) in chunk.iter().enumerate() {
            loss -= lp.data()[r * k + y];
            predictions.push(tensor::argmax(&z.data()[r * k..(r + 1) * k]));
        }
    }
    let (accuracy, per_class_accuracy) = per_class_accuracy(&predictions, &labels, k);
    Ok(Evaluation {
        mean_loss: loss / data.len() as f64,
        accuracy,
        per_class_accuracy,
        predictions,
    })
}

/// Scores of one training step, handed to the observer.
#[derive(Clone, Debug)]
pub struct StepScores<'a> {
    pub epoch: usize,
    pub step: usize,
    /// Dataset indices of the batch, in batch order.
    pub indices: &'a [usize],
    pub labels: &'a [usize],
    pub scores: &'a NsResult,
    pub weights: &'a [f64],
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub model: Classifier,
    pub metrics: Vec<MetricsRecord>,
    pub normalization: Normalization,
}

pub fn train(cfg: &TrainConfig, splits: &Splits, model: Classifier) -> Result<TrainOutcome> {
    train_with_observer(cfg, splits, model, &mut |_| {})
}

fn diverged(epoch: usize, step: usize, quantity: &'static str) -> impl Fn(Error) -> Error {
    move |e| match e {
        Error::NonFinite { .. } | Error::LogDomain { .. } => Error::TrainingDiverged { epoch, step, quantity },
        other => other,
    }
}

/// Runs the full schedule. Scores are computed from the pre-update parameters
/// of each step and never enter the loss tape except as constant weights.
pub fn train_with_observer(
    cfg: &TrainConfig,
    splits: &Splits,
    mut model: Classifier,
    observer: &mut dyn FnMut(&StepScores<'_>),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let train = &splits.train;
    if train.is_empty() || splits.test.is_empty() {
        return Err(Error::Invalid("train and test splits must be nonempty".into()));
    }
    let mc = model.config().clone();
    if train.shape != mc.input_shape() || train.classes != mc.classes {
        return Err(Error::Invalid(format!(
            "dataset {:?} with {} classes does not fit model {:?} with {}",
            train.shape,
            train.classes,
            mc.input_shape(),
            mc.classes
        )));
    }
    let k = mc.classes;
    let d = mc.input_dim();
    let norm = train.channel_stats();
    let rows = flatten_normalized(train, &norm)?;
    let labels = train.labels();
    let with_scores = cfg.scores_needed();
    let mut sgd = Sgd::new(model.params(), cfg.momentum);
    let mut metrics = Vec::with_capacity(2 * cfg.epochs);

    for epoch in 0..cfg.epochs {
        let started = Instant::now();
        let mut ns_seconds = 0.0;
        let lr = cfg.lr_at(epoch);
        let mut rng = seed::rng(cfg.seed, Stream::Shuffle, epoch as u64);
        let order = epoch_order(&labels, k, &cfg.sampler, epoch, cfg.epochs, &mut rng)?;

        let mut loss_sum = 0.0;
        let mut predictions = Vec::with_capacity(order.len());
        let mut seen_labels = Vec::with_capacity(order.len());
        let mut score_sum = vec![0.0; k];
        let mut score_n = vec![0usize; k];
        let (mut train_forward, mut ns_forward) = (0, 0);

        for (step, idx) in order.chunks(cfg.batch_size).enumerate() {
            let b = idx.len();
            let ys: Vec<usize> = idx.iter().map(|&i| labels[i]).collect();

            let weights = if with_scores {
                let t = Instant::now();
                let images: Vec<&Tensor> = idx.iter().map(|&i| &train.samples[i].image).collect();
                let ns = batch_ns_scores(&images, &ys, &model, cfg.layout, &norm)
                    .map_err(diverged(epoch, step, "score"))?;
                ns_seconds += t.elapsed().as_secs_f64();
                ns_forward += ns.inferences;
                for ((&y, &s), g) in ys.iter().zip(&ns.score).zip(&ns.group) {
                    if g.is_some() {
                        score_sum[y] += s;
                        score_n[y] += 1;
                    }
                }
                let w = compute_weights(&ns.score, &cfg.weighting)?;
                observer(&StepScores {
                    epoch,
                    step,
                    indices: idx,
                    labels: &ys,
                    scores: &ns,
                    weights: &w,
                });
                w
            } else {
                vec![cfg.weighting.sigma; b]
            };

            let mut x = Vec::with_capacity(b * d);
            for &i in idx {
                x.extend_from_slice(&rows[i * d..(i + 1) * d]);
            }
            let x = Tensor::new(vec![b, d], x)?;
            let mut tape = Tape::new();
            let vars = model.register(&mut tape);
            let logits = model.forward_taped(&mut tape, &vars, &x).map_err(diverged(epoch, step, "logits"))?;
            train_forward += b;
            let z = tape.value(logits)?;
            for r in 0..b {
                predictions.push(tensor::argmax(&z.data()[r * k..(r + 1) * k]));
            }
            let losses = batch_losses(&mut tape, logits, &ys, &cfg.loss).map_err(diverged(epoch, step, "loss"))?;
            loss_sum += tape.value(losses)?.data().iter().sum::<f64>();
            let loss = weighted_batch_loss(&mut tape, losses, &weights).map_err(diverged(epoch, step, "loss"))?;
            if !tape.value(loss)?.item()?.is_finite() {
                return Err(Error::TrainingDiverged { epoch, step, quantity: "loss" });
            }
            let grads = tape.backward(loss).map_err(diverged(epoch, step, "gradient"))?.into_vec();
            sgd.step(model.params_mut(), &grads, lr)?;
            if model.params().iter().any(|p| p.data().iter().any(|v| !v.is_finite())) {
                return Err(Error::TrainingDiverged { epoch, step, quantity: "parameters" });
            }
            seen_labels.extend(ys);
        }

        let (accuracy, per_class) = per_class_accuracy(&predictions, &seen_labels, k);
        let per_class_ns_score: Vec<Option<f64>> = score_sum
            .iter()
            .zip(&score_n)
            .map(|(&s, &n)| (n > 0).then(|| s / n as f64))
            .collect();
        let wall_seconds = started.elapsed().as_secs_f64();
        metrics.push(MetricsRecord {
            epoch,
            phase: Phase::Train,
            mean_loss: loss_sum / seen_labels.len() as f64,
            accuracy,
            per_class_accuracy: per_class,
            per_class_ns_score,
            wall_seconds,
            ns_seconds,
            train_forward,
            ns_forward,
        });

        let t = Instant::now();
        let ev = evaluate(&model, &splits.test, &norm)?;
        metrics.push(MetricsRecord {
            epoch,
            phase: Phase::Test,
            mean_loss: ev.mean_loss,
            accuracy: ev.accuracy,
            per_class_accuracy: ev.per_class_accuracy,
            per_class_ns_score: vec![None; k],
            wall_seconds: t.elapsed().as_secs_f64(),
            ns_seconds: 0.0,
            train_forward: 0,
            ns_forward: 0,
        });
    }
    Ok(TrainOutcome {
        model,
        metrics,
        normalization: norm,
    })
}

/// Result of comparing the fitness ordering `h = M - l` with the risk ordering.
#[derive(Clone, Debug, PartialEq)]
pub struct DualityReport {
    pub risk: Vec<f64>,
    pub fitness: Vec<f64>,
    /// Spearman correlation between the two; `-1` when the orders are reversed.
    pub spearman: f64,
    /// Every pair ordered oppositely (ties kept as ties).
    pub reversed: bool,
    pub all_fitness_positive: bool,
}

/// Mean per-sample risk and mean per-sample fitness `M - l_i` of each setting.
pub fn duality_check(models: &[Classifier], data: &Dataset, norm: &Normalization, big_m: f64) -> Result<DualityReport> {
    if models.len() < 2 {
        return Err(Error::Invalid("need at least two parameter settings".into()));
    }
    let mut risk = Vec::with_capacity(models.len());
    let mut fitness = Vec::with_capacity(models.len());
    let mut all_fitness_positive = true;
    let labels = data.labels();
    let rows = flatten_normalized(data, norm)?;
    let n = data.len();
    for model in models {
        let d = model.config().input_dim();
        let k = model.config().classes;
        let x = Tensor::new(vec![n, d], rows.clone())?;
        let lp = tensor::log_softmax_rows(&model.logits_batch(&x)?)?;
        let losses: Vec<f64> = labels.iter().enumerate().map(|(r, &y)| -lp.data()[r * k + y]).collect();
        all_fitness_positive &= losses.iter().all(|&l| big_m - l > 0.0);
        risk.push(losses.iter().sum::<f64>() / n as f64);
        fitness.push(losses.iter().map(|&l| big_m - l).sum::<f64>() / n as f64);
    }
    let mut reversed = true;
    for i in 0..risk.len() {
        for j in 0..risk.len() {
            let r = risk[i].total_cmp(&risk[j]);
            let f = fitness[i].total_cmp(&fitness[j]);
            reversed &= r == f.reverse();
        }
    }
    let spearman = analysis::spearman(&risk, &fitness).unwrap_or(f64::NAN);
    Ok(DualityReport {
        risk,
        fitness,
        spearman,
        reversed,
        all_fitness_positive,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{LabeledSample, SamplerKind};
    use crate::model::ClassifierConfig;

    #[test]
    fn weighted_loss_examples() {
        assert_eq!(weighted_mean(&[0.5, 9.9], &[2.0, 0.0]).unwrap(), 0.5);
        let l = [0.3, 1.7, 0.25];
        assert_eq!(weighted_mean(&l, &[1.0; 3]).unwrap(), l.iter().sum::<f64>() / 3.0);
        assert!(weighted_mean(&l, &[1.0; 2]).is_err());

        let mut tape = Tape::new();
        let v = tape.constant(Tensor::from_vec(vec![0.5, 9.9]).unwrap());
        let w = weighted_batch_loss(&mut tape, v, &[2.0, 0.0]).unwrap();
        assert_eq!(tape.value(w).unwrap().item().unwrap(), 0.5);
        assert!(weighted_batch_loss(&mut tape, v, &[1.0]).is_err());
    }

    #[test]
    fn sgd_examples() {
        let mut p = vec![Tensor::from_vec(vec![1.0, -2.0]).unwrap()];
        let g = vec![Tensor::from_vec(vec![0.5, 0.25]).unwrap()];
        let mut v = vec![Tensor::zeros(&[2])];
        sgd_momentum_step(&mut p, &g, &mut v, 0.1, 0.0).unwrap();
        assert_eq!(p[0].data(), &[0.95, -2.025]);

        let before = p.clone();
        let mut v = vec![Tensor::zeros(&[2])];
        sgd_momentum_step(&mut p, &[Tensor::zeros(&[2])], &mut v, 0.1, 0.9).unwrap();
        assert_eq!(p, before);

        assert!(sgd_momentum_step(&mut p, &[Tensor::zeros(&[3])], &mut v, 0.1, 0.9).is_err());
    }

    #[test]
    fn two_momentum_steps_on_quadratic() {
        // f(x) = x^2 / 2, g = x.
        let (lr, mu, x0) = (0.1, 0.9, 1.0);
        let mut p = vec![Tensor::from_vec(vec![x0]).unwrap()];
        let mut sgd = Sgd::new(&p, mu);
        for _ in 0..2 {
            let g = vec![p[0].clone()];
            sgd.step(&mut p, &g, lr).unwrap();
        }
        let v1 = x0;
        let x1 = x0 - lr * v1;
        let v2 = mu * v1 + x1;
        let x2 = x1 - lr * v2;
        assert!((p[0].data()[0] - x2).abs() < 1e-15);
        assert!((x2 - 0.72).abs() < 1e-12);
    }

    #[test]
    fn lr_schedule() {
        let cfg = tiny_config(0, WeightingConfig::uniform());
        let cfg = TrainConfig {
            milestones: vec![(2, 0.1), (4, 0.1)],
            ..cfg
        };
        assert_eq!(cfg.lr_at(0), cfg.lr);
        assert_eq!(cfg.lr_at(2), cfg.lr * 0.1);
        assert_eq!(cfg.lr_at(5), cfg.lr * 0.1 * 0.1);
    }

    fn sample(v: [f64; 4], y: usize) -> LabeledSample {
        LabeledSample {
            image: Tensor::new(vec![2, 2, 1], v.to_vec()).unwrap(),
            label: y,
            original_label: y,
        }
    }

    fn toy() -> Splits {
        let mut s = Vec::new();
        for i in 0..8 {
            let a = i as f64 * 0.05;
            s.push(sample([0.9 - a, 0.8, 0.1, 0.2 + a], 0));
            s.push(sample([0.1 + a, 0.2, 0.9, 0.8 - a], 1));
        }
        let d = Dataset::new(2, [2, 2, 1], s).unwrap();
        Splits {
            train: d.clone(),
            test: d,
        }
    }

    fn tiny_model() -> Classifier {
        Classifier::new(ClassifierConfig {
            height: 2,
            width: 2,
            channels: 1,
            hidden: vec![],
            conv: None,
            classes: 2,
            init_seed: 3,
        })
        .unwrap()
    }

    fn tiny_config(epochs: usize, weighting: WeightingConfig) -> TrainConfig {
        TrainConfig {
            batch_size: 16,
            epochs: epochs.max(1),
            lr: 0.5,
            momentum: 0.0,
            milestones: vec![],
            layout: GridLayout::new(1, 2).unwrap(),
            weighting,
            sampler: SamplerConfig::default(),
            loss: LossConfig::cross_entropy(),
            seed: 11,
            track_scores: false,
        }
    }

    #[test]
    fn one_step_decreases_loss() {
        let splits = toy();
        let mut model = tiny_model();
        model.zero_output_layer();
        let norm = splits.train.channel_stats();
        let before = evaluate(&model, &splits.train, &norm).unwrap().mean_loss;
        assert!((before - 2f64.ln()).abs() < 1e-12);
        let out = train(&tiny_config(1, WeightingConfig::uniform()), &splits, model).unwrap();
        let after = evaluate(&out.model, &splits.train, &norm).unwrap().mean_loss;
        assert!(after < before, "{after} >= {before}");
    }

    #[test]
    fn ns_forward_count() {
        let splits = toy();
        let cfg = TrainConfig {
            batch_size: 6,
            layout: GridLayout::new(2, 2).unwrap(),
            ..tiny_config(1, WeightingConfig::affine(1.0, 1.0))
        };
        let out = train(&cfg, &splits, tiny_model()).unwrap();
        // Batches of 6, 6, 4 give 1 + 1 + 1 composites.
        assert_eq!(out.metrics[0].ns_forward, 3);
        assert_eq!(out.metrics[0].train_forward, 16);
    }

    #[test]
    fn evaluate_ties_and_recombination() {
        let splits = toy();
        let mut model = tiny_model();
        model.zero_output_layer();
        let norm = splits.test.channel_stats();
        let ev = evaluate(&model, &splits.test, &norm).unwrap();
        assert!(ev.predictions.iter().all(|&p| p == 0));
        assert_eq!(ev.accuracy, 0.5);
        assert_eq!(ev.per_class_accuracy, vec![Some(1.0), Some(0.0)]);
    }

    #[test]
    fn duality_small() {
        let splits = toy();
        let norm = splits.train.channel_stats();
        let mut a = tiny_model();
        a.zero_output_layer();
        let b = train(&tiny_config(3, WeightingConfig::uniform()), &splits, tiny_model()).unwrap().model;
        for m in [1.0, 10.0, 100.0] {
            let r = duality_check(&[a.clone(), b.clone(), a.clone()], &splits.train, &norm, m).unwrap();
            assert!(r.reversed);
            assert_eq!(r.fitness[0], r.fitness[2]);
        }
    }

    #[test]
    fn validation_errors() {
        let mut c = tiny_config(1, WeightingConfig::uniform());
        c.batch_size = 1;
        assert!(c.validate().is_err());
        let mut c = tiny_config(1, WeightingConfig::affine(0.2, -1.0));
        assert!(c.validate().is_err());
        c.weighting = WeightingConfig::affine(1.0, -1.0);
        c.momentum = 1.0;
        assert!(c.validate().is_err());
    }

    #[test]
    fn class_sampler_runs() {
        let cfg = TrainConfig {
            sampler: SamplerConfig {
                kind: SamplerKind::Pbs,
                total_epochs: None,
            },
            ..tiny_config(2, WeightingConfig::affine(2.5, -1.0))
        };
        let out = train(&cfg, &toy(), tiny_model()).unwrap();
        assert_eq!(out.metrics.len(), 4);
        assert!(out.metrics[0].per_class_ns_score.iter().all(Option::is_some));
    }
}
