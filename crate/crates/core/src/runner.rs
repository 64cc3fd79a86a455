//! Experiment runner: per-seed training with CSV artifacts, multi-seed
//! aggregation, parameter sweeps and analysis of existing logs.

use std::fmt::Write as _;
use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use crate::analysis;
use crate::config::ExperimentConfig;
use crate::data;
use crate::error::{Error, Result};
use crate::imageops::GridLayout;
use crate::model::Classifier;
use crate::trainer::{self, MetricsRecord, Phase, StepScores};
use crate::weighting::Strategy;

pub const METRICS_FILE: &str = "metrics.csv";
pub const TIMING_FILE: &str = "timing.csv";
pub const SCORES_FILE: &str = "scores.csv";
pub const COUNTS_FILE: &str = "class_counts.csv";
pub const CHECKPOINT_FILE: &str = "model.ckpt";
pub const AGGREGATE_FILE: &str = "aggregate.csv";

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// One row per (epoch, split). Wall-clock columns live in the timing file so
/// this file is reproducible byte for byte.
pub fn metrics_csv(records: &[MetricsRecord]) -> String {
    let k = records.first().map_or(0, |r| r.per_class_accuracy.len());
    let mut out = String::from("epoch,split,mean_loss,accuracy");
    for c in 0..k {
        write!(out, ",acc_class_{c}").unwrap();
    }
    for c in 0..k {
        write!(out, ",ns_class_{c}").unwrap();
    }
    out.push_str(",train_forward,ns_forward\n");
    for r in records {
        write!(out, "{},{},{},{}", r.epoch, r.phase.as_str(), r.mean_loss, r.accuracy).unwrap();
        for v in r.per_class_accuracy.iter().chain(&r.per_class_ns_score) {
            write!(out, ",{}", opt(*v)).unwrap();
        }
        writeln!(out, ",{},{}", r.train_forward, r.ns_forward).unwrap();
    }
    out
}

pub fn timing_csv(records: &[MetricsRecord]) -> String {
    let mut out = String::from("epoch,split,wall_seconds,ns_seconds,ns_overhead\n");
    for r in records {
        writeln!(
            out,
            "{},{},{},{},{}",
            r.epoch,
            r.phase.as_str(),
            r.wall_seconds,
            r.ns_seconds,
            r.ns_overhead()
        )
        .unwrap();
    }
    out
}

fn bad(path: &str, detail: impl Into<String>) -> Error {
    Error::Invalid(format!("{path}: {}", detail.into()))
}

fn parse_f64(s: &str, what: &str) -> Result<f64> {
    s.parse().map_err(|_| bad(what, format!("`{s}` is not a number")))
}

fn parse_opt(s: &str, what: &str) -> Result<Option<f64>> {
    if s.is_empty() {
        Ok(None)
    } else {
        parse_f64(s, what).map(Some)
    }
}

/// Reads a metrics file back. Timing fields come back as zero.
pub fn parse_metrics_csv(text: &str) -> Result<Vec<MetricsRecord>> {
    let mut lines = text.lines();
    let header: Vec<&str> = lines.next().ok_or_else(|| bad(METRICS_FILE, "empty"))?.split(',').collect();
    let k = header.iter().filter(|h| h.starts_with("acc_class_")).count();
    if header.len() != 6 + 2 * k {
        return Err(bad(METRICS_FILE, "unexpected header"));
    }
    lines
        .filter(|l| !l.is_empty())
        .map(|line| {
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != header.len() {
                return Err(bad(METRICS_FILE, format!("row has {} fields", f.len())));
            }
            let count = |s: &str| s.parse::<usize>().map_err(|_| bad(METRICS_FILE, format!("bad count `{s}`")));
            Ok(MetricsRecord {
                epoch: count(f[0])?,
                phase: match f[1] {
                    "train" => Phase::Train,
                    "test" => Phase::Test,
                    other => return Err(bad(METRICS_FILE, format!("unknown split `{other}`"))),
                },
                mean_loss: parse_f64(f[2], METRICS_FILE)?,
                accuracy: parse_f64(f[3], METRICS_FILE)?,
                per_class_accuracy: f[4..4 + k].iter().map(|s| parse_opt(s, METRICS_FILE)).collect::<Result<_>>()?,
                per_class_ns_score: f[4 + k..4 + 2 * k]
                    .iter()
                    .map(|s| parse_opt(s, METRICS_FILE))
                    .collect::<Result<_>>()?,
                wall_seconds: 0.0,
                ns_seconds: 0.0,
                train_forward: count(f[4 + 2 * k])?,
                ns_forward: count(f[5 + 2 * k])?,
            })
        })
        .collect()
}

/// One scored training sample from the final epoch.
#[derive(Clone, Debug, PartialEq)]
pub struct ScoreRow {
    pub step: usize,
    pub index: usize,
    pub label: usize,
    pub original_label: usize,
    pub group: Option<usize>,
    pub raw: f64,
    pub score: f64,
    pub weight: f64,
}

pub fn scores_csv(rows: &[ScoreRow]) -> String {
    let mut out = String::from("step,index,label,original_label,group,raw,score,weight\n");
    for r in rows {
        let g = r.group.map(|g| g.to_string()).unwrap_or_default();
        writeln!(
            out,
            "{},{},{},{},{g},{},{},{}",
            r.step, r.index, r.label, r.original_label, r.raw, r.score, r.weight
        )
        .unwrap();
    }
    out
}

pub fn parse_scores_csv(text: &str) -> Result<Vec<ScoreRow>> {
    text.lines()
        .skip(1)
        .filter(|l| !l.is_empty())
        .map(|line| {
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 8 {
                return Err(bad(SCORES_FILE, format!("row has {} fields", f.len())));
            }
            let u = |s: &str| s.parse::<usize>().map_err(|_| bad(SCORES_FILE, format!("bad integer `{s}`")));
            Ok(ScoreRow {
                step: u(f[0])?,
                index: u(f[1])?,
                label: u(f[2])?,
                original_label: u(f[3])?,
                group: if f[4].is_empty() { None } else { Some(u(f[4])?) },
                raw: parse_f64(f[5], SCORES_FILE)?,
                score: parse_f64(f[6], SCORES_FILE)?,
                weight: parse_f64(f[7], SCORES_FILE)?,
            })
        })
        .collect()
}

pub fn class_counts_csv(counts: &[usize]) -> String {
    let mut out = String::from("class,count\n");
    for (k, n) in counts.iter().enumerate() {
        writeln!(out, "{k},{n}").unwrap();
    }
    out
}

pub fn parse_class_counts_csv(text: &str) -> Result<Vec<usize>> {
    text.lines()
        .skip(1)
        .filter(|l| !l.is_empty())
        .map(|l| {
            l.split_once(',')
                .and_then(|(_, n)| n.parse().ok())
                .ok_or_else(|| bad(COUNTS_FILE, format!("bad row `{l}`")))
        })
        .collect()
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Clone, Debug)]
pub struct SeedRun {
    pub seed: u64,
    pub dir: PathBuf,
    pub metrics: Vec<MetricsRecord>,
    pub param_hash: String,
}

impl SeedRun {
    pub fn final_record(&self, phase: Phase) -> Option<&MetricsRecord> {
        self.metrics.iter().rev().find(|r| r.phase == phase)
    }
}

pub fn seed_dir(output_dir: &Path, seed: u64) -> PathBuf {
    output_dir.join(format!("seed_{seed}"))
}

/// Trains one seed and writes its artifacts under `seed_<seed>/`.
pub fn run_seed(cfg: &ExperimentConfig, seed: u64) -> Result<SeedRun> {
    let dir = seed_dir(&cfg.output_dir, seed);
    fs::create_dir_all(&dir)?;
    let splits = data::load(&cfg.dataset, seed)?;
    let model = Classifier::new(cfg.classifier_config(seed))?;
    let tc = cfg.train_config(seed);
    let last = tc.epochs - 1;
    let mut rows = Vec::new();
    let original: Vec<usize> = splits.train.samples.iter().map(|s| s.original_label).collect();
    let mut observer = |s: &StepScores<'_>| {
        if s.epoch != last {
            return;
        }
        for (j, &i) in s.indices.iter().enumerate() {
            rows.push(ScoreRow {
                step: s.step,
                index: i,
                label: s.labels[j],
                original_label: original[i],
                group: s.scores.group[j],
                raw: s.scores.raw[j],
                score: s.scores.score[j],
                weight: s.weights[j],
            });
        }
    };
    let out = trainer::train_with_observer(&tc, &splits, model, &mut observer)?;
    fs::write(dir.join(METRICS_FILE), metrics_csv(&out.metrics))?;
    fs::write(dir.join(TIMING_FILE), timing_csv(&out.metrics))?;
    fs::write(dir.join(COUNTS_FILE), class_counts_csv(&splits.train.class_counts()))?;
    fs::write(dir.join(SCORES_FILE), scores_csv(&rows))?;
    out.model
        .write_checkpoint(BufWriter::new(fs::File::create(dir.join(CHECKPOINT_FILE))?))?;
    analyze_seed_dir(&dir)?;
    Ok(SeedRun {
        seed,
        dir,
        metrics: out.metrics,
        param_hash: hex(&out.model.param_hash()),
    })
}

/// Writes the per-class score statistics and correlation files of one seed
/// directory from its logs alone.
pub fn analyze_seed_dir(dir: &Path) -> Result<()> {
    let metrics = parse_metrics_csv(&fs::read_to_string(dir.join(METRICS_FILE))?)?;
    let counts = parse_class_counts_csv(&fs::read_to_string(dir.join(COUNTS_FILE))?)?;
    let k = counts.len();
    let scores_path = dir.join(SCORES_FILE);
    let scores = if scores_path.exists() {
        parse_scores_csv(&fs::read_to_string(scores_path)?)?
    } else {
        Vec::new()
    };
    let grouped: Vec<&ScoreRow> = scores.iter().filter(|r| r.group.is_some()).collect();
    let s: Vec<f64> = grouped.iter().map(|r| r.score).collect();
    let y: Vec<usize> = grouped.iter().map(|r| r.label).collect();
    fs::write(dir.join("ns_box.csv"), analysis::box_stats_csv(&analysis::ns_distribution(&s, &y, k)?))?;

    let last = |p: Phase| metrics.iter().rev().find(|r| r.phase == p);
    let train = last(Phase::Train).ok_or_else(|| bad(METRICS_FILE, "no train rows"))?;
    let test = last(Phase::Test).ok_or_else(|| bad(METRICS_FILE, "no test rows"))?;
    let report = analysis::correlation_report(&counts, &train.per_class_ns_score, &test.per_class_accuracy)?;
    fs::write(dir.join("correlation_classes.csv"), report.classes_csv())?;
    fs::write(dir.join("correlation_fit.csv"), report.fit_csv())?;
    fs::write(dir.join("scatter_count.csv"), report.scatter_csv("count"))?;
    fs::write(dir.join("scatter_accuracy.csv"), report.scatter_csv("accuracy"))?;
    Ok(())
}

/// Mean and sample standard deviation of one metric across seeds.
#[derive(Clone, Debug, PartialEq)]
pub struct AggregateRow {
    pub metric: String,
    pub mean: f64,
    /// `n - 1` denominator; zero for a single seed.
    pub std: f64,
    pub n: usize,
}

impl AggregateRow {
    pub fn from_values(metric: impl Into<String>, xs: &[f64]) -> Self {
        let n = xs.len();
        let mean = xs.iter().sum::<f64>() / n as f64;
        let std = if n > 1 {
            (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
        } else {
            0.0
        };
        AggregateRow {
            metric: metric.into(),
            mean,
            std,
            n,
        }
    }
}

/// Aggregates the final-epoch records of each seed.
pub fn aggregate(per_seed: &[Vec<MetricsRecord>]) -> Result<Vec<AggregateRow>> {
    if per_seed.is_empty() {
        return Err(Error::Invalid("nothing to aggregate".into()));
    }
    let finals = |p: Phase| -> Result<Vec<&MetricsRecord>> {
        per_seed
            .iter()
            .map(|m| {
                m.iter()
                    .rev()
                    .find(|r| r.phase == p)
                    .ok_or_else(|| Error::Invalid(format!("run without {} rows", p.as_str())))
            })
            .collect()
    };
    let test = finals(Phase::Test)?;
    let train = finals(Phase::Train)?;
    let col = |f: &dyn Fn(&MetricsRecord) -> f64, rs: &[&MetricsRecord]| rs.iter().map(|r| f(r)).collect::<Vec<_>>();
    let mut rows = vec![
        AggregateRow::from_values("test_accuracy", &col(&|r| r.accuracy, &test)),
        AggregateRow::from_values("test_balanced_accuracy", &col(&|r| r.balanced_accuracy(), &test)),
        AggregateRow::from_values("test_loss", &col(&|r| r.mean_loss, &test)),
        AggregateRow::from_values("train_loss", &col(&|r| r.mean_loss, &train)),
        AggregateRow::from_values("train_accuracy", &col(&|r| r.accuracy, &train)),
    ];
    let k = test[0].per_class_accuracy.len();
    for c in 0..k {
        let xs: Vec<f64> = test.iter().filter_map(|r| r.per_class_accuracy[c]).collect();
        if !xs.is_empty() {
            rows.push(AggregateRow::from_values(format!("test_acc_class_{c}"), &xs));
        }
    }
    Ok(rows)
}

pub fn aggregate_csv(rows: &[AggregateRow]) -> String {
    let mut out = String::from("metric,mean,std,n,single_seed\n");
    for r in rows {
        writeln!(out, "{},{},{},{},{}", r.metric, r.mean, r.std, r.n, r.n == 1).unwrap();
    }
    out
}

#[derive(Clone, Debug)]
pub struct ExperimentSummary {
    pub label: String,
    pub runs: Vec<SeedRun>,
    pub aggregate: Vec<AggregateRow>,
}

impl ExperimentSummary {
    pub fn row(&self, metric: &str) -> Option<&AggregateRow> {
        self.aggregate.iter().find(|r| r.metric == metric)
    }

    /// `label: test accuracy mean±std (balanced mean±std) over n seeds`.
    pub fn summary_line(&self) -> String {
        let fmt = |m: &str| {
            self.row(m)
                .map(|r| format!("{:.2}±{:.2}", 100.0 * r.mean, 100.0 * r.std))
                .unwrap_or_else(|| "n/a".into())
        };
        let n = self.runs.len();
        format!(
            "{}: test accuracy {} (balanced {}) over {n} seed{}{}",
            self.label,
            fmt("test_accuracy"),
            fmt("test_balanced_accuracy"),
            if n == 1 { "" } else { "s" },
            if n == 1 { " [single seed]" } else { "" }
        )
    }
}

/// Runs every seed (in parallel; outputs are per-seed isolated), then writes
/// the resolved config and the aggregate file.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentSummary> {
    cfg.validate()?;
    fs::create_dir_all(&cfg.output_dir)?;
    fs::write(cfg.output_dir.join("config.toml"), cfg.to_toml())?;
    let results: Vec<Result<SeedRun>> = std::thread::scope(|s| {
        let handles: Vec<_> = cfg.seeds.iter().map(|&seed| s.spawn(move || run_seed(cfg, seed))).collect();
        handles
            .into_iter()
            .map(|h| h.join().unwrap_or_else(|_| Err(Error::Invalid("seed worker panicked".into()))))
            .collect()
    });
    let runs = results.into_iter().collect::<Result<Vec<_>>>()?;
    let per_seed: Vec<Vec<MetricsRecord>> = runs.iter().map(|r| r.metrics.clone()).collect();
    let agg = aggregate(&per_seed)?;
    fs::write(cfg.output_dir.join(AGGREGATE_FILE), aggregate_csv(&agg))?;
    Ok(ExperimentSummary {
        label: cfg.label.clone(),
        runs,
        aggregate: agg,
    })
}

/// Re-derives analysis files and the aggregate from the logs under `dir`,
/// which is either a run directory holding `seed_*` folders or one seed folder.
pub fn analyze_dir(dir: &Path) -> Result<Vec<AggregateRow>> {
    let mut seed_dirs: Vec<PathBuf> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.is_dir()
                && p.file_name()
                    .and_then(|n| n.to_str())
                    .is_some_and(|n| n.starts_with("seed_"))
        })
        .collect();
    seed_dirs.sort();
    if seed_dirs.is_empty() {
        if dir.join(METRICS_FILE).exists() {
            seed_dirs.push(dir.to_path_buf());
        } else {
            return Err(Error::Invalid(format!("no metrics found under {}", dir.display())));
        }
    }
    let mut per_seed = Vec::new();
    for d in &seed_dirs {
        analyze_seed_dir(d)?;
        per_seed.push(parse_metrics_csv(&fs::read_to_string(d.join(METRICS_FILE))?)?);
    }
    let agg = aggregate(&per_seed)?;
    fs::write(dir.join(AGGREGATE_FILE), aggregate_csv(&agg))?;
    Ok(agg)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SweepAxis {
    Sigma,
    Rho,
    Layout,
}

impl SweepAxis {
    pub fn name(&self) -> &'static str {
        match self {
            SweepAxis::Sigma => "sigma",
            SweepAxis::Rho => "rho",
            SweepAxis::Layout => "layout",
        }
    }

    /// The grids of the original ablations.
    pub fn default_values(&self) -> Vec<String> {
        let v: &[&str] = match self {
            SweepAxis::Sigma | SweepAxis::Rho => &["0.0", "0.1", "0.5", "0.8", "1.0", "1.5", "1.8"],
            SweepAxis::Layout => &["1x2", "2x2", "2x4", "4x2", "4x4"],
        };
        v.iter().map(|s| s.to_string()).collect()
    }
}

impl std::str::FromStr for SweepAxis {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sigma" => Ok(SweepAxis::Sigma),
            "rho" => Ok(SweepAxis::Rho),
            "layout" => Ok(SweepAxis::Layout),
            _ => Err(Error::Invalid(format!("unknown sweep axis `{s}`"))),
        }
    }
}

#[derive(Clone, Debug)]
pub struct SweepEntry {
    pub value: String,
    pub config: ExperimentConfig,
    pub summary: ExperimentSummary,
}

/// The config for one sweep point. A rho value also sets the strategy label.
pub fn sweep_point(base: &ExperimentConfig, axis: SweepAxis, value: &str) -> Result<ExperimentConfig> {
    let mut c = base.clone();
    match axis {
        SweepAxis::Sigma => c.weighting.sigma = value.parse().map_err(|_| Error::Invalid(format!("bad sigma `{value}`")))?,
        SweepAxis::Rho => {
            let rho: f64 = value.parse().map_err(|_| Error::Invalid(format!("bad rho `{value}`")))?;
            c.weighting.rho = rho;
            if c.weighting.strategy != Strategy::FocalLike {
                c.weighting.strategy = Strategy::from_rho(rho);
            }
        }
        SweepAxis::Layout => {
            let l: GridLayout = value.parse()?;
            c.train.layout = l;
            c.train.group_size = l.group_size();
        }
    }
    c.output_dir = base.output_dir.join(format!("{}_{value}", axis.name()));
    c.label = format!("{} {}={value}", base.label, axis.name());
    c.validate()?;
    Ok(c)
}

pub fn sweep_csv(axis: SweepAxis, entries: &[SweepEntry]) -> String {
    let mut out = String::from(
        "axis,value,strategy,sigma,rho,layout,test_accuracy_mean,test_accuracy_std,balanced_accuracy_mean,balanced_accuracy_std,seeds\n",
    );
    for e in entries {
        let w = &e.config.weighting;
        let get = |m: &str| e.summary.row(m).map(|r| (r.mean, r.std)).unwrap_or((f64::NAN, f64::NAN));
        let (am, asd) = get("test_accuracy");
        let (bm, bsd) = get("test_balanced_accuracy");
        let strategy = serde_plain_strategy(w.strategy);
        writeln!(
            out,
            "{},{},{strategy},{},{},{},{am},{asd},{bm},{bsd},{}",
            axis.name(),
            e.value,
            w.sigma,
            w.rho,
            e.config.train.layout,
            e.summary.runs.len()
        )
        .unwrap();
    }
    out
}

fn serde_plain_strategy(s: Strategy) -> &'static str {
    match s {
        Strategy::NsWs => "ns_ws",
        Strategy::NsLf => "ns_lf",
        Strategy::Uniform => "uniform",
        Strategy::FocalLike => "focal_like",
    }
}

/// One experiment per value; writes `sweep_<axis>.csv` into the base output dir.
pub fn sweep(base: &ExperimentConfig, axis: SweepAxis, values: &[String]) -> Result<Vec<SweepEntry>> {
    if values.is_empty() {
        return Err(Error::Invalid("sweep needs at least one value".into()));
    }
    let configs = values
        .iter()
        .map(|v| sweep_point(base, axis, v))
        .collect::<Result<Vec<_>>>()?;
    let mut entries = Vec::with_capacity(values.len());
    for (v, c) in values.iter().zip(configs) {
        let summary = run_experiment(&c)?;
        entries.push(SweepEntry {
            value: v.clone(),
            config: c,
            summary,
        });
    }
    fs::create_dir_all(&base.output_dir)?;
    fs::write(
        base.output_dir.join(format!("sweep_{}.csv", axis.name())),
        sweep_csv(axis, &entries),
    )?;
    Ok(entries)
}
