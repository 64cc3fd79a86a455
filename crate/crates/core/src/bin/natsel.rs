use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};

use natsel::config::{ExperimentConfig, Overrides};
use natsel::imageops::GridLayout;
use natsel::runner::{self, SweepAxis};
use natsel::weighting::{self, Strategy, WeightingConfig};
use natsel::Error;

/// Group-competition sample reweighting experiments.
#[derive(Parser)]
#[command(name = "natsel", version)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Train every seed of a config and write metrics, checkpoints and aggregates.
    Run {
        #[command(flatten)]
        exp: ExpArgs,
    },
    /// Run one experiment per value along an axis and tabulate the results.
    Sweep {
        #[command(flatten)]
        exp: ExpArgs,
        #[arg(long, value_parser = parse_axis)]
        axis: SweepAxis,
        /// Comma-separated values; defaults to the standard grid for the axis.
        #[arg(long, value_delimiter = ',')]
        values: Vec<String>,
    },
    /// Recompute analysis files and aggregates from existing logs.
    Analyze {
        /// Run directory (with seed_* folders) or a single seed folder.
        dir: PathBuf,
    },
    /// Print the weight assigned to each rank of evenly spaced scores.
    WeightCurve {
        #[arg(long, default_value_t = 1.0)]
        sigma: f64,
        #[arg(long, default_value_t = 1.0, allow_negative_numbers = true)]
        rho: f64,
        #[arg(long, value_parser = parse_strategy)]
        strategy: Option<Strategy>,
        #[arg(long, default_value_t = 128)]
        n: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Validate a config and print it with every default filled in.
    Check {
        #[command(flatten)]
        exp: ExpArgs,
    },
}

#[derive(Args)]
struct ExpArgs {
    #[arg(long, short)]
    config: PathBuf,
    #[arg(long)]
    output_dir: Option<PathBuf>,
    #[arg(long, value_parser = parse_strategy)]
    strategy: Option<Strategy>,
    #[arg(long)]
    sigma: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    rho: Option<f64>,
    /// Group size m; the layout defaults to the squarest grid.
    #[arg(long, short = 'm')]
    group_size: Option<usize>,
    #[arg(long, value_parser = parse_layout)]
    layout: Option<GridLayout>,
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
    #[arg(long)]
    label: Option<String>,
}

fn parse_axis(s: &str) -> Result<SweepAxis, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_layout(s: &str) -> Result<GridLayout, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_strategy(s: &str) -> Result<Strategy, String> {
    match s {
        "ns_ws" | "ns-ws" => Ok(Strategy::NsWs),
        "ns_lf" | "ns-lf" => Ok(Strategy::NsLf),
        "uniform" => Ok(Strategy::Uniform),
        "focal_like" | "focal-like" => Ok(Strategy::FocalLike),
        _ => Err(format!("unknown strategy `{s}`")),
    }
}

impl ExpArgs {
    fn load(&self) -> Result<ExperimentConfig> {
        let mut cfg = ExperimentConfig::load(&self.config).with_context(|| format!("loading {}", self.config.display()))?;
        cfg.apply(&Overrides {
            strategy: self.strategy,
            sigma: self.sigma,
            rho: self.rho,
            group_size: self.group_size,
            layout: self.layout,
            seeds: self.seeds.clone(),
            output_dir: self.output_dir.clone(),
            label: self.label.clone(),
        })?;
        Ok(cfg)
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.cmd {
        Cmd::Run { exp } => {
            let cfg = exp.load()?;
            let summary = runner::run_experiment(&cfg)?;
            println!("{}", summary.summary_line());
        }
        Cmd::Sweep { exp, axis, values } => {
            let cfg = exp.load()?;
            let values = if values.is_empty() { axis.default_values() } else { values };
            for e in runner::sweep(&cfg, axis, &values)? {
                println!("{}", e.summary.summary_line());
            }
            println!(
                "wrote {}",
                cfg.output_dir.join(format!("sweep_{}.csv", axis.name())).display()
            );
        }
        Cmd::Analyze { dir } => {
            for row in runner::analyze_dir(&dir)? {
                println!("{}: {}±{} (n={})", row.metric, row.mean, row.std, row.n);
            }
        }
        Cmd::WeightCurve {
            sigma,
            rho,
            strategy,
            n,
            out,
        } => {
            let mut cfg = WeightingConfig::affine(sigma, rho);
            if let Some(s) = strategy {
                cfg.strategy = s;
            }
            cfg.validate()?;
            let csv = weighting::weight_curve_csv(&weighting::weight_curve(n, &cfg)?);
            match out {
                Some(p) => std::fs::write(&p, csv).with_context(|| format!("writing {}", p.display()))?,
                None => print!("{csv}"),
            }
        }
        Cmd::Check { exp } => print!("{}", exp.load()?.to_toml()),
    }
    Ok(())
}

fn is_validation(e: &anyhow::Error) -> bool {
    e.chain().any(|c| {
        matches!(
            c.downcast_ref::<Error>(),
            Some(Error::Config(_) | Error::Invalid(_) | Error::NegativeWeight { .. })
        )
    })
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(if is_validation(&e) { 1 } else { 2 })
        }
    }
}
