//! `tvcov`: simulate, detrend, fit, predict and validate space-time data.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use tvcov_core::Variant;

use config::{Command, RunConfig, TimeScale};

/// Invalid invocation or configuration (exit code 1).
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

#[derive(Parser)]
#[command(name = "tvcov", version, about = "Time-varying space-time covariance models")]
struct Cli {
    #[command(subcommand)]
    command: Sub,
}

#[derive(Subcommand)]
enum Sub {
    /// Simulate a dataset from a case truth or a model.
    Simulate(Opts),
    /// Fit the deterministic trend and write residuals.
    Trend(Opts),
    /// Fit a covariance model by random composite likelihood.
    Fit(Opts),
    /// Krige at target points with a fitted model.
    Predict(Opts),
    /// Score predictions, or run the split/fit/krige/score workflow.
    Validate(Opts),
    /// Run the simulation study.
    Simstudy(Opts),
}

#[derive(Args)]
struct Opts {
    /// JSON run configuration; flags override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Observations, `x,y,t,value` CSV.
    #[arg(long)]
    input: Option<PathBuf>,
    /// Output directory, created if missing.
    #[arg(long)]
    output: Option<PathBuf>,
    /// Fitted model for `predict`: a `fit.json` or a bare model.
    #[arg(long)]
    fit: Option<PathBuf>,
    /// Trend model (`trend.json`) removed before fitting or kriging.
    #[arg(long)]
    trend: Option<PathBuf>,
    /// Prediction points, `x,y,t` CSV.
    #[arg(long)]
    targets: Option<PathBuf>,
    /// Predictions to score against `--input` (validate).
    #[arg(long)]
    predictions: Option<PathBuf>,
    /// Master seed for simulation, partitions and splits.
    #[arg(long)]
    seed: Option<u64>,
    /// Candidate model: tvar, gneit or sep.
    #[arg(long)]
    model: Option<Variant>,
    /// Spatial blocks per partition.
    #[arg(long)]
    m_s: Option<usize>,
    /// Random spatial partitions.
    #[arg(long)]
    r_s: Option<usize>,
    /// Temporal blocks per partition.
    #[arg(long)]
    m_t: Option<usize>,
    /// Random temporal partitions.
    #[arg(long)]
    r_t: Option<usize>,
    /// Nelder-Mead iteration cap per start.
    #[arg(long)]
    max_iters: Option<usize>,
    /// Simulation case (simulate) or cases (simstudy), comma separated.
    #[arg(long, value_delimiter = ',')]
    case: Option<Vec<u8>>,
    /// Runs per case (simstudy).
    #[arg(long)]
    runs: Option<usize>,
    /// Interval probabilities (predict), comma separated.
    #[arg(long, value_delimiter = ',')]
    p: Option<Vec<f64>>,
    /// Fit and remove the trend inside `validate`.
    #[arg(long)]
    detrend: bool,
    /// Rescale the `t` column of input and targets.
    #[arg(long, value_enum)]
    scale_time: Option<TimeScale>,
    /// Log progress to stderr.
    #[arg(long, short)]
    verbose: bool,
}

impl Opts {
    fn apply(&self, cfg: &mut RunConfig, cmd: Command) {
        macro_rules! set {
            ($field:ident) => {
                if let Some(v) = &self.$field {
                    cfg.$field = Some(v.clone());
                }
            };
        }
        set!(input);
        set!(output);
        set!(fit);
        set!(trend);
        set!(targets);
        set!(predictions);
        set!(scale_time);
        if let Some(s) = self.seed {
            cfg.seed = s;
            cfg.simstudy.seed = s;
        }
        if let Some(v) = self.model {
            cfg.model.variant = v;
        }
        let p = &mut cfg.partition;
        for (flag, slot) in [(self.m_s, &mut p.m_s), (self.r_s, &mut p.r_s), (self.m_t, &mut p.m_t), (self.r_t, &mut p.r_t)]
        {
            if let Some(v) = flag {
                *slot = v;
            }
        }
        if let Some(v) = self.max_iters {
            cfg.optimizer.max_iters = v;
            cfg.simstudy.optimizer.max_iters = v;
        }
        if let Some(cases) = &self.case {
            if cmd == Command::Simstudy {
                cfg.simstudy.cases = cases.clone();
            } else if let Some(&c) = cases.first() {
                cfg.simulate.case = c;
            }
        }
        if let Some(r) = self.runs {
            cfg.simstudy.n_runs = r;
        }
        if let Some(p) = &self.p {
            cfg.probabilities = p.clone();
        }
        if self.detrend {
            cfg.detrend = true;
        }
    }
}

fn exit_code(err: &anyhow::Error) -> (u8, &'static str) {
    use tvcov_core::Error as E;
    if err.downcast_ref::<UsageError>().is_some() {
        return (1, "usage");
    }
    match err.downcast_ref::<E>() {
        Some(E::Domain(_)) => (1, "usage"),
        Some(E::Data(_) | E::Io(_) | E::Csv(_) | E::Json(_) | E::TooLarge(_)) => (2, "data"),
        Some(_) => (3, "numerical"),
        None if err.downcast_ref::<std::io::Error>().is_some() => (2, "data"),
        None => (3, "numerical"),
    }
}

fn run(sub: Sub) -> anyhow::Result<()> {
    let (cmd, opts) = match sub {
        Sub::Simulate(o) => (Command::Simulate, o),
        Sub::Trend(o) => (Command::Trend, o),
        Sub::Fit(o) => (Command::Fit, o),
        Sub::Predict(o) => (Command::Predict, o),
        Sub::Validate(o) => (Command::Validate, o),
        Sub::Simstudy(o) => (Command::Simstudy, o),
    };
    let level = if opts.verbose { "info" } else { "warn" };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .target(env_logger::Target::Stderr)
        .try_init();
    let mut cfg = match &opts.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    opts.apply(&mut cfg, cmd);
    let bad = cfg.violations(cmd);
    if !bad.is_empty() {
        return Err(UsageError(format!("invalid configuration: {}", bad.join("; "))).into());
    }
    commands::dispatch(cmd, &cfg)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if matches!(e.kind(), clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion) => {
            use std::io::Write;
            let _ = write!(std::io::stdout(), "{e}");
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let msg = e.to_string();
            eprintln!("{}", serde_json::json!({"error": {"kind": "usage", "code": 1, "message": msg.trim()}}));
            return ExitCode::from(1);
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            let (code, kind) = exit_code(&err);
            eprintln!(
                "{}",
                serde_json::json!({"error": {"kind": kind, "code": code, "message": err.to_string()}})
            );
            ExitCode::from(code)
        }
    }
}
