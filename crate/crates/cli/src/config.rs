use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use tvcov_core::harness::{SimConfig, SplitSpec};
use tvcov_core::scoring::default_p_grid;
use tvcov_core::trend::Harmonics;
use tvcov_core::{CovarianceModel, ModelSpec, Neighborhood, OptimizerConfig, PartitionShape, Variant};

/// How the `t` column of input files is mapped to model time.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum TimeScale {
    /// `t = (day - 1) / 364` for day of year 1..=365.
    DayOfYear,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulateConfig {
    /// Simulation case 1-4; ignored when `model` is set.
    pub case: u8,
    pub nx: usize,
    pub ny: usize,
    pub nt: usize,
    pub raw_index_time: bool,
    /// Simulate from this model instead of a case truth.
    pub model: Option<CovarianceModel>,
}

impl Default for SimulateConfig {
    fn default() -> Self {
        Self {
            case: 1,
            nx: 15,
            ny: 15,
            nt: 11,
            raw_index_time: false,
            model: None,
        }
    }
}

/// Everything a subcommand needs. Loaded from JSON, then patched by flags.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Observations, `x,y,t,value` CSV.
    pub input: Option<PathBuf>,
    /// Directory receiving the outputs.
    pub output: Option<PathBuf>,
    /// Fitted model (`fit.json`) used by `predict`.
    pub fit: Option<PathBuf>,
    /// Trend model (`trend.json`) applied by `fit` and `predict`.
    pub trend: Option<PathBuf>,
    /// Prediction points, `x,y,t` CSV.
    pub targets: Option<PathBuf>,
    /// Prediction CSV scored by `validate` against `input`.
    pub predictions: Option<PathBuf>,
    pub scale_time: Option<TimeScale>,
    pub seed: u64,
    pub model: ModelSpec,
    pub partition: PartitionShape,
    pub optimizer: OptimizerConfig,
    pub split: SplitSpec,
    pub neighborhood: Neighborhood,
    /// Half-width in time steps of the interpolation window in `validate`.
    pub interpolation_steps: f64,
    /// Trailing training time steps used for forecasting in `validate`.
    pub forecast_steps: f64,
    /// Fit and remove the trend before modelling (`validate`).
    pub detrend: bool,
    pub harmonics: Harmonics,
    /// Central interval probabilities written by `predict`.
    pub probabilities: Vec<f64>,
    pub p_grid: Vec<f64>,
    pub simulate: SimulateConfig,
    pub simstudy: SimConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            input: None,
            output: None,
            fit: None,
            trend: None,
            targets: None,
            predictions: None,
            scale_time: None,
            seed: 0,
            model: ModelSpec::new(Variant::Tvar),
            partition: PartitionShape::FULL,
            optimizer: OptimizerConfig::default(),
            split: SplitSpec::default(),
            neighborhood: Neighborhood::default(),
            interpolation_steps: 2.0,
            forecast_steps: 2.0,
            detrend: false,
            harmonics: Harmonics::default(),
            probabilities: vec![0.5, 0.8, 0.95],
            p_grid: default_p_grid(),
            simulate: SimulateConfig::default(),
            simstudy: SimConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Simulate,
    Trend,
    Fit,
    Predict,
    Validate,
    Simstudy,
}

fn check_file(bad: &mut Vec<String>, name: &str, path: &Option<PathBuf>, required: bool) {
    match path {
        Some(p) if !p.is_file() => bad.push(format!("{name}: {} is not a readable file", p.display())),
        None if required => bad.push(format!("{name} is required")),
        _ => {}
    }
}

fn check_probs(bad: &mut Vec<String>, name: &str, ps: &[f64]) {
    if ps.is_empty() {
        bad.push(format!("{name} must not be empty"));
    }
    if let Some(p) = ps.iter().find(|p| !(**p > 0.0 && **p < 1.0)) {
        bad.push(format!("{name}: {p} is outside (0, 1)"));
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| crate::UsageError(format!("cannot read config {}: {e}", path.display())))?;
        serde_json::from_str(&text)
            .map_err(|e| crate::UsageError(format!("invalid config {}: {e}", path.display())).into())
    }

    /// Every problem with the configuration for `cmd`, all at once.
    pub fn violations(&self, cmd: Command) -> Vec<String> {
        let mut bad = Vec::new();
        match &self.output {
            None => bad.push("output directory is required".into()),
            Some(p) if p.exists() && !p.is_dir() => {
                bad.push(format!("output: {} exists and is not a directory", p.display()))
            }
            _ => {}
        }
        let needs_input = !matches!(cmd, Command::Simulate | Command::Simstudy);
        check_file(&mut bad, "input", &self.input, needs_input);
        check_file(&mut bad, "fit", &self.fit, cmd == Command::Predict);
        check_file(&mut bad, "targets", &self.targets, cmd == Command::Predict);
        check_file(&mut bad, "trend", &self.trend, false);
        check_file(&mut bad, "predictions", &self.predictions, false);
        if matches!(cmd, Command::Fit | Command::Validate) && self.predictions.is_none() {
            if let Err(e) = self.model.validate() {
                bad.push(format!("model: {e}"));
            }
            let p = &self.partition;
            for (name, v) in [("M_s", p.m_s), ("R_s", p.r_s), ("M_t", p.m_t), ("R_t", p.r_t)] {
                if v == 0 {
                    bad.push(format!("{name} must be at least 1"));
                }
            }
            if self.optimizer.max_iters == 0 || self.optimizer.multistart == 0 {
                bad.push("optimizer max_iters and multistart must be at least 1".into());
            }
            if !(self.optimizer.tol > 0.0) || !(self.optimizer.initial_step > 0.0) {
                bad.push("optimizer tol and initial_step must be positive".into());
            }
        }
        if cmd == Command::Validate && self.predictions.is_none() {
            if !(0.0..1.0).contains(&self.split.interpolation_fraction) {
                bad.push(format!(
                    "split interpolation_fraction {} must lie in [0, 1)",
                    self.split.interpolation_fraction
                ));
            }
            if !(self.interpolation_steps > 0.0) {
                bad.push("interpolation_steps must be positive".into());
            }
            if !(self.forecast_steps >= 0.0) {
                bad.push("forecast_steps must be nonnegative".into());
            }
        }
        if cmd == Command::Predict {
            check_probs(&mut bad, "probabilities", &self.probabilities);
            match self.neighborhood {
                Neighborhood::Interpolate { steps } if !(steps > 0.0) => {
                    bad.push("neighborhood steps must be positive".into())
                }
                Neighborhood::Forecast { from, to } if !(from <= to) => {
                    bad.push(format!("neighborhood window [{from}, {to}] is empty"))
                }
                _ => {}
            }
        }
        if cmd == Command::Validate {
            check_probs(&mut bad, "p_grid", &self.p_grid);
            if self.p_grid.windows(2).any(|w| w[1] <= w[0]) {
                bad.push("p_grid must be strictly increasing".into());
            }
        }
        if cmd == Command::Simulate {
            let s = &self.simulate;
            if s.model.is_none() && !(1..=4).contains(&s.case) {
                bad.push(format!("simulate case {} must be 1-4", s.case));
            }
            if s.nx < 2 || s.ny < 2 || s.nt < 2 {
                bad.push(format!("simulate grid {}x{}x{} needs at least 2 points per axis", s.nx, s.ny, s.nt));
            }
            if s.nx * s.ny * s.nt > tvcov_core::harness::MAX_GRID_POINTS {
                bad.push(format!(
                    "simulate grid {}x{}x{} exceeds {} points",
                    s.nx,
                    s.ny,
                    s.nt,
                    tvcov_core::harness::MAX_GRID_POINTS
                ));
            }
            if let Some(Err(e)) = s.model.as_ref().map(|m| m.validate()) {
                bad.push(format!("simulate model: {e}"));
            }
        }
        if cmd == Command::Simstudy {
            bad.extend(self.simstudy.violations().into_iter().map(|v| format!("simstudy: {v}")));
        }
        bad
    }
}
