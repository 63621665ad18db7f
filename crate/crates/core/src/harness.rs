//! Simulation study and validation splits.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::io::Write;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gp::{krige_neighborhood, simulate_gp, time_step, Dataset, Neighborhood, PredictiveDistribution};
use crate::kernels::{alpha_bar, CovarianceModel, SpaceTimePoint, TimeFn, TimeShape, TvarModel, Variant};
use crate::rcl::{fit_grid, make_partitions, FitResult, GridData, ModelSpec, OptimizerConfig, PartitionShape};
use crate::scoring::{default_p_grid, score_predictions, ScoreReport};

/// Largest simulation grid accepted (the full published design).
pub const MAX_GRID_POINTS: usize = 25 * 25 * 21;

fn case_fns(case_id: u8, raw_index_time: bool) -> Result<(TimeFn, TimeFn)> {
    let shape = TimeFn::Shape;
    Ok(match case_id {
        1 => {
            // sin(pi t / 20) on the index grid 0..20 is sin(pi t) in scaled time
            let frequency = if raw_index_time { PI / 20.0 } else { PI };
            (
                shape(TimeShape::Sine {
                    base: 20.0,
                    amplitude: 15.0,
                    frequency,
                }),
                shape(TimeShape::Sine {
                    base: 0.5,
                    amplitude: 1.0,
                    frequency,
                }),
            )
        }
        2 => (
            shape(TimeShape::Linear {
                intercept: 25.0,
                slope: -10.0,
            }),
            shape(TimeShape::Linear {
                intercept: 0.5,
                slope: 1.0,
            }),
        ),
        3 => (
            shape(TimeShape::Logistic {
                base: 20.0,
                amplitude: -10.0,
                rate: 10.0,
                shift: 5.0,
            }),
            shape(TimeShape::Logistic {
                base: 0.5,
                amplitude: 1.0,
                rate: 10.0,
                shift: 5.0,
            }),
        ),
        4 => (TimeFn::constant(20.0), TimeFn::constant(1.0)),
        _ => return Err(Error::domain(format!("simulation case {case_id} does not exist (1-4)"))),
    })
}

/// True model of a simulation case; `alpha_bar` averages over `times`.
pub fn case_truth(case_id: u8, raw_index_time: bool, times: &[f64]) -> Result<TvarModel> {
    let (alpha_fn, nu_fn) = case_fns(case_id, raw_index_time)?;
    let ab = alpha_bar(&alpha_fn, times)?;
    Ok(TvarModel {
        sigma: 1.0,
        a: 10.0,
        gamma: 0.6,
        beta: 0.8,
        delta: 0.1,
        alpha_fn,
        nu_fn,
        alpha_bar: ab,
        d: 2,
        nugget: 0.0,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SplitSpec {
    pub interpolation_fraction: f64,
    pub forecast_horizon: usize,
    pub seed: u64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self {
            interpolation_fraction: 0.2,
            forecast_horizon: 2,
            seed: 0,
        }
    }
}

/// Training data and the two validation sets.
#[derive(Debug, Clone, PartialEq)]
pub struct Split {
    pub training: Dataset,
    /// Held-out locations at the training times.
    pub interpolation: Dataset,
    /// Every location at the trailing times.
    pub forecast: Dataset,
}

/// Splits by location and trailing times; the three sets partition `data`.
pub fn split_validation(data: &Dataset, spec: &SplitSpec) -> Result<Split> {
    if !(0.0..1.0).contains(&spec.interpolation_fraction) {
        return Err(Error::domain(format!(
            "interpolation fraction {} must lie in [0, 1)",
            spec.interpolation_fraction
        )));
    }
    let times = data.times();
    if spec.forecast_horizon >= times.len() {
        return Err(Error::domain(format!(
            "forecast horizon {} leaves no training times out of {}",
            spec.forecast_horizon,
            times.len()
        )));
    }
    let cutoff = times[times.len() - spec.forecast_horizon - 1];
    let mut locs: Vec<[f64; 2]> = data.points.iter().map(|p| p.s).collect();
    locs.sort_by(|a, b| a[0].total_cmp(&b[0]).then(a[1].total_cmp(&b[1])));
    locs.dedup();
    let n_held = (spec.interpolation_fraction * locs.len() as f64).round() as usize;
    let mut rng = ChaCha20Rng::seed_from_u64(spec.seed);
    locs.shuffle(&mut rng);
    let mut held: Vec<[f64; 2]> = locs[..n_held].to_vec();
    held.sort_by(|a, b| a[0].total_cmp(&b[0]).then(a[1].total_cmp(&b[1])));
    let is_held = |s: &[f64; 2]| {
        held.binary_search_by(|h| h[0].total_cmp(&s[0]).then(h[1].total_cmp(&s[1])))
            .is_ok()
    };
    let (mut tr, mut vi, mut vf) = (Vec::new(), Vec::new(), Vec::new());
    for (i, p) in data.points.iter().enumerate() {
        if p.t > cutoff {
            vf.push(i);
        } else if is_held(&p.s) {
            vi.push(i);
        } else {
            tr.push(i);
        }
    }
    Ok(Split {
        training: data.subset(&tr),
        interpolation: data.subset(&vi),
        forecast: data.subset(&vf),
    })
}

/// Settings of the simulation study.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimConfig {
    pub cases: Vec<u8>,
    pub nx: usize,
    pub ny: usize,
    pub nt: usize,
    pub n_runs: usize,
    pub seed: u64,
    pub partition: PartitionShape,
    pub optimizer: OptimizerConfig,
    pub interpolation_fraction: f64,
    pub forecast_horizon: usize,
    /// Half-width, in time steps, of the interpolation kriging window.
    pub interpolation_steps: f64,
    /// Number of trailing training time steps used for forecasting.
    pub forecast_steps: f64,
    /// Read the first case's sine argument on the raw time index.
    pub raw_index_time: bool,
    pub models: Vec<Variant>,
    pub p_grid: Vec<f64>,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            cases: vec![1, 2, 3, 4],
            nx: 15,
            ny: 15,
            nt: 11,
            n_runs: 20,
            seed: 20_170_101,
            partition: PartitionShape {
                m_s: 20,
                r_s: 5,
                m_t: 9,
                r_t: 1,
            },
            optimizer: OptimizerConfig::default(),
            interpolation_fraction: 0.2,
            forecast_horizon: 2,
            interpolation_steps: 2.0,
            forecast_steps: 2.0,
            raw_index_time: false,
            models: vec![Variant::Tvar, Variant::Gneit, Variant::Sep],
            p_grid: default_p_grid(),
        }
    }
}

impl SimConfig {
    /// Every violated constraint, not just the first.
    pub fn violations(&self) -> Vec<String> {
        let mut bad = Vec::new();
        if self.cases.is_empty() || self.cases.iter().any(|c| !(1..=4).contains(c)) {
            bad.push(format!("cases {:?} must be a non-empty subset of 1..4", self.cases));
        }
        if self.nx < 2 || self.ny < 2 || self.nt < 2 {
            bad.push(format!("grid {}x{}x{} needs at least 2 points per axis", self.nx, self.ny, self.nt));
        }
        if self.nx * self.ny * self.nt > MAX_GRID_POINTS {
            bad.push(format!(
                "grid {}x{}x{} exceeds the cap of {MAX_GRID_POINTS} points",
                self.nx, self.ny, self.nt
            ));
        }
        if self.n_runs == 0 {
            bad.push("n_runs must be at least 1".into());
        }
        if !(0.0..1.0).contains(&self.interpolation_fraction) {
            bad.push(format!("interpolation_fraction {} must lie in [0, 1)", self.interpolation_fraction));
        }
        if self.forecast_horizon >= self.nt {
            bad.push(format!("forecast_horizon {} must be below nt={}", self.forecast_horizon, self.nt));
        }
        let n_loc = self.nx * self.ny;
        let n_train_loc = n_loc - (self.interpolation_fraction * n_loc as f64).round() as usize;
        let n_train_t = self.nt.saturating_sub(self.forecast_horizon);
        let p = &self.partition;
        if p.m_s == 0 || p.m_s > n_train_loc {
            bad.push(format!("M_s={} must lie in [1, {n_train_loc}] (training locations)", p.m_s));
        }
        if p.m_t == 0 || p.m_t > n_train_t {
            bad.push(format!("M_t={} must lie in [1, {n_train_t}] (training times)", p.m_t));
        }
        if p.r_s == 0 || p.r_t == 0 {
            bad.push("R_s and R_t must be at least 1".into());
        }
        if !(self.interpolation_steps > 0.0) {
            bad.push("interpolation_steps must be positive".into());
        }
        if !(self.forecast_steps >= 0.0) {
            bad.push("forecast_steps must be nonnegative".into());
        }
        if self.models.is_empty() {
            bad.push("at least one candidate model is required".into());
        }
        if self.p_grid.is_empty() || self.p_grid.iter().any(|p| !(*p > 0.0 && *p < 1.0)) {
            bad.push("p_grid must be non-empty with values in (0, 1)".into());
        }
        bad
    }

    pub fn grid_points(&self) -> Vec<SpaceTimePoint> {
        let mut pts = Vec::with_capacity(self.nx * self.ny * self.nt);
        for i in 0..self.nx {
            for j in 0..self.ny {
                for k in 0..self.nt {
                    pts.push(SpaceTimePoint::new(
                        i as f64 / (self.nx - 1) as f64,
                        j as f64 / (self.ny - 1) as f64,
                        k as f64 / (self.nt - 1) as f64,
                    ));
                }
            }
        }
        pts
    }

    pub fn grid_times(&self) -> Vec<f64> {
        (0..self.nt).map(|k| k as f64 / (self.nt - 1) as f64).collect()
    }
}

/// Candidate specification used for a case.
pub fn candidate_spec(variant: Variant, case_id: u8) -> ModelSpec {
    let order = if case_id == 3 { 3 } else { 2 };
    let spec = ModelSpec::new(variant).fix("a", 10.0);
    match variant {
        Variant::Tvar => spec.with_orders(order, order),
        _ => spec,
    }
}

/// Seed of run `run` of case `case_id`.
pub fn run_seed(master: u64, case_id: u8, run: usize) -> u64 {
    let mut z = master ^ ((case_id as u64) << 48) ^ (run as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    // splitmix64 finalizer
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SetScores {
    pub rmse: f64,
    pub mcrps: f64,
    pub mlogs: Option<f64>,
    pub g: f64,
    #[serde(skip)]
    pub coverage: Vec<f64>,
    #[serde(skip)]
    pub width: Vec<f64>,
}

impl From<ScoreReport> for SetScores {
    fn from(r: ScoreReport) -> Self {
        Self {
            rmse: r.rmse,
            mcrps: r.mcrps,
            mlogs: r.mlogs,
            g: r.g,
            coverage: r.empirical_coverage,
            width: r.avg_width,
        }
    }
}

/// Outcome of one candidate model on one simulated dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub case_id: u8,
    pub run: usize,
    pub seed: u64,
    pub variant: Variant,
    pub param_names: Vec<String>,
    pub estimates: Vec<f64>,
    pub model: Option<CovarianceModel>,
    pub objective_value: Option<f64>,
    pub converged: Option<bool>,
    pub iterations: Option<usize>,
    pub interpolation: Option<SetScores>,
    pub forecast: Option<SetScores>,
    /// Fitted `alpha_s`, `nu_s` at the grid times (Tvar only).
    pub alpha_curve: Option<Vec<f64>>,
    pub nu_curve: Option<Vec<f64>>,
    pub errors: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamSummary {
    pub case_id: u8,
    pub variant: Variant,
    pub name: String,
    pub mean: f64,
    pub sd: f64,
    pub truth: Option<f64>,
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreSummary {
    pub case_id: u8,
    pub variant: Variant,
    pub set: String,
    pub metric: String,
    pub mean: f64,
    pub sd: f64,
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveSummary {
    pub case_id: u8,
    pub variant: Variant,
    pub set: String,
    pub p: Vec<f64>,
    pub coverage: Vec<f64>,
    pub width: Vec<f64>,
    pub n: usize,
}

/// Pointwise band of the fitted time functions against the truth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BandSummary {
    pub case_id: u8,
    pub function: String,
    pub times: Vec<f64>,
    pub truth: Vec<f64>,
    pub mean: Vec<f64>,
    pub sd: Vec<f64>,
    pub covered: Vec<bool>,
    pub coverage_fraction: f64,
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimReport {
    pub config: SimConfig,
    pub runs: Vec<RunRecord>,
    pub parameters: Vec<ParamSummary>,
    pub scores: Vec<ScoreSummary>,
    pub curves: Vec<CurveSummary>,
    pub bands: Vec<BandSummary>,
    pub failures: usize,
}

fn mean_sd(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let m = xs.iter().sum::<f64>() / n;
    let sd = if xs.len() > 1 {
        (xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    (m, sd)
}

fn true_value(case_id: u8, variant: Variant, name: &str) -> Option<f64> {
    match name {
        "sigma" => Some(1.0),
        "a" => Some(10.0),
        "gamma" => Some(0.6),
        "beta" => Some(0.8),
        "delta" => Some(0.1),
        "alpha" if case_id == 4 && variant != Variant::Tvar => Some(20.0),
        "nu" if case_id == 4 && variant != Variant::Tvar => Some(1.0),
        _ => None,
    }
}

fn score_set(
    model: &CovarianceModel,
    training: &Dataset,
    target: &Dataset,
    hood: Neighborhood,
    p_grid: &[f64],
) -> Result<SetScores> {
    let pd: PredictiveDistribution = krige_neighborhood(model, training, &target.points, hood)?;
    Ok(score_predictions(&pd, &target.values, p_grid)?.into())
}

fn gneit_start(fit: &FitResult) -> BTreeMap<String, f64> {
    let mut start = BTreeMap::new();
    if let CovarianceModel::Gneit(m) = &fit.model {
        for (k, v) in [("sigma", m.sigma), ("gamma", m.gamma), ("beta", m.beta), ("delta", m.delta)] {
            start.insert(k.to_string(), v);
        }
        start.insert("alpha_0".into(), m.alpha.ln());
        start.insert("nu_0".into(), m.nu.ln());
    }
    start
}

/// Simulates one dataset and fits every candidate to it.
pub fn run_one(cfg: &SimConfig, case_id: u8, run: usize) -> Result<Vec<RunRecord>> {
    let seed = run_seed(cfg.seed, case_id, run);
    let times = cfg.grid_times();
    let truth = CovarianceModel::Tvar(case_truth(case_id, cfg.raw_index_time, &times)?);
    let pts = cfg.grid_points();
    let values = simulate_gp(&truth, &pts, seed)?;
    let data = Dataset::new(pts, values)?;
    let split = split_validation(
        &data,
        &SplitSpec {
            interpolation_fraction: cfg.interpolation_fraction,
            forecast_horizon: cfg.forecast_horizon,
            seed: seed.wrapping_add(1),
        },
    )?;
    let grid = GridData::from_dataset(&split.training)?;
    let plan = make_partitions(grid.n_locations(), grid.n_times(), cfg.partition, seed.wrapping_add(2))?;
    let dt = time_step(&grid.times).unwrap_or(1.0);
    let last = grid.times[grid.n_times() - 1];
    let interp = Neighborhood::Interpolate {
        steps: cfg.interpolation_steps,
    };
    let forecast = Neighborhood::Forecast {
        from: last - cfg.forecast_steps * dt,
        to: last,
    };

    // Gneit first: its estimate seeds the Tvar fit
    let mut order = cfg.models.clone();
    order.sort_by_key(|v| match v {
        Variant::Gneit => 0,
        Variant::Sep => 1,
        Variant::Tvar => 2,
    });
    let mut gneit_fit: Option<FitResult> = None;
    let mut records = Vec::new();
    for variant in order {
        let spec = candidate_spec(variant, case_id);
        let extra: Vec<BTreeMap<String, f64>> = match (&gneit_fit, variant) {
            (Some(g), Variant::Tvar) => vec![gneit_start(g)],
            (Some(g), Variant::Sep) => {
                let mut s = gneit_start(g);
                s.remove("beta");
                let alpha = s.remove("alpha_0").map(f64::exp);
                let nu = s.remove("nu_0").map(f64::exp);
                s.extend(alpha.map(|v| ("alpha".to_string(), v)));
                s.extend(nu.map(|v| ("nu".to_string(), v)));
                vec![s]
            }
            _ => Vec::new(),
        };
        let mut rec = RunRecord {
            case_id,
            run,
            seed,
            variant,
            param_names: Vec::new(),
            estimates: Vec::new(),
            model: None,
            objective_value: None,
            converged: None,
            iterations: None,
            interpolation: None,
            forecast: None,
            alpha_curve: None,
            nu_curve: None,
            errors: Vec::new(),
        };
        match fit_grid(&grid, &spec, &plan, &cfg.optimizer, &extra) {
            Ok(fit) => {
                rec.param_names = fit.param_names.clone();
                rec.estimates = fit.theta_natural.clone();
                rec.objective_value = Some(fit.objective_value);
                rec.converged = Some(fit.converged);
                rec.iterations = Some(fit.iterations);
                if let CovarianceModel::Tvar(m) = &fit.model {
                    rec.alpha_curve = Some(times.iter().map(|&t| m.alpha_fn.value(t)).collect());
                    rec.nu_curve = Some(times.iter().map(|&t| m.nu_fn.value(t)).collect());
                }
                match score_set(&fit.model, &split.training, &split.interpolation, interp, &cfg.p_grid) {
                    Ok(s) => rec.interpolation = Some(s),
                    Err(e) => rec.errors.push(format!("interpolation: {e}")),
                }
                match score_set(&fit.model, &split.training, &split.forecast, forecast, &cfg.p_grid) {
                    Ok(s) => rec.forecast = Some(s),
                    Err(e) => rec.errors.push(format!("forecast: {e}")),
                }
                rec.model = Some(fit.model.clone());
                if variant == Variant::Gneit {
                    gneit_fit = Some(fit);
                }
            }
            Err(e) => rec.errors.push(format!("fit: {e}")),
        }
        records.push(rec);
    }
    records.sort_by_key(|r| cfg.models.iter().position(|v| *v == r.variant));
    Ok(records)
}

/// Runs every case and run, in parallel, and aggregates.
pub fn run_sim_study(cfg: &SimConfig) -> Result<SimReport> {
    let bad = cfg.violations();
    if !bad.is_empty() {
        return Err(Error::Domain(bad.join("; ")));
    }
    let jobs: Vec<(u8, usize)> = cfg
        .cases
        .iter()
        .flat_map(|&c| (0..cfg.n_runs).map(move |r| (c, r)))
        .collect();
    let results: Vec<Vec<RunRecord>> = jobs
        .par_iter()
        .map(|&(case_id, run)| {
            let started = std::time::Instant::now();
            let out = run_one(cfg, case_id, run).unwrap_or_else(|e| {
                cfg.models
                    .iter()
                    .map(|&variant| RunRecord {
                        case_id,
                        run,
                        seed: run_seed(cfg.seed, case_id, run),
                        variant,
                        param_names: Vec::new(),
                        estimates: Vec::new(),
                        model: None,
                        objective_value: None,
                        converged: None,
                        iterations: None,
                        interpolation: None,
                        forecast: None,
                        alpha_curve: None,
                        nu_curve: None,
                        errors: vec![format!("simulation: {e}")],
                    })
                    .collect()
            });
            log::info!("case {case_id} run {run} done in {:.1?}", started.elapsed());
            out
        })
        .collect();
    let runs: Vec<RunRecord> = results.into_iter().flatten().collect();
    Ok(aggregate(cfg, runs))
}

fn aggregate(cfg: &SimConfig, runs: Vec<RunRecord>) -> SimReport {
    let failures = runs.iter().filter(|r| !r.errors.is_empty()).count();
    let mut parameters = Vec::new();
    let mut scores = Vec::new();
    let mut curves = Vec::new();
    let mut bands = Vec::new();
    let times = cfg.grid_times();
    for &case_id in &cfg.cases {
        for &variant in &cfg.models {
            let recs: Vec<&RunRecord> = runs
                .iter()
                .filter(|r| r.case_id == case_id && r.variant == variant && r.model.is_some())
                .collect();
            let names = candidate_spec(variant, case_id)
                .param_names()
                .into_iter()
                .filter(|n| n != "a")
                .collect::<Vec<_>>();
            for name in names {
                let xs: Vec<f64> = recs
                    .iter()
                    .filter_map(|r| r.param_names.iter().position(|n| *n == name).map(|i| r.estimates[i]))
                    .collect();
                let (mean, sd) = mean_sd(&xs);
                parameters.push(ParamSummary {
                    case_id,
                    variant,
                    truth: true_value(case_id, variant, &name),
                    name,
                    mean,
                    sd,
                    n: xs.len(),
                });
            }
            for (set, pick) in [
                ("interpolation", (|r: &RunRecord| r.interpolation.clone()) as fn(&RunRecord) -> Option<SetScores>),
                ("forecast", |r: &RunRecord| r.forecast.clone()),
            ] {
                let sets: Vec<SetScores> = recs.iter().filter_map(|r| pick(r)).collect();
                let metrics: [(&str, Vec<f64>); 4] = [
                    ("rmse", sets.iter().map(|s| s.rmse).collect()),
                    ("mcrps", sets.iter().map(|s| s.mcrps).collect()),
                    ("mlogs", sets.iter().filter_map(|s| s.mlogs).collect()),
                    ("g", sets.iter().map(|s| s.g).collect()),
                ];
                for (metric, xs) in metrics {
                    let (mean, sd) = mean_sd(&xs);
                    scores.push(ScoreSummary {
                        case_id,
                        variant,
                        set: set.into(),
                        metric: metric.into(),
                        mean,
                        sd,
                        n: xs.len(),
                    });
                }
                let k = cfg.p_grid.len();
                let n = sets.len();
                let avg = |f: fn(&SetScores) -> &Vec<f64>| -> Vec<f64> {
                    (0..k)
                        .map(|i| sets.iter().map(|s| f(s)[i]).sum::<f64>() / n.max(1) as f64)
                        .collect()
                };
                curves.push(CurveSummary {
                    case_id,
                    variant,
                    set: set.into(),
                    p: cfg.p_grid.clone(),
                    coverage: avg(|s| &s.coverage),
                    width: avg(|s| &s.width),
                    n,
                });
            }
            if variant == Variant::Tvar {
                let Ok((alpha_fn, nu_fn)) = case_fns(case_id, cfg.raw_index_time) else { continue };
                for (function, truth_fn, pick) in [
                    ("alpha", &alpha_fn, (|r: &RunRecord| r.alpha_curve.clone()) as fn(&RunRecord) -> Option<Vec<f64>>),
                    ("nu", &nu_fn, |r: &RunRecord| r.nu_curve.clone()),
                ] {
                    let cs: Vec<Vec<f64>> = recs.iter().filter_map(|r| pick(r)).collect();
                    let truth: Vec<f64> = times.iter().map(|&t| truth_fn.value(t)).collect();
                    let mut mean = Vec::new();
                    let mut sd = Vec::new();
                    let mut covered = Vec::new();
                    for (i, tv) in truth.iter().enumerate() {
                        let xs: Vec<f64> = cs.iter().map(|c| c[i]).collect();
                        let (m, s) = mean_sd(&xs);
                        covered.push((tv - m).abs() <= 1.96 * s);
                        mean.push(m);
                        sd.push(s);
                    }
                    let coverage_fraction = covered.iter().filter(|c| **c).count() as f64 / times.len() as f64;
                    bands.push(BandSummary {
                        case_id,
                        function: function.into(),
                        times: times.clone(),
                        truth,
                        mean,
                        sd,
                        covered,
                        coverage_fraction,
                        n: cs.len(),
                    });
                }
            }
        }
    }
    SimReport {
        config: cfg.clone(),
        runs,
        parameters,
        scores,
        curves,
        bands,
        failures,
    }
}

impl SimReport {
    /// Per-run differences `score(a) - score(b)` of a metric on a set, over
    /// runs where both are available.
    pub fn paired_differences(&self, case_id: u8, a: Variant, b: Variant, set: &str, metric: &str) -> Vec<f64> {
        let get = |r: &RunRecord| -> Option<f64> {
            let s = match set {
                "interpolation" => r.interpolation.as_ref(),
                "forecast" => r.forecast.as_ref(),
                _ => None,
            }?;
            match metric {
                "rmse" => Some(s.rmse),
                "mcrps" => Some(s.mcrps),
                "mlogs" => s.mlogs,
                "g" => Some(s.g),
                _ => None,
            }
        };
        let mut out = Vec::new();
        for run in 0..self.config.n_runs {
            let find = |v: Variant| {
                self.runs
                    .iter()
                    .find(|r| r.case_id == case_id && r.run == run && r.variant == v)
                    .and_then(get)
            };
            if let (Some(x), Some(y)) = (find(a), find(b)) {
                out.push(x - y);
            }
        }
        out
    }

    pub fn parameter(&self, case_id: u8, variant: Variant, name: &str) -> Option<&ParamSummary> {
        self.parameters
            .iter()
            .find(|p| p.case_id == case_id && p.variant == variant && p.name == name)
    }

    pub fn band(&self, case_id: u8, function: &str) -> Option<&BandSummary> {
        self.bands.iter().find(|b| b.case_id == case_id && b.function == function)
    }

    /// `case,variant,param,mean,sd,truth,n`
    pub fn write_parameters_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["case", "variant", "param", "mean", "sd", "truth", "n"])?;
        for p in &self.parameters {
            out.write_record([
                p.case_id.to_string(),
                p.variant.to_string(),
                p.name.clone(),
                p.mean.to_string(),
                p.sd.to_string(),
                p.truth.map(|v| v.to_string()).unwrap_or_default(),
                p.n.to_string(),
            ])?;
        }
        out.flush()?;
        Ok(())
    }

    /// `case,variant,set,metric,mean,sd,n`
    pub fn write_scores_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["case", "variant", "set", "metric", "mean", "sd", "n"])?;
        for s in &self.scores {
            out.write_record([
                s.case_id.to_string(),
                s.variant.to_string(),
                s.set.clone(),
                s.metric.clone(),
                s.mean.to_string(),
                s.sd.to_string(),
                s.n.to_string(),
            ])?;
        }
        out.flush()?;
        Ok(())
    }

    /// `case,variant,set,p,coverage,width`
    pub fn write_curves_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["case", "variant", "set", "p", "coverage", "width"])?;
        for c in &self.curves {
            for i in 0..c.p.len() {
                out.write_record([
                    c.case_id.to_string(),
                    c.variant.to_string(),
                    c.set.clone(),
                    c.p[i].to_string(),
                    c.coverage[i].to_string(),
                    c.width[i].to_string(),
                ])?;
            }
        }
        out.flush()?;
        Ok(())
    }

    /// `case,function,t,truth,mean,sd,lower,upper,covered`
    pub fn write_bands_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["case", "function", "t", "truth", "mean", "sd", "lower", "upper", "covered"])?;
        for b in &self.bands {
            for i in 0..b.times.len() {
                out.write_record([
                    b.case_id.to_string(),
                    b.function.clone(),
                    b.times[i].to_string(),
                    b.truth[i].to_string(),
                    b.mean[i].to_string(),
                    b.sd[i].to_string(),
                    (b.mean[i] - 1.96 * b.sd[i]).to_string(),
                    (b.mean[i] + 1.96 * b.sd[i]).to_string(),
                    b.covered[i].to_string(),
                ])?;
            }
        }
        out.flush()?;
        Ok(())
    }

    /// `case,run,variant,set,rmse,mcrps,mlogs,g,objective,converged`
    pub fn write_runs_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record([
            "case", "run", "variant", "set", "rmse", "mcrps", "mlogs", "g", "objective", "converged",
        ])?;
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        for r in &self.runs {
            for (set, s) in [("interpolation", &r.interpolation), ("forecast", &r.forecast)] {
                let Some(s) = s else { continue };
                out.write_record([
                    r.case_id.to_string(),
                    r.run.to_string(),
                    r.variant.to_string(),
                    set.to_string(),
                    s.rmse.to_string(),
                    s.mcrps.to_string(),
                    opt(s.mlogs),
                    s.g.to_string(),
                    opt(r.objective_value),
                    r.converged.map(|c| c.to_string()).unwrap_or_default(),
                ])?;
            }
        }
        out.flush()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn case_truths() {
        let times: Vec<f64> = (0..21).map(|k| k as f64 / 20.0).collect();
        let c4 = case_truth(4, false, &times).unwrap();
        assert!((c4.alpha_fn.value(0.37) - 20.0).abs() < 1e-12);
        assert!((c4.nu_fn.value(0.37) - 1.0).abs() < 1e-12);
        let c2 = case_truth(2, false, &times).unwrap();
        assert_eq!((c2.alpha_fn.value(0.0), c2.nu_fn.value(0.0)), (25.0, 0.5));
        assert_eq!((c2.alpha_fn.value(1.0), c2.nu_fn.value(1.0)), (15.0, 1.5));
        let c1 = case_truth(1, false, &times).unwrap();
        assert!((c1.alpha_fn.value(0.5) - 35.0).abs() < 1e-12);
        assert!((c1.nu_fn.value(0.5) - 1.5).abs() < 1e-12);
        let c3 = case_truth(3, false, &times).unwrap();
        assert!((c3.alpha_fn.value(0.5) - 15.0).abs() < 1e-12);
        assert!(case_truth(5, false, &times).is_err());
        let raw = case_truth(1, true, &times).unwrap();
        assert!((raw.alpha_fn.value(1.0) - (20.0 + 15.0 * (PI / 20.0).sin())).abs() < 1e-12);
    }

    #[test]
    fn split_shapes() {
        let cfg = SimConfig {
            nx: 25,
            ny: 25,
            nt: 21,
            ..SimConfig::default()
        };
        let pts = cfg.grid_points();
        let data = Dataset::new(pts.clone(), vec![0.0; pts.len()]).unwrap();
        let s = split_validation(&data, &SplitSpec::default()).unwrap();
        assert_eq!(s.forecast.times(), vec![0.95, 1.0]);
        assert_eq!(s.forecast.len(), 625 * 2);
        assert_eq!(s.interpolation.len(), 125 * 19);
        assert_eq!(s.training.len(), 500 * 19);
        let none = SplitSpec {
            interpolation_fraction: 0.0,
            forecast_horizon: 0,
            seed: 3,
        };
        assert_eq!(split_validation(&data, &none).unwrap().training.len(), data.len());
        let too_far = SplitSpec {
            forecast_horizon: 21,
            ..SplitSpec::default()
        };
        assert!(split_validation(&data, &too_far).is_err());
    }

    #[test]
    fn default_config_is_valid() {
        assert!(SimConfig::default().violations().is_empty());
        let bad = SimConfig {
            nt: 3,
            n_runs: 0,
            ..SimConfig::default()
        };
        let v = bad.violations();
        assert!(v.len() >= 2, "{v:?}");
        assert!(v.iter().any(|s| s.contains("M_t")));
    }
}
