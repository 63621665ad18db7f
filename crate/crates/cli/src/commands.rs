use std::collections::HashMap;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::Result;
use serde::Serialize;
use tvcov_core::gp::{krige_neighborhood, simulate_gp, time_step};
use tvcov_core::harness::{case_truth, run_sim_study, split_validation, SimConfig};
use tvcov_core::io::{read_dataset_path, read_points, read_predictions, write_dataset_path, write_predictions};
use tvcov_core::rcl::{fit_grid, make_partitions};
use tvcov_core::scoring::{score_predictions, ScoreReport};
use tvcov_core::trend::{detrend, ols_fit, retrend, TrendModel};
use tvcov_core::{
    CovarianceModel, Dataset, Error, FitResult, GridData, Neighborhood, PredictiveDistribution, SpaceTimePoint,
};

use crate::config::{Command, RunConfig, TimeScale};

pub fn dispatch(cmd: Command, cfg: &RunConfig) -> Result<()> {
    let out = cfg.output.as_deref().expect("validated");
    fs::create_dir_all(out)?;
    match cmd {
        Command::Simulate => simulate(cfg, out),
        Command::Trend => trend(cfg, out),
        Command::Fit => fit(cfg, out),
        Command::Predict => predict(cfg, out),
        Command::Validate => validate(cfg, out),
        Command::Simstudy => simstudy(cfg, out),
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    w.flush()?;
    log::info!("wrote {}", path.display());
    Ok(())
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path)?;
    serde_json::from_str(&text)
        .map_err(|e| Error::Data(format!("{} is not valid: {e}", path.display())).into())
}

fn csv_file(path: PathBuf) -> Result<BufWriter<File>> {
    log::info!("writing {}", path.display());
    Ok(BufWriter::new(File::create(path)?))
}

fn scale_time(t: f64, scale: Option<TimeScale>, line: usize) -> Result<f64> {
    match scale {
        None => Ok(t),
        Some(TimeScale::DayOfYear) => {
            if !(1.0..=365.0).contains(&t) {
                return Err(Error::Data(format!("row {line}: day of year {t} is outside 1..=365")).into());
            }
            Ok((t - 1.0) / 364.0)
        }
    }
}

fn load_input(cfg: &RunConfig) -> Result<Dataset> {
    let path = cfg.input.as_deref().expect("validated");
    let mut data = read_dataset_path(path, cfg.model.nugget > 0.0)?;
    for (i, p) in data.points.iter_mut().enumerate() {
        p.t = scale_time(p.t, cfg.scale_time, i + 2)?;
    }
    log::info!("read {} observations from {}", data.len(), path.display());
    Ok(data)
}

fn load_trend(cfg: &RunConfig) -> Result<Option<TrendModel>> {
    cfg.trend.as_deref().map(read_json).transpose()
}

fn simulate(cfg: &RunConfig, out: &Path) -> Result<()> {
    let s = &cfg.simulate;
    let grid = SimConfig {
        nx: s.nx,
        ny: s.ny,
        nt: s.nt,
        ..SimConfig::default()
    };
    let model = match &s.model {
        Some(m) => m.clone(),
        None => CovarianceModel::Tvar(case_truth(s.case, s.raw_index_time, &grid.grid_times())?),
    };
    let points = grid.grid_points();
    let values = simulate_gp(&model, &points, cfg.seed)?;
    write_dataset_path(&Dataset::new(points, values)?, &out.join("data.csv"))?;
    write_json(&out.join("truth.json"), &model)
}

fn trend(cfg: &RunConfig, out: &Path) -> Result<()> {
    let data = load_input(cfg)?;
    let model = ols_fit(&data.points, &data.values, cfg.harmonics)?;
    write_json(&out.join("trend.json"), &model)?;
    write_dataset_path(&detrend(&model, &data), &out.join("residuals.csv"))?;
    Ok(())
}

fn fit_dataset(cfg: &RunConfig, data: &Dataset) -> Result<FitResult> {
    let grid = GridData::from_dataset(data)?;
    let plan = make_partitions(grid.n_locations(), grid.n_times(), cfg.partition, cfg.seed)
        .map_err(|e| crate::UsageError(format!("invalid configuration: {e}")))?;
    log::info!(
        "fitting {} on {} locations x {} times",
        cfg.model.variant,
        grid.n_locations(),
        grid.n_times()
    );
    let fit = fit_grid(&grid, &cfg.model, &plan, &cfg.optimizer, &[])?;
    for w in &fit.warnings {
        log::warn!("{w}");
    }
    Ok(fit)
}

fn fit(cfg: &RunConfig, out: &Path) -> Result<()> {
    let mut data = load_input(cfg)?;
    if let Some(t) = load_trend(cfg)? {
        data = detrend(&t, &data);
    }
    let fit = fit_dataset(cfg, &data)?;
    write_json(&out.join("fit.json"), &fit)
}

fn load_model(path: &Path) -> Result<CovarianceModel> {
    let text = fs::read_to_string(path)?;
    if let Ok(f) = serde_json::from_str::<FitResult>(&text) {
        return Ok(f.model);
    }
    serde_json::from_str::<CovarianceModel>(&text).map_err(|e| {
        Error::Data(format!("{} is neither a fit result nor a covariance model: {e}", path.display())).into()
    })
}

fn predict(cfg: &RunConfig, out: &Path) -> Result<()> {
    let model = load_model(cfg.fit.as_deref().expect("validated"))?;
    let mut data = load_input(cfg)?;
    let trend = load_trend(cfg)?;
    if let Some(t) = &trend {
        data = detrend(t, &data);
    }
    let mut targets = read_points(File::open(cfg.targets.as_deref().expect("validated"))?)?;
    for (i, p) in targets.iter_mut().enumerate() {
        p.t = scale_time(p.t, cfg.scale_time, i + 2)?;
    }
    let mut pd = krige_neighborhood(&model, &data, &targets, cfg.neighborhood)?;
    if let Some(t) = &trend {
        pd = retrend(t, &pd);
    }
    write_predictions(&pd, &cfg.probabilities, csv_file(out.join("predictions.csv"))?)?;
    Ok(())
}

fn key(p: &SpaceTimePoint) -> [u64; 3] {
    [p.s[0].to_bits(), p.s[1].to_bits(), p.t.to_bits()]
}

fn truths_for(pd: &PredictiveDistribution, data: &Dataset) -> Result<Vec<f64>> {
    let lookup: HashMap<[u64; 3], f64> = data.points.iter().map(key).zip(data.values.iter().copied()).collect();
    pd.targets
        .iter()
        .enumerate()
        .map(|(i, p)| {
            lookup.get(&key(p)).copied().ok_or_else(|| {
                Error::Data(format!(
                    "prediction row {} at ({}, {}, {}) has no observed value",
                    i + 2,
                    p.s[0],
                    p.s[1],
                    p.t
                ))
                .into()
            })
        })
        .collect()
}

#[derive(Serialize)]
struct ValidationScores {
    interpolation: Option<ScoreReport>,
    forecast: Option<ScoreReport>,
}

fn validate(cfg: &RunConfig, out: &Path) -> Result<()> {
    let data = load_input(cfg)?;
    if let Some(path) = &cfg.predictions {
        let pd = read_predictions(File::open(path)?)?;
        let truths = truths_for(&pd, &data)?;
        let report = score_predictions(&pd, &truths, &cfg.p_grid)?;
        report.write_curve_csv(csv_file(out.join("curves.csv"))?)?;
        return write_json(&out.join("scores.json"), &report);
    }

    let split = split_validation(&data, &cfg.split)?;
    log::info!(
        "split: {} training, {} interpolation, {} forecast",
        split.training.len(),
        split.interpolation.len(),
        split.forecast.len()
    );
    let trend = if cfg.detrend {
        let t = ols_fit(&split.training.points, &split.training.values, cfg.harmonics)?;
        write_json(&out.join("trend.json"), &t)?;
        Some(t)
    } else {
        None
    };
    let training = match &trend {
        Some(t) => detrend(t, &split.training),
        None => split.training.clone(),
    };
    let fit = fit_dataset(cfg, &training)?;
    write_json(&out.join("fit.json"), &fit)?;

    let times = training.times();
    let dt = time_step(&times).unwrap_or(1.0);
    let last = *times.last().expect("training data is non-empty");
    let sets = [
        (
            "interpolation",
            &split.interpolation,
            Neighborhood::Interpolate {
                steps: cfg.interpolation_steps,
            },
        ),
        (
            "forecast",
            &split.forecast,
            Neighborhood::Forecast {
                from: last - cfg.forecast_steps * dt,
                to: last,
            },
        ),
    ];
    let mut reports = Vec::new();
    for (name, target, hood) in sets {
        if target.is_empty() {
            reports.push(None);
            continue;
        }
        let mut pd = krige_neighborhood(&fit.model, &training, &target.points, hood)?;
        if let Some(t) = &trend {
            pd = retrend(t, &pd);
        }
        write_predictions(&pd, &cfg.probabilities, csv_file(out.join(format!("predictions_{name}.csv")))?)?;
        let report = score_predictions(&pd, &target.values, &cfg.p_grid)?;
        report.write_curve_csv(csv_file(out.join(format!("curves_{name}.csv")))?)?;
        reports.push(Some(report));
    }
    let forecast = reports.pop().flatten();
    let interpolation = reports.pop().flatten();
    write_json(
        &out.join("scores.json"),
        &ValidationScores {
            interpolation,
            forecast,
        },
    )
}

fn simstudy(cfg: &RunConfig, out: &Path) -> Result<()> {
    let report = run_sim_study(&cfg.simstudy)?;
    if report.failures > 0 {
        log::warn!("{} candidate fits failed; see report.json", report.failures);
    }
    write_json(&out.join("report.json"), &report)?;
    report.write_parameters_csv(csv_file(out.join("table1.csv"))?)?;
    report.write_scores_csv(csv_file(out.join("scores.csv"))?)?;
    report.write_curves_csv(csv_file(out.join("curves.csv"))?)?;
    report.write_bands_csv(csv_file(out.join("bands.csv"))?)?;
    report.write_runs_csv(csv_file(out.join("runs.csv"))?)?;
    Ok(())
}
