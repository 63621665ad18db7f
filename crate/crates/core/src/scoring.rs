//! Verification of Gaussian predictive distributions.

use std::f64::consts::PI;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gp::PredictiveDistribution;
use crate::specialfn::{std_normal, std_normal_quantile};

fn check_lengths(a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(Error::domain(format!("length mismatch: {a} predictions vs {b} truths")));
    }
    if a == 0 {
        return Err(Error::domain("nothing to score"));
    }
    Ok(())
}

pub fn rmse(pred: &[f64], truth: &[f64]) -> Result<f64> {
    check_lengths(pred.len(), truth.len())?;
    let sse: f64 = pred.iter().zip(truth).map(|(p, t)| (p - t) * (p - t)).sum();
    Ok((sse / pred.len() as f64).sqrt())
}

/// CRPS of `N(mu, sigma^2)` at `y`.
pub fn crps_gaussian(y: f64, mu: f64, sigma: f64) -> Result<f64> {
    if !(sigma >= 0.0) {
        return Err(Error::domain(format!("sigma must be nonnegative, got {sigma}")));
    }
    if sigma == 0.0 {
        return Ok((y - mu).abs());
    }
    let z = (y - mu) / sigma;
    let (pdf, cdf) = std_normal(z);
    Ok(sigma * (z * (2.0 * cdf - 1.0) + 2.0 * pdf - 1.0 / PI.sqrt()))
}

/// Negative log predictive density.
pub fn log_score(y: f64, mu: f64, sigma: f64) -> Result<f64> {
    if !(sigma > 0.0) {
        return Err(Error::domain(format!("sigma must be positive, got {sigma}")));
    }
    let z = (y - mu) / sigma;
    Ok(0.5 * (2.0 * PI).ln() + sigma.ln() + 0.5 * z * z)
}

/// `{0.01, 0.02, ..., 0.99}`
pub fn default_p_grid() -> Vec<f64> {
    (1..100).map(|k| k as f64 / 100.0).collect()
}

fn check_grid(p_grid: &[f64]) -> Result<()> {
    if p_grid.is_empty() {
        return Err(Error::domain("empty probability grid"));
    }
    if p_grid.iter().any(|p| !(*p > 0.0 && *p < 1.0)) {
        return Err(Error::domain("probabilities must lie in (0, 1)"));
    }
    if p_grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::domain("probability grid must be strictly increasing"));
    }
    Ok(())
}

/// Empirical coverage and mean width of the central p-intervals.
pub fn coverage_and_width(
    pd: &PredictiveDistribution,
    truths: &[f64],
    p_grid: &[f64],
) -> Result<(Vec<f64>, Vec<f64>)> {
    check_lengths(pd.len(), truths.len())?;
    check_grid(p_grid)?;
    let sd = pd.sd();
    let n = truths.len() as f64;
    let mean_sd = sd.iter().sum::<f64>() / n;
    let mut coverage = Vec::with_capacity(p_grid.len());
    let mut width = Vec::with_capacity(p_grid.len());
    for &p in p_grid {
        let z = std_normal_quantile(0.5 * (1.0 + p))?;
        let inside = truths
            .iter()
            .zip(&pd.mean)
            .zip(&sd)
            .filter(|((y, m), s)| (*y - *m).abs() <= z * **s)
            .count();
        coverage.push(inside as f64 / n);
        width.push(2.0 * z * mean_sd);
    }
    Ok((coverage, width))
}

/// `G = 1 - int_0^1 (3 a(p) - 2)(xi(p) - p) dp`, `a(p) = 1{xi(p) >= p}`.
///
/// Trapezoid rule on the grid. On `[0, p_1]` and `[p_n, 1]` the coverage is
/// extrapolated linearly from the two nearest grid points, clamped to [0, 1].
pub fn goodness_g(p_grid: &[f64], coverage: &[f64]) -> f64 {
    assert_eq!(p_grid.len(), coverage.len(), "grid and coverage must align");
    if p_grid.is_empty() {
        return f64::NAN;
    }
    let integrand = |p: f64, xi: f64| {
        let a = if xi >= p { 1.0 } else { 0.0 };
        (3.0 * a - 2.0) * (xi - p)
    };
    let extend = |at: f64, i: usize, j: usize| {
        if i == j || p_grid[j] == p_grid[i] {
            return coverage[i];
        }
        let slope = (coverage[j] - coverage[i]) / (p_grid[j] - p_grid[i]);
        (coverage[i] + slope * (at - p_grid[i])).clamp(0.0, 1.0)
    };
    let last = p_grid.len() - 1;
    let mut pts: Vec<(f64, f64)> = Vec::with_capacity(p_grid.len() + 2);
    if p_grid[0] > 0.0 {
        pts.push((0.0, integrand(0.0, extend(0.0, 0, 1.min(last)))));
    }
    pts.extend(p_grid.iter().zip(coverage).map(|(&p, &xi)| (p, integrand(p, xi))));
    if p_grid[last] < 1.0 {
        pts.push((1.0, integrand(1.0, extend(1.0, last, last.saturating_sub(1)))));
    }
    let area: f64 = pts.windows(2).map(|w| 0.5 * (w[1].0 - w[0].0) * (w[0].1 + w[1].1)).sum();
    1.0 - area
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreReport {
    pub n: usize,
    pub rmse: f64,
    pub mcrps: f64,
    /// `None` when some predictive standard deviation is zero.
    pub mlogs: Option<f64>,
    pub g: f64,
    pub p_grid: Vec<f64>,
    pub empirical_coverage: Vec<f64>,
    pub avg_width: Vec<f64>,
}

/// All scores of `pd` against `truths`, averaged with equal weights.
pub fn score_predictions(pd: &PredictiveDistribution, truths: &[f64], p_grid: &[f64]) -> Result<ScoreReport> {
    check_lengths(pd.len(), truths.len())?;
    let sd = pd.sd();
    let n = truths.len();
    let mut crps = 0.0;
    let mut logs = Some(0.0);
    for i in 0..n {
        crps += crps_gaussian(truths[i], pd.mean[i], sd[i])?;
        logs = match logs {
            Some(acc) if sd[i] > 0.0 => Some(acc + log_score(truths[i], pd.mean[i], sd[i])?),
            _ => None,
        };
    }
    let (empirical_coverage, avg_width) = coverage_and_width(pd, truths, p_grid)?;
    Ok(ScoreReport {
        n,
        rmse: rmse(&pd.mean, truths)?,
        mcrps: crps / n as f64,
        mlogs: logs.map(|s| s / n as f64),
        g: goodness_g(p_grid, &empirical_coverage),
        p_grid: p_grid.to_vec(),
        empirical_coverage,
        avg_width,
    })
}

impl ScoreReport {
    /// Plot-ready curve: columns `p, coverage, width`.
    pub fn write_curve_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["p", "coverage", "width"])?;
        for k in 0..self.p_grid.len() {
            out.write_record([
                self.p_grid[k].to_string(),
                self.empirical_coverage[k].to_string(),
                self.avg_width[k].to_string(),
            ])?;
        }
        out.flush()?;
        Ok(())
    }
}
