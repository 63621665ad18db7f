//! Exact Gaussian-process simulation, likelihood and kriging.

use faer::MatRef;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernels::{build_cov_matrix, cross_cov_matrix, CovarianceModel, SpaceTimePoint};
use crate::linalg::{factorize, gaussian_loglik};
use crate::specialfn::std_normal_quantile;

/// Observations at space-time points.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub points: Vec<SpaceTimePoint>,
    pub values: Vec<f64>,
}

impl Dataset {
    pub fn new(points: Vec<SpaceTimePoint>, values: Vec<f64>) -> Result<Self> {
        if points.len() != values.len() {
            return Err(Error::Data(format!(
                "{} points but {} values",
                points.len(),
                values.len()
            )));
        }
        if let Some(i) = points.iter().position(|p| !p.is_finite()) {
            return Err(Error::Data(format!("point {i} has non-finite coordinates")));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Data(format!("value {i} is not finite")));
        }
        Ok(Self { points, values })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Distinct times in increasing order.
    pub fn times(&self) -> Vec<f64> {
        let mut t: Vec<f64> = self.points.iter().map(|p| p.t).collect();
        t.sort_by(f64::total_cmp);
        t.dedup();
        t
    }

    pub fn subset(&self, idx: &[usize]) -> Dataset {
        Dataset {
            points: idx.iter().map(|&i| self.points[i]).collect(),
            values: idx.iter().map(|&i| self.values[i]).collect(),
        }
    }

    /// Index pairs of points that share all three coordinates.
    pub fn duplicates(&self) -> Vec<(usize, usize)> {
        let mut order: Vec<usize> = (0..self.len()).collect();
        let key = |i: usize| {
            let p = &self.points[i];
            (p.t.to_bits(), p.s[0].to_bits(), p.s[1].to_bits())
        };
        order.sort_by_key(|&i| key(i));
        order
            .windows(2)
            .filter(|w| key(w[0]) == key(w[1]))
            .map(|w| (w[0].min(w[1]), w[0].max(w[1])))
            .collect()
    }
}

/// Gaussian predictive laws `N(mean_i, variance_i)` at the targets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictiveDistribution {
    pub targets: Vec<SpaceTimePoint>,
    pub mean: Vec<f64>,
    pub variance: Vec<f64>,
}

impl PredictiveDistribution {
    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    pub fn sd(&self) -> Vec<f64> {
        self.variance.iter().map(|v| v.sqrt()).collect()
    }
}

/// One draw from `N(0, Sigma)` at `points`.
///
/// Draws come from ChaCha20 seeded with `seed` (`seed_from_u64`), taken
/// sequentially as standard normals `z`, and the result is `L z`.
pub fn simulate_gp(model: &CovarianceModel, points: &[SpaceTimePoint], seed: u64) -> Result<Vec<f64>> {
    model.validate()?;
    let sigma = build_cov_matrix(model, points)?;
    let f = factorize(sigma.as_ref(), model.sigma().powi(2))?;
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let n = points.len();
    let z: Vec<f64> = (0..n).map(|_| StandardNormal.sample(&mut rng)).collect();
    let l = f.l();
    let mut x = vec![0.0; n];
    for (i, xi) in x.iter_mut().enumerate() {
        let mut s = 0.0;
        for (k, zk) in z.iter().enumerate().take(i + 1) {
            s += l[(i, k)] * zk;
        }
        *xi = s;
    }
    Ok(x)
}

/// Gaussian log-likelihood of a zero-mean process.
pub fn full_loglik(model: &CovarianceModel, data: &Dataset) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::Data("log-likelihood of an empty dataset".into()));
    }
    let sigma = build_cov_matrix(model, &data.points)?;
    let f = factorize(sigma.as_ref(), model.sigma().powi(2))?;
    Ok(gaussian_loglik(&f, &data.values))
}

/// Simple kriging of a zero-mean process.
///
/// The predictive variance is that of a new observation at the target, so
/// it includes the nugget; cross-covariances never do.
pub fn krige(
    model: &CovarianceModel,
    observed: &Dataset,
    targets: &[SpaceTimePoint],
) -> Result<PredictiveDistribution> {
    if observed.is_empty() {
        return Err(Error::Data("kriging needs at least one observation".into()));
    }
    let sigma = build_cov_matrix(model, &observed.points)?;
    let f = factorize(sigma.as_ref(), model.sigma().powi(2))?;
    let k = cross_cov_matrix(model, &observed.points, targets)?;
    let weights_data = f.solve(&observed.values);
    let v = f.half_solve_mat(k.as_ref());
    let prior = model.point_variance();
    let mut mean = Vec::with_capacity(targets.len());
    let mut variance = Vec::with_capacity(targets.len());
    for j in 0..targets.len() {
        let mut m = 0.0;
        let mut reduction = 0.0;
        for i in 0..observed.len() {
            m += k[(i, j)] * weights_data[i];
            reduction += v[(i, j)] * v[(i, j)];
        }
        mean.push(m);
        variance.push(clamp_variance(prior - reduction, prior, j)?);
    }
    Ok(PredictiveDistribution {
        targets: targets.to_vec(),
        mean,
        variance,
    })
}

fn clamp_variance(v: f64, prior: f64, j: usize) -> Result<f64> {
    if v >= 0.0 {
        Ok(v.min(prior))
    } else if v >= -1e-10 * prior.max(1.0) {
        Ok(0.0)
    } else {
        Err(Error::Numerical(format!(
            "kriging variance {v:e} at target {j} is negative beyond rounding"
        )))
    }
}

/// Central `p` prediction intervals `(lower, upper)`.
pub fn prediction_interval(pd: &PredictiveDistribution, p: f64) -> Result<Vec<(f64, f64)>> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::domain(format!("interval probability {p} must lie in (0, 1)")));
    }
    let z = std_normal_quantile(0.5 * (1.0 + p))?;
    Ok(pd
        .mean
        .iter()
        .zip(&pd.variance)
        .map(|(&m, &v)| {
            let half = z * v.sqrt();
            (m - half, m + half)
        })
        .collect())
}

/// How observations are chosen around a prediction time.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum Neighborhood {
    /// Observations within `steps` time steps of the target time.
    Interpolate { steps: f64 },
    /// Observations with times in `[from, to]`, independent of the target.
    Forecast { from: f64, to: f64 },
}

impl Default for Neighborhood {
    fn default() -> Self {
        Neighborhood::Interpolate { steps: 6.0 }
    }
}

/// Smallest positive spacing between distinct times.
pub fn time_step(times: &[f64]) -> Option<f64> {
    times
        .windows(2)
        .map(|w| w[1] - w[0])
        .filter(|d| *d > 0.0)
        .min_by(f64::total_cmp)
}

/// Selects the observations used to predict at `target_time`.
pub fn neighborhood_select(observed: &Dataset, target_time: f64, hood: Neighborhood) -> Result<Dataset> {
    let keep: Vec<usize> = match hood {
        Neighborhood::Interpolate { steps } => {
            if !(steps > 0.0) {
                return Err(Error::domain(format!("window of {steps} time steps must be positive")));
            }
            let times = observed.times();
            let reach = match time_step(&times) {
                Some(dt) => steps * dt * (1.0 + 1e-9),
                None => 0.0,
            };
            (0..observed.len())
                .filter(|&i| (observed.points[i].t - target_time).abs() <= reach)
                .collect()
        }
        Neighborhood::Forecast { from, to } => {
            if !(to >= from) {
                return Err(Error::domain(format!("forecast range [{from}, {to}] is empty")));
            }
            let slack = 1e-9 * (to - from).abs().max(1e-300);
            (0..observed.len())
                .filter(|&i| {
                    let t = observed.points[i].t;
                    t >= from - slack && t <= to + slack
                })
                .collect()
        }
    };
    if keep.is_empty() {
        return Err(Error::Data(format!(
            "no observations in the neighbourhood of t={target_time}; use a larger window"
        )));
    }
    Ok(observed.subset(&keep))
}

/// Kriging where each distinct target time gets its own neighbourhood.
pub fn krige_neighborhood(
    model: &CovarianceModel,
    observed: &Dataset,
    targets: &[SpaceTimePoint],
    hood: Neighborhood,
) -> Result<PredictiveDistribution> {
    let mut mean = vec![0.0; targets.len()];
    let mut variance = vec![0.0; targets.len()];
    let mut times: Vec<f64> = targets.iter().map(|p| p.t).collect();
    times.sort_by(f64::total_cmp);
    times.dedup();
    if let Neighborhood::Forecast { .. } = hood {
        // one fixed block serves every target
        let sub = neighborhood_select(observed, f64::NAN, hood)?;
        return krige(model, &sub, targets);
    }
    for t in times {
        let idx: Vec<usize> = (0..targets.len()).filter(|&i| targets[i].t == t).collect();
        let tg: Vec<SpaceTimePoint> = idx.iter().map(|&i| targets[i]).collect();
        let sub = neighborhood_select(observed, t, hood)?;
        let pd = krige(model, &sub, &tg)?;
        for (k, &i) in idx.iter().enumerate() {
            mean[i] = pd.mean[k];
            variance[i] = pd.variance[k];
        }
    }
    Ok(PredictiveDistribution {
        targets: targets.to_vec(),
        mean,
        variance,
    })
}

/// Explicit conditional Gaussian from a joint covariance; for testing.
#[doc(hidden)]
pub fn conditional_gaussian_dense(
    joint: MatRef<'_, f64>,
    n_obs: usize,
    values: &[f64],
) -> Result<(Vec<f64>, Vec<f64>)> {
    let n = joint.nrows();
    let soo = joint.submatrix(0, 0, n_obs, n_obs).to_owned();
    let inv = crate::linalg::spd_inverse(soo.as_ref(), "observed covariance")?;
    let mut mean = Vec::new();
    let mut var = Vec::new();
    for t in n_obs..n {
        let k: Vec<f64> = (0..n_obs).map(|i| joint[(i, t)]).collect();
        let mut m = 0.0;
        let mut r = 0.0;
        for i in 0..n_obs {
            for j in 0..n_obs {
                m += k[i] * inv[(i, j)] * values[j];
                r += k[i] * inv[(i, j)] * k[j];
            }
        }
        mean.push(m);
        var.push(joint[(t, t)] - r);
    }
    Ok((mean, var))
}
