//! Derivative-free minimization (Nelder-Mead with dimension-adaptive
//! coefficients).

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NelderMeadConfig {
    pub max_iters: usize,
    /// Converged when `|f_worst - f_best| <= tol * max(|f_best|, 1)`.
    pub tol: f64,
    /// Edge length of the initial simplex.
    pub initial_step: f64,
}

impl Default for NelderMeadConfig {
    fn default() -> Self {
        Self {
            max_iters: 2000,
            tol: 1e-6,
            initial_step: 0.25,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NelderMeadOutcome {
    pub x: Vec<f64>,
    pub f: f64,
    pub iterations: usize,
    pub evaluations: usize,
    pub converged: bool,
    /// Best objective value after each iteration.
    pub trace: Vec<f64>,
}

fn spread_small(fs: &[f64], tol: f64) -> bool {
    let best = fs[0];
    let worst = fs[fs.len() - 1];
    worst.is_finite() && (worst - best).abs() <= tol * best.abs().max(1.0)
}

/// Minimizes `f` from `x0`. Non-finite values are treated as `+inf`.
pub fn nelder_mead<F>(mut f: F, x0: &[f64], cfg: &NelderMeadConfig) -> NelderMeadOutcome
where
    F: FnMut(&[f64]) -> f64,
{
    let n = x0.len();
    let mut evals = 0usize;
    let mut eval = |x: &[f64]| {
        evals += 1;
        let v = f(x);
        if v.is_nan() {
            f64::INFINITY
        } else {
            v
        }
    };
    if n == 0 {
        let v = eval(x0);
        return NelderMeadOutcome {
            x: Vec::new(),
            f: v,
            iterations: 0,
            evaluations: 1,
            converged: true,
            trace: vec![v],
        };
    }
    let nf = n as f64;
    let (rho, chi, psi, sigma) = (1.0, 1.0 + 2.0 / nf, 0.75 - 0.5 / nf, 1.0 - 1.0 / nf);

    let mut simplex: Vec<Vec<f64>> = Vec::with_capacity(n + 1);
    simplex.push(x0.to_vec());
    for i in 0..n {
        let mut x = x0.to_vec();
        x[i] += cfg.initial_step;
        simplex.push(x);
    }
    let mut fs: Vec<f64> = simplex.iter().map(|x| eval(x)).collect();

    let mut trace = Vec::new();
    let mut iterations = 0;
    let mut converged = false;
    let mut centroid = vec![0.0; n];
    let mut order: Vec<usize> = (0..=n).collect();
    loop {
        order.sort_by(|&a, &b| fs[a].total_cmp(&fs[b]));
        simplex = order.iter().map(|&i| simplex[i].clone()).collect();
        fs = order.iter().map(|&i| fs[i]).collect();
        order = (0..=n).collect();
        trace.push(fs[0]);
        if spread_small(&fs, cfg.tol) {
            converged = true;
            break;
        }
        if iterations >= cfg.max_iters {
            break;
        }
        iterations += 1;

        centroid.iter_mut().for_each(|c| *c = 0.0);
        for x in &simplex[..n] {
            for (c, xi) in centroid.iter_mut().zip(x) {
                *c += xi / nf;
            }
        }
        let worst = simplex[n].clone();
        let along = |t: f64| -> Vec<f64> {
            centroid
                .iter()
                .zip(&worst)
                .map(|(c, w)| c + t * (c - w))
                .collect()
        };
        let xr = along(rho);
        let fr = eval(&xr);
        if fr < fs[0] {
            let xe = along(rho * chi);
            let fe = eval(&xe);
            if fe < fr {
                simplex[n] = xe;
                fs[n] = fe;
            } else {
                simplex[n] = xr;
                fs[n] = fr;
            }
            continue;
        }
        if fr < fs[n - 1] {
            simplex[n] = xr;
            fs[n] = fr;
            continue;
        }
        let (xc, fc, accept) = if fr < fs[n] {
            let xc = along(rho * psi);
            let fc = eval(&xc);
            let ok = fc <= fr;
            (xc, fc, ok)
        } else {
            let xc = along(-psi);
            let fc = eval(&xc);
            let ok = fc < fs[n];
            (xc, fc, ok)
        };
        if accept {
            simplex[n] = xc;
            fs[n] = fc;
            continue;
        }
        // shrink toward the best vertex
        let best = simplex[0].clone();
        for k in 1..=n {
            for (xi, bi) in simplex[k].iter_mut().zip(&best) {
                *xi = bi + sigma * (*xi - bi);
            }
            fs[k] = eval(&simplex[k]);
        }
    }
    NelderMeadOutcome {
        x: simplex[0].clone(),
        f: fs[0],
        iterations,
        evaluations: evals,
        converged,
        trace,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rosenbrock() {
        let f = |x: &[f64]| (1.0 - x[0]).powi(2) + 100.0 * (x[1] - x[0] * x[0]).powi(2);
        let cfg = NelderMeadConfig {
            max_iters: 5000,
            tol: 1e-14,
            initial_step: 0.5,
        };
        let out = nelder_mead(f, &[-1.2, 1.0], &cfg);
        assert!(out.converged);
        assert!((out.x[0] - 1.0).abs() < 1e-4 && (out.x[1] - 1.0).abs() < 1e-4, "{:?}", out.x);
    }

    #[test]
    fn quadratic_in_many_dims() {
        let f = |x: &[f64]| x.iter().enumerate().map(|(i, v)| (i as f64 + 1.0) * (v - 0.5).powi(2)).sum::<f64>();
        let cfg = NelderMeadConfig {
            max_iters: 20000,
            tol: 1e-16,
            initial_step: 0.3,
        };
        let out = nelder_mead(f, &[0.0; 8], &cfg);
        assert!(out.f < 1e-8, "{}", out.f);
    }

    #[test]
    fn infinite_region_is_avoided() {
        let f = |x: &[f64]| if x[0] < 0.0 { f64::NAN } else { (x[0] - 0.1).powi(2) };
        let out = nelder_mead(f, &[1.0], &NelderMeadConfig::default());
        assert!((out.x[0] - 0.1).abs() < 1e-2);
    }

    #[test]
    fn iteration_cap() {
        let f = |x: &[f64]| x[0].powi(2) + x[1].powi(2);
        let cfg = NelderMeadConfig {
            max_iters: 3,
            tol: 0.0,
            initial_step: 1.0,
        };
        let out = nelder_mead(f, &[5.0, 5.0], &cfg);
        assert!(!out.converged);
        assert_eq!(out.iterations, 3);
        assert_eq!(out.trace.len(), 4);
    }
}
