//! Space-time covariance families: the time-varying model, the
//! Gneiting-Matérn model and the separable model, plus matrix assembly.

use faer::Mat;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};
use rustc_hash::FxHashMap;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::specialfn::{ln_gamma_unchecked, BesselOrder};

/// A location in the plane observed at a (usually scaled) time.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpaceTimePoint {
    pub s: [f64; 2],
    pub t: f64,
}

impl SpaceTimePoint {
    pub fn new(x: f64, y: f64, t: f64) -> Self {
        Self { s: [x, y], t }
    }

    pub fn is_finite(&self) -> bool {
        self.s[0].is_finite() && self.s[1].is_finite() && self.t.is_finite()
    }

    /// Euclidean distance between the spatial coordinates.
    pub fn spatial_distance(&self, other: &Self) -> f64 {
        (self.s[0] - other.s[0]).hypot(self.s[1] - other.s[1])
    }
}

/// A positive function of time.
///
/// Fitted models always use `LogPoly`, `exp(c0 + c1 t + ...)`. The tabulated
/// shapes exist so simulation truths can be represented exactly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum TimeFn {
    LogPoly(Vec<f64>),
    Shape(TimeShape),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TimeShape {
    /// `base + amplitude * sin(frequency * t)`
    Sine {
        base: f64,
        amplitude: f64,
        frequency: f64,
    },
    /// `intercept + slope * t`
    Linear { intercept: f64, slope: f64 },
    /// `base + amplitude * expit(rate * t - shift)`
    Logistic {
        base: f64,
        amplitude: f64,
        rate: f64,
        shift: f64,
    },
    /// `at_reference` when `t == reference_time`, `elsewhere` otherwise.
    Step {
        reference_time: f64,
        at_reference: f64,
        elsewhere: f64,
    },
}

impl TimeFn {
    pub fn constant(value: f64) -> Self {
        TimeFn::LogPoly(vec![value.ln()])
    }

    /// Polynomial coefficients when this is a log-polynomial.
    pub fn log_poly(&self) -> Option<&[f64]> {
        match self {
            TimeFn::LogPoly(c) => Some(c),
            TimeFn::Shape(_) => None,
        }
    }

    /// Value at `t`, without domain checks.
    pub fn value(&self, t: f64) -> f64 {
        match self {
            TimeFn::LogPoly(c) => c.iter().rev().fold(0.0, |acc, &ck| acc * t + ck).exp(),
            TimeFn::Shape(shape) => match *shape {
                TimeShape::Sine {
                    base,
                    amplitude,
                    frequency,
                } => base + amplitude * (frequency * t).sin(),
                TimeShape::Linear { intercept, slope } => intercept + slope * t,
                TimeShape::Logistic {
                    base,
                    amplitude,
                    rate,
                    shift,
                } => base + amplitude * expit(rate * t - shift),
                TimeShape::Step {
                    reference_time,
                    at_reference,
                    elsewhere,
                } => {
                    if t == reference_time {
                        at_reference
                    } else {
                        elsewhere
                    }
                }
            },
        }
    }
}

pub(crate) fn expit(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Evaluates a time function, rejecting non-finite times and non-positive values.
pub fn eval_timefn(f: &TimeFn, t: f64) -> Result<f64> {
    if !t.is_finite() {
        return Err(Error::domain(format!("time must be finite, got {t}")));
    }
    let v = f.value(t);
    if !(v > 0.0 && v.is_finite()) {
        return Err(Error::domain(format!(
            "time function is not positive and finite at t={t} (value {v})"
        )));
    }
    Ok(v)
}

/// Arithmetic mean of `alpha_fn` over the training times.
pub fn alpha_bar(alpha_fn: &TimeFn, training_times: &[f64]) -> Result<f64> {
    if training_times.is_empty() {
        return Err(Error::domain("alpha_bar needs at least one training time"));
    }
    let mut sum = 0.0;
    for &t in training_times {
        sum += eval_timefn(alpha_fn, t)?;
    }
    Ok(sum / training_times.len() as f64)
}

fn default_d() -> u32 {
    2
}

/// The time-varying model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TvarModel {
    pub sigma: f64,
    pub a: f64,
    pub gamma: f64,
    pub beta: f64,
    pub delta: f64,
    #[serde(rename = "alpha_log_poly")]
    pub alpha_fn: TimeFn,
    #[serde(rename = "nu_log_poly")]
    pub nu_fn: TimeFn,
    pub alpha_bar: f64,
    #[serde(default = "default_d")]
    pub d: u32,
    #[serde(default)]
    pub nugget: f64,
}

/// Gneiting-Matérn model with constant spatial scale and smoothness.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GneitModel {
    pub sigma: f64,
    pub a: f64,
    pub gamma: f64,
    pub beta: f64,
    pub delta: f64,
    pub alpha: f64,
    pub nu: f64,
    #[serde(default = "default_d")]
    pub d: u32,
    #[serde(default)]
    pub nugget: f64,
}

/// Separable model (the `beta = 0` member of the Gneiting-Matérn class).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SepModel {
    pub sigma: f64,
    pub a: f64,
    pub gamma: f64,
    pub delta: f64,
    pub alpha: f64,
    pub nu: f64,
    #[serde(default = "default_d")]
    pub d: u32,
    #[serde(default)]
    pub nugget: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "variant", rename_all = "snake_case")]
pub enum CovarianceModel {
    Tvar(TvarModel),
    Gneit(GneitModel),
    Sep(SepModel),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Tvar,
    Gneit,
    Sep,
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Variant::Tvar => "tvar",
            Variant::Gneit => "gneit",
            Variant::Sep => "sep",
        })
    }
}

impl std::str::FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "tvar" | "tvar.m" => Ok(Variant::Tvar),
            "gneit" | "gneit.m" => Ok(Variant::Gneit),
            "sep" | "sep.m" => Ok(Variant::Sep),
            other => Err(Error::domain(format!("unknown model variant '{other}'"))),
        }
    }
}

impl From<TvarModel> for CovarianceModel {
    fn from(m: TvarModel) -> Self {
        CovarianceModel::Tvar(m)
    }
}

impl From<GneitModel> for CovarianceModel {
    fn from(m: GneitModel) -> Self {
        CovarianceModel::Gneit(m)
    }
}

impl From<SepModel> for CovarianceModel {
    fn from(m: SepModel) -> Self {
        CovarianceModel::Sep(m)
    }
}

fn check_common(sigma: f64, a: f64, gamma: f64, beta: f64, delta: f64, d: u32, nugget: f64) -> Result<()> {
    let mut bad = Vec::new();
    if !(sigma > 0.0 && sigma.is_finite()) {
        bad.push(format!("sigma={sigma} must be positive"));
    }
    if !(a > 0.0 && a.is_finite()) {
        bad.push(format!("a={a} must be positive"));
    }
    if !(gamma > 0.0 && gamma <= 1.0) {
        bad.push(format!("gamma={gamma} must lie in (0, 1]"));
    }
    if !(0.0..=1.0).contains(&beta) {
        bad.push(format!("beta={beta} must lie in [0, 1]"));
    }
    if !(delta >= 0.0 && delta.is_finite()) {
        bad.push(format!("delta={delta} must be nonnegative"));
    }
    if d == 0 {
        bad.push("d must be at least 1".to_string());
    }
    if !(nugget >= 0.0 && nugget.is_finite()) {
        bad.push(format!("nugget={nugget} must be nonnegative"));
    }
    if bad.is_empty() {
        Ok(())
    } else {
        Err(Error::Domain(bad.join("; ")))
    }
}

fn check_positive(name: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::domain(format!("{name}={v} must be positive")))
    }
}

impl CovarianceModel {
    pub fn variant(&self) -> Variant {
        match self {
            CovarianceModel::Tvar(_) => Variant::Tvar,
            CovarianceModel::Gneit(_) => Variant::Gneit,
            CovarianceModel::Sep(_) => Variant::Sep,
        }
    }

    pub fn sigma(&self) -> f64 {
        match self {
            CovarianceModel::Tvar(m) => m.sigma,
            CovarianceModel::Gneit(m) => m.sigma,
            CovarianceModel::Sep(m) => m.sigma,
        }
    }

    pub fn nugget(&self) -> f64 {
        match self {
            CovarianceModel::Tvar(m) => m.nugget,
            CovarianceModel::Gneit(m) => m.nugget,
            CovarianceModel::Sep(m) => m.nugget,
        }
    }

    pub fn set_nugget(&mut self, nugget: f64) {
        match self {
            CovarianceModel::Tvar(m) => m.nugget = nugget,
            CovarianceModel::Gneit(m) => m.nugget = nugget,
            CovarianceModel::Sep(m) => m.nugget = nugget,
        }
    }

    pub fn d(&self) -> u32 {
        match self {
            CovarianceModel::Tvar(m) => m.d,
            CovarianceModel::Gneit(m) => m.d,
            CovarianceModel::Sep(m) => m.d,
        }
    }

    /// Prior variance at a single point, `sigma^2 + nugget`.
    pub fn point_variance(&self) -> f64 {
        self.sigma().powi(2) + self.nugget()
    }

    /// Checks the parameter bounds that do not depend on data.
    pub fn validate(&self) -> Result<()> {
        match self {
            CovarianceModel::Tvar(m) => {
                check_common(m.sigma, m.a, m.gamma, m.beta, m.delta, m.d, m.nugget)?;
                check_positive("alpha_bar", m.alpha_bar)
            }
            CovarianceModel::Gneit(m) => {
                check_common(m.sigma, m.a, m.gamma, m.beta, m.delta, m.d, m.nugget)?;
                check_positive("alpha", m.alpha)?;
                check_positive("nu", m.nu)
            }
            CovarianceModel::Sep(m) => {
                check_common(m.sigma, m.a, m.gamma, 0.0, m.delta, m.d, m.nugget)?;
                check_positive("alpha", m.alpha)?;
                check_positive("nu", m.nu)
            }
        }
    }

    /// Like [`validate`](Self::validate), and also checks that the time
    /// functions are positive at every supplied time.
    pub fn validate_on_times(&self, times: &[f64]) -> Result<()> {
        self.validate()?;
        if let CovarianceModel::Tvar(m) = self {
            for &t in times {
                eval_timefn(&m.alpha_fn, t)?;
                eval_timefn(&m.nu_fn, t)?;
            }
        }
        Ok(())
    }
}

/// Matérn correlation `M(h | alpha, nu)`.
pub fn matern(h_norm: f64, alpha: f64, nu: f64) -> Result<f64> {
    if !(h_norm >= 0.0 && h_norm.is_finite()) {
        return Err(Error::domain(format!("distance must be finite and nonnegative, got {h_norm}")));
    }
    check_positive("alpha", alpha)?;
    check_positive("nu", nu)?;
    Ok(MaternCorrelation::new(nu)?.eval(alpha * h_norm))
}

/// Matérn correlation for a fixed smoothness, evaluated at `x = alpha * h`.
#[derive(Debug, Clone)]
pub struct MaternCorrelation {
    order: BesselOrder,
    ln_norm: f64,
}

impl MaternCorrelation {
    pub fn new(nu: f64) -> Result<Self> {
        check_positive("nu", nu)?;
        Ok(Self {
            order: BesselOrder::new(nu)?,
            ln_norm: (1.0 - nu) * std::f64::consts::LN_2 - ln_gamma_unchecked(nu),
        })
    }

    pub fn nu(&self) -> f64 {
        self.order.nu()
    }

    #[inline]
    pub fn eval(&self, x: f64) -> f64 {
        if x == 0.0 {
            return 1.0;
        }
        let v = (self.ln_norm + self.order.nu() * x.ln() + self.order.ln_k(x)).exp();
        v.min(1.0)
    }
}

/// Bernstein function `psi(w) = (a w^gamma + 1)^beta`.
pub fn bernstein_psi(w: f64, a: f64, gamma: f64, beta: f64) -> Result<f64> {
    if !(w >= 0.0 && w.is_finite()) {
        return Err(Error::domain(format!("w must be finite and nonnegative, got {w}")));
    }
    check_common(1.0, a, gamma, beta, 0.0, 1, 0.0)?;
    Ok((beta * (a * w.powf(gamma)).ln_1p()).exp())
}

/// Everything that depends only on a pair of times.
///
/// The covariance at spatial distance `h` is
/// `exp(ln_scale) * M(range * h | nu)`.
#[derive(Debug, Clone)]
pub struct PairKernel {
    pub ln_scale: f64,
    pub range: f64,
    pub corr: MaternCorrelation,
}

impl PairKernel {
    #[inline]
    pub fn eval(&self, h: f64) -> f64 {
        self.ln_scale.exp() * self.corr.eval(self.range * h)
    }
}

/// `ln(a |dt|^(2 gamma) + 1)`
#[inline]
fn ln_w(a: f64, gamma: f64, dt: f64) -> f64 {
    if dt == 0.0 {
        0.0
    } else {
        (a * (dt * dt).powf(gamma)).ln_1p()
    }
}

/// Builds the pair kernel for times `(ti, tj)`.
pub fn pair_kernel(model: &CovarianceModel, ti: f64, tj: f64) -> Result<PairKernel> {
    pair_kernel_with(model, ti, tj, &mut |nu| MaternCorrelation::new(nu))
}

pub(crate) fn pair_kernel_with(
    model: &CovarianceModel,
    ti: f64,
    tj: f64,
    corr_for: &mut dyn FnMut(f64) -> Result<MaternCorrelation>,
) -> Result<PairKernel> {
    let dt = ti - tj;
    let (ln_scale, range, nu) = match model {
        CovarianceModel::Tvar(m) => {
            let ln_s2 = 2.0 * m.sigma.ln();
            if ti == tj {
                let alpha = eval_timefn(&m.alpha_fn, ti)?;
                let nu = eval_timefn(&m.nu_fn, ti)?;
                (ln_s2, alpha, nu)
            } else {
                let ai = eval_timefn(&m.alpha_fn, ti)?;
                let aj = eval_timefn(&m.alpha_fn, tj)?;
                let ni = eval_timefn(&m.nu_fn, ti)?;
                let nj = eval_timefn(&m.nu_fn, tj)?;
                let lw = ln_w(m.a, m.gamma, dt);
                let psi_m1 = (m.beta * lw).exp_m1();
                let ab2 = m.alpha_bar * m.alpha_bar;
                let dd = psi_m1 / ab2 + 0.5 * (1.0 / (ai * ai) + 1.0 / (aj * aj));
                let nu = 0.5 * (ni + nj);
                let half_d = 0.5 * m.d as f64;
                let ln_pref = ln_gamma_unchecked(nu)
                    - 0.5 * (ln_gamma_unchecked(ni) + ln_gamma_unchecked(nj))
                    - half_d * (ai.ln() + aj.ln())
                    - half_d * dd.ln()
                    - m.delta * lw;
                if !ln_pref.is_finite() || !(dd > 0.0) {
                    return Err(Error::Evaluation(format!(
                        "tvar kernel at (t_i={ti}, t_j={tj}): alpha=({ai}, {aj}), nu=({ni}, {nj}), \
                         alpha_bar={}, ln prefactor={ln_pref}",
                        m.alpha_bar
                    )));
                }
                (ln_s2 + ln_pref, 1.0 / dd.sqrt(), nu)
            }
        }
        CovarianceModel::Gneit(m) => {
            let lw = ln_w(m.a, m.gamma, dt);
            let ln_pref = -(m.beta * m.d as f64 / 2.0 + m.delta) * lw;
            (2.0 * m.sigma.ln() + ln_pref, m.alpha * (-0.5 * m.beta * lw).exp(), m.nu)
        }
        CovarianceModel::Sep(m) => {
            let lw = ln_w(m.a, m.gamma, dt);
            (2.0 * m.sigma.ln() - m.delta * lw, m.alpha, m.nu)
        }
    };
    if !(range.is_finite() && range > 0.0 && ln_scale.is_finite()) {
        return Err(Error::Evaluation(format!(
            "{} kernel at (t_i={ti}, t_j={tj}): range={range}, ln scale={ln_scale}",
            model.variant()
        )));
    }
    Ok(PairKernel {
        ln_scale,
        range,
        corr: corr_for(nu)?,
    })
}

/// Covariance between two points, including the nugget when they coincide.
pub fn cov_eval(model: &CovarianceModel, p1: &SpaceTimePoint, p2: &SpaceTimePoint) -> Result<f64> {
    // Order the pair so that both argument orders share every floating-point step.
    let (p, q) = if (p1.t, p1.s[0], p1.s[1]) <= (p2.t, p2.s[0], p2.s[1]) {
        (p1, p2)
    } else {
        (p2, p1)
    };
    let k = pair_kernel(model, p.t, q.t)?;
    let mut v = k.eval(p.spatial_distance(q));
    if p1 == p2 {
        v += model.nugget();
    }
    Ok(v)
}

/// Purely temporal covariance `C(0, t_i, t_j)` of the time-varying model.
pub fn purely_temporal(model: &TvarModel, t_i: f64, t_j: f64) -> Result<f64> {
    let m = CovarianceModel::Tvar(model.clone());
    let (a, b) = if t_i <= t_j { (t_i, t_j) } else { (t_j, t_i) };
    Ok(pair_kernel(&m, a, b)?.eval(0.0))
}

/// Lazily built pair kernels for a fixed set of distinct times.
pub(crate) struct KernelTable<'m> {
    model: &'m CovarianceModel,
    times: Vec<f64>,
    kernels: Vec<Option<PairKernel>>,
    corr: FxHashMap<u64, MaternCorrelation>,
}

impl<'m> KernelTable<'m> {
    pub(crate) fn new(model: &'m CovarianceModel, times: Vec<f64>) -> Self {
        let n = times.len();
        Self {
            model,
            times,
            kernels: vec![None; n * n],
            corr: FxHashMap::default(),
        }
    }

    pub(crate) fn get(&mut self, i: usize, j: usize) -> Result<&PairKernel> {
        let (i, j) = if i <= j { (i, j) } else { (j, i) };
        let idx = i * self.times.len() + j;
        if self.kernels[idx].is_none() {
            let corr = &mut self.corr;
            let k = pair_kernel_with(self.model, self.times[i], self.times[j], &mut |nu| {
                if let Some(c) = corr.get(&nu.to_bits()) {
                    return Ok(c.clone());
                }
                let c = MaternCorrelation::new(nu)?;
                corr.insert(nu.to_bits(), c.clone());
                Ok(c)
            })?;
            self.kernels[idx] = Some(k);
        }
        Ok(self.kernels[idx].as_ref().unwrap())
    }
}

/// Distinct times (sorted) and, for each point, the index of its time.
pub(crate) fn index_times(points: &[SpaceTimePoint]) -> (Vec<f64>, Vec<usize>) {
    let mut times: Vec<f64> = points.iter().map(|p| p.t).collect();
    times.sort_by(f64::total_cmp);
    times.dedup();
    let idx = points
        .iter()
        .map(|p| times.binary_search_by(|x| x.total_cmp(&p.t)).unwrap())
        .collect();
    (times, idx)
}

/// Cross-covariance matrix between two point sets; the nugget is never added.
pub fn cross_cov_matrix(
    model: &CovarianceModel,
    rows: &[SpaceTimePoint],
    cols: &[SpaceTimePoint],
) -> Result<Mat<f64>> {
    let mut all = rows.to_vec();
    all.extend_from_slice(cols);
    let (times, idx) = index_times(&all);
    let (ri, ci) = idx.split_at(rows.len());
    let mut table = KernelTable::new(model, times);
    let mut out = Mat::<f64>::zeros(rows.len(), cols.len());
    for (j, q) in cols.iter().enumerate() {
        for (i, p) in rows.iter().enumerate() {
            let k = table.get(ri[i], ci[j])?;
            out[(i, j)] = k.eval(p.spatial_distance(q));
        }
    }
    Ok(out)
}

/// Covariance matrix of `points`, nugget on the diagonal.
///
/// The returned matrix is not regularized; factorization applies the
/// jitter policy (see [`crate::linalg::factorize`]).
pub fn build_cov_matrix(model: &CovarianceModel, points: &[SpaceTimePoint]) -> Result<Mat<f64>> {
    if points.is_empty() {
        return Err(Error::domain("covariance matrix needs at least one point"));
    }
    let (times, idx) = index_times(points);
    let mut table = KernelTable::new(model, times);
    let n = points.len();
    let mut out = Mat::<f64>::zeros(n, n);
    // Identical (time pair, distance) combinations are common on grids.
    let mut memo: FxHashMap<(usize, usize, u64), f64> = FxHashMap::default();
    let nugget = model.nugget();
    for j in 0..n {
        for i in j..n {
            let (a, b) = if idx[i] <= idx[j] { (idx[i], idx[j]) } else { (idx[j], idx[i]) };
            let h = points[i].spatial_distance(&points[j]);
            let key = (a, b, h.to_bits());
            let v = match memo.get(&key) {
                Some(&v) => v,
                None => {
                    let v = table.get(a, b)?.eval(h);
                    memo.insert(key, v);
                    v
                }
            };
            out[(i, j)] = v;
            out[(j, i)] = v;
        }
        out[(j, j)] += nugget;
    }
    Ok(out)
}

/// The matrix `Q = [1/zeta(t_i, t_j)^2]` of the time-varying model.
pub fn inverse_range_matrix(model: &TvarModel, times: &[f64]) -> Result<Mat<f64>> {
    let n = times.len();
    let mut inv_a2 = Vec::with_capacity(n);
    for &t in times {
        let a = eval_timefn(&model.alpha_fn, t)?;
        inv_a2.push(1.0 / (a * a));
    }
    let ab2 = model.alpha_bar * model.alpha_bar;
    Ok(Mat::from_fn(n, n, |i, j| {
        let psi_m1 = (model.beta * ln_w(model.a, model.gamma, times[i] - times[j])).exp_m1();
        psi_m1 / ab2 + 0.5 * (inv_a2[i] + inv_a2[j])
    }))
}

/// Largest `x' Q x` over random unit-norm contrast vectors (`sum x = 0`).
pub fn contrast_form_max(q: &Mat<f64>, trials: usize, seed: u64) -> f64 {
    let n = q.nrows();
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut worst = f64::NEG_INFINITY;
    let mut x = vec![0.0; n];
    for _ in 0..trials {
        for xi in x.iter_mut() {
            *xi = StandardNormal.sample(&mut rng);
        }
        let mean = x.iter().sum::<f64>() / n as f64;
        x.iter_mut().for_each(|xi| *xi -= mean);
        let norm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm == 0.0 {
            worst = worst.max(0.0);
            continue;
        }
        x.iter_mut().for_each(|xi| *xi /= norm);
        let mut form = 0.0;
        for j in 0..n {
            let mut col = 0.0;
            for i in 0..n {
                col += q[(i, j)] * x[i];
            }
            form += col * x[j];
        }
        worst = worst.max(form);
    }
    worst
}

/// Frobenius norm.
pub fn frobenius(m: &Mat<f64>) -> f64 {
    let mut s = 0.0;
    for j in 0..m.ncols() {
        for i in 0..m.nrows() {
            s += m[(i, j)] * m[(i, j)];
        }
    }
    s.sqrt()
}

/// Numerical conditional negative definiteness check of `Q`.
///
/// Returns the largest contrast quadratic form found; valid models give a
/// value no larger than rounding error relative to `frobenius(Q)`.
pub fn cnd_check(model: &TvarModel, times: &[f64], trials: usize, seed: u64) -> Result<f64> {
    if times.len() < 2 {
        return Err(Error::domain("cnd_check needs at least two times"));
    }
    let q = inverse_range_matrix(model, times)?;
    Ok(contrast_form_max(&q, trials, seed))
}
