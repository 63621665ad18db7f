//! Random composite likelihood: partitions, the block objective, parameter
//! layouts and transforms, fitting, and the score / sensitivity / Godambe
//! computations.

use std::collections::BTreeMap;

use faer::Mat;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, Normal};
use rustc_hash::FxHashMap;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gp::Dataset;
use crate::kernels::{
    alpha_bar, expit, CovarianceModel, GneitModel, KernelTable, SepModel, SpaceTimePoint, TimeFn,
    TvarModel, Variant,
};
use crate::linalg::{factorize, gaussian_loglik, spd_inverse, sym_eigenvalues};
use crate::optim::{nelder_mead, NelderMeadConfig};

/// Largest single block (rows) accepted by [`expected_hessian`].
pub const HESSIAN_BLOCK_CAP: usize = 2000;
/// Largest total block dimension accepted by [`godambe_variance`].
pub const GODAMBE_TOTAL_CAP: usize = 4000;
/// Smoothness ceiling enforced while fitting.
pub const NU_MAX: f64 = 50.0;
const ALPHA_MAX: f64 = 1e6;
const TABLE_CAP: usize = 4_000_000;

// ---------------------------------------------------------------- partitions

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PartitionShape {
    pub m_s: usize,
    pub r_s: usize,
    pub m_t: usize,
    pub r_t: usize,
}

impl PartitionShape {
    pub const FULL: PartitionShape = PartitionShape {
        m_s: 1,
        r_s: 1,
        m_t: 1,
        r_t: 1,
    };
}

/// Random spatial and temporal block structure.
///
/// `spatial_blocks[r][b]` lists the location indices of block `b` in
/// replicate `r`; temporal blocks likewise list time indices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartitionPlan {
    pub n_locations: usize,
    pub n_times: usize,
    #[serde(flatten)]
    pub shape: PartitionShape,
    pub seed: u64,
    pub spatial_blocks: Vec<Vec<Vec<usize>>>,
    pub temporal_blocks: Vec<Vec<Vec<usize>>>,
}

fn random_partition(n: usize, m: usize, rng: &mut ChaCha20Rng) -> Vec<Vec<usize>> {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(rng);
    let (base, extra) = (n / m, n % m);
    let mut out = Vec::with_capacity(m);
    let mut start = 0;
    for b in 0..m {
        let len = base + usize::from(b < extra);
        let mut block = idx[start..start + len].to_vec();
        block.sort_unstable();
        out.push(block);
        start += len;
    }
    out
}

/// Random equisized partitions of locations and times.
pub fn make_partitions(
    n_locations: usize,
    n_times: usize,
    shape: PartitionShape,
    seed: u64,
) -> Result<PartitionPlan> {
    let mut bad = Vec::new();
    if shape.m_s == 0 || shape.m_s > n_locations {
        bad.push(format!("M_s={} must lie in [1, {n_locations}] (number of locations)", shape.m_s));
    }
    if shape.m_t == 0 || shape.m_t > n_times {
        bad.push(format!("M_t={} must lie in [1, {n_times}] (number of times)", shape.m_t));
    }
    if shape.r_s == 0 {
        bad.push("R_s must be at least 1".into());
    }
    if shape.r_t == 0 {
        bad.push("R_t must be at least 1".into());
    }
    if !bad.is_empty() {
        return Err(Error::Domain(bad.join("; ")));
    }
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let spatial_blocks = (0..shape.r_s)
        .map(|_| random_partition(n_locations, shape.m_s, &mut rng))
        .collect();
    let temporal_blocks = (0..shape.r_t)
        .map(|_| random_partition(n_times, shape.m_t, &mut rng))
        .collect();
    Ok(PartitionPlan {
        n_locations,
        n_times,
        shape,
        seed,
        spatial_blocks,
        temporal_blocks,
    })
}

impl PartitionPlan {
    /// The plan whose composite likelihood is the full likelihood.
    pub fn full(n_locations: usize, n_times: usize) -> Self {
        make_partitions(n_locations, n_times, PartitionShape::FULL, 0)
            .expect("full plan of a non-empty grid")
    }

    /// Replicates of `self` followed by those of `other`.
    pub fn concat(&self, other: &PartitionPlan) -> Result<PartitionPlan> {
        if self.n_locations != other.n_locations || self.n_times != other.n_times {
            return Err(Error::domain("plans cover different grids"));
        }
        let mut out = self.clone();
        out.spatial_blocks.extend(other.spatial_blocks.iter().cloned());
        out.temporal_blocks.extend(other.temporal_blocks.iter().cloned());
        out.shape.r_s = out.spatial_blocks.len();
        out.shape.r_t = out.temporal_blocks.len();
        Ok(out)
    }

    /// Checks disjointness, coverage and the size balance of every replicate.
    pub fn check(&self) -> Result<()> {
        let check_rep = |blocks: &Vec<Vec<usize>>, n: usize, what: &str| -> Result<()> {
            let mut seen = vec![false; n];
            for b in blocks {
                for &i in b {
                    if i >= n || seen[i] {
                        return Err(Error::domain(format!("{what} index {i} repeated or out of range")));
                    }
                    seen[i] = true;
                }
            }
            if seen.iter().any(|s| !s) {
                return Err(Error::domain(format!("{what} blocks do not cover every index")));
            }
            let min = blocks.iter().map(Vec::len).min().unwrap_or(0);
            let max = blocks.iter().map(Vec::len).max().unwrap_or(0);
            if max - min > 1 {
                return Err(Error::domain(format!("{what} block sizes range from {min} to {max}")));
            }
            Ok(())
        };
        for rep in &self.spatial_blocks {
            check_rep(rep, self.n_locations, "location")?;
        }
        for rep in &self.temporal_blocks {
            check_rep(rep, self.n_times, "time")?;
        }
        Ok(())
    }
}

// ---------------------------------------------------------------- grid data

/// Observations on a location x time index grid; missing cells are NaN.
#[derive(Debug, Clone, PartialEq)]
pub struct GridData {
    pub locations: Vec<[f64; 2]>,
    pub times: Vec<f64>,
    values: Vec<f64>,
}

impl GridData {
    /// `values[l * times.len() + t]`, NaN for missing.
    pub fn new(locations: Vec<[f64; 2]>, times: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        if values.len() != locations.len() * times.len() {
            return Err(Error::Data(format!(
                "grid of {} locations x {} times needs {} values, got {}",
                locations.len(),
                times.len(),
                locations.len() * times.len(),
                values.len()
            )));
        }
        if locations.is_empty() || times.is_empty() {
            return Err(Error::Data("grid has no locations or no times".into()));
        }
        Ok(Self {
            locations,
            times,
            values,
        })
    }

    /// Groups a dataset by distinct location (sorted by x, then y) and
    /// distinct time (sorted).
    pub fn from_dataset(data: &Dataset) -> Result<Self> {
        if data.is_empty() {
            return Err(Error::Data("empty dataset".into()));
        }
        let mut locs: Vec<[f64; 2]> = data.points.iter().map(|p| p.s).collect();
        locs.sort_by(|a, b| a[0].total_cmp(&b[0]).then(a[1].total_cmp(&b[1])));
        locs.dedup_by(|a, b| a[0].to_bits() == b[0].to_bits() && a[1].to_bits() == b[1].to_bits());
        let times = data.times();
        let loc_index: FxHashMap<(u64, u64), usize> = locs
            .iter()
            .enumerate()
            .map(|(i, s)| ((s[0].to_bits(), s[1].to_bits()), i))
            .collect();
        let nt = times.len();
        let mut values = vec![f64::NAN; locs.len() * nt];
        for (i, (p, &v)) in data.points.iter().zip(&data.values).enumerate() {
            let l = loc_index[&(p.s[0].to_bits(), p.s[1].to_bits())];
            let t = times.binary_search_by(|x| x.total_cmp(&p.t)).unwrap();
            let cell = &mut values[l * nt + t];
            if !cell.is_nan() {
                return Err(Error::Data(format!(
                    "observation {i} duplicates location ({}, {}) at time {}",
                    p.s[0], p.s[1], p.t
                )));
            }
            *cell = v;
        }
        Self::new(locs, times, values)
    }

    pub fn n_locations(&self) -> usize {
        self.locations.len()
    }

    pub fn n_times(&self) -> usize {
        self.times.len()
    }

    pub fn value(&self, l: usize, t: usize) -> Option<f64> {
        let v = self.values[l * self.times.len() + t];
        (!v.is_nan()).then_some(v)
    }

    pub fn point(&self, l: usize, t: usize) -> SpaceTimePoint {
        SpaceTimePoint {
            s: self.locations[l],
            t: self.times[t],
        }
    }

    /// Same grid with new values (NaN marks missing).
    pub fn with_values(&self, values: Vec<f64>) -> Result<Self> {
        Self::new(self.locations.clone(), self.times.clone(), values)
    }

    /// Observed cells in location-major order.
    pub fn to_dataset(&self) -> Dataset {
        let mut points = Vec::new();
        let mut values = Vec::new();
        for l in 0..self.n_locations() {
            for t in 0..self.n_times() {
                if let Some(v) = self.value(l, t) {
                    points.push(self.point(l, t));
                    values.push(v);
                }
            }
        }
        Dataset { points, values }
    }

    pub fn observed_values(&self) -> impl Iterator<Item = f64> + '_ {
        self.values.iter().copied().filter(|v| !v.is_nan())
    }
}

// ---------------------------------------------------------------- engine

/// One component likelihood of the composite objective.
#[derive(Debug, Clone)]
pub struct EngineBlock {
    pub label: String,
    pub weight: f64,
    /// (location, time) cells, observed only.
    pub cells: Vec<(usize, usize)>,
    pub values: Vec<f64>,
}

/// Precomputed block structure for repeated objective evaluations.
#[derive(Debug, Clone)]
pub struct RclEngine {
    locations: Vec<[f64; 2]>,
    times: Vec<f64>,
    dist_index: Vec<u32>,
    dists: Vec<f64>,
    blocks: Vec<EngineBlock>,
    /// Per block, table slots of the lower triangle in column order.
    slots: Option<Vec<Vec<u32>>>,
}

/// Distances equal to about 12 significant digits share a key, so grid
/// layouts whose differences round differently still share table entries.
fn distance_key(h: f64) -> u64 {
    (h.to_bits() + (1 << 11)) >> 12
}

/// Covariance values by (time pair, distance index), filled on demand.
struct CovLookup<'a> {
    kernels: KernelTable<'a>,
    dists: &'a [f64],
    nt: usize,
    table: Option<Vec<f64>>,
}

impl<'a> CovLookup<'a> {
    fn new(model: &'a CovarianceModel, times: &[f64], dists: &'a [f64]) -> Self {
        let nt = times.len();
        let size = nt * nt * dists.len();
        Self {
            kernels: KernelTable::new(model, times.to_vec()),
            dists,
            nt,
            table: (size <= TABLE_CAP).then(|| vec![f64::NAN; size]),
        }
    }

    /// Table entry by flat slot; the table must exist.
    #[inline]
    fn slot_value(&mut self, slot: u32) -> Result<f64> {
        let slot = slot as usize;
        let table = self.table.as_mut().unwrap();
        let v = table[slot];
        if !v.is_nan() {
            return Ok(v);
        }
        let nd = self.dists.len();
        let (pair, di) = (slot / nd, slot % nd);
        let (a, b) = (pair / self.nt, pair % self.nt);
        let v = self.kernels.get(a, b)?.eval(self.dists[di]);
        self.table.as_mut().unwrap()[slot] = v;
        Ok(v)
    }

    #[inline]
    fn value(&mut self, ti: usize, tj: usize, di: usize) -> Result<f64> {
        let (a, b) = if ti <= tj { (ti, tj) } else { (tj, ti) };
        match &mut self.table {
            Some(table) => {
                let slot = (a * self.nt + b) * self.dists.len() + di;
                let v = table[slot];
                if !v.is_nan() {
                    return Ok(v);
                }
                let v = self.kernels.get(a, b)?.eval(self.dists[di]);
                table[slot] = v;
                Ok(v)
            }
            None => Ok(self.kernels.get(a, b)?.eval(self.dists[di])),
        }
    }
}

impl RclEngine {
    pub fn new(grid: &GridData, plan: &PartitionPlan) -> Result<Self> {
        if plan.n_locations != grid.n_locations() || plan.n_times != grid.n_times() {
            return Err(Error::Data(format!(
                "plan covers {} locations x {} times but the data has {} x {}",
                plan.n_locations,
                plan.n_times,
                grid.n_locations(),
                grid.n_times()
            )));
        }
        plan.check()?;
        let nl = grid.n_locations();
        let mut dist_of: FxHashMap<u64, u32> = FxHashMap::default();
        let mut dists = Vec::new();
        let mut dist_index = vec![0u32; nl * nl];
        for i in 0..nl {
            for j in i..nl {
                let a = grid.locations[i];
                let b = grid.locations[j];
                let h = (a[0] - b[0]).hypot(a[1] - b[1]);
                let k = *dist_of.entry(distance_key(h)).or_insert_with(|| {
                    dists.push(h);
                    (dists.len() - 1) as u32
                });
                dist_index[i * nl + j] = k;
                dist_index[j * nl + i] = k;
            }
        }
        let mut blocks = Vec::new();
        let mut push = |label: String, cells: Vec<(usize, usize)>| {
            let cells: Vec<(usize, usize)> = cells
                .into_iter()
                .filter(|&(l, t)| grid.value(l, t).is_some())
                .collect();
            if cells.is_empty() {
                return;
            }
            let values = cells.iter().map(|&(l, t)| grid.value(l, t).unwrap()).collect();
            blocks.push(EngineBlock {
                label,
                weight: 0.5,
                cells,
                values,
            });
        };
        for (r, rep) in plan.spatial_blocks.iter().enumerate() {
            for (b, locs) in rep.iter().enumerate() {
                let cells = (0..grid.n_times())
                    .flat_map(|t| locs.iter().map(move |&l| (l, t)))
                    .collect();
                push(format!("spatial replicate {r} block {b}"), cells);
            }
        }
        for (r, rep) in plan.temporal_blocks.iter().enumerate() {
            for (b, ts) in rep.iter().enumerate() {
                let cells = ts.iter().flat_map(|&t| (0..nl).map(move |l| (l, t))).collect();
                push(format!("temporal replicate {r} block {b}"), cells);
            }
        }
        let nt = grid.n_times();
        let slots = (nt * nt * dists.len() <= TABLE_CAP).then(|| {
            blocks
                .iter()
                .map(|blk| {
                    let n = blk.cells.len();
                    let mut out = Vec::with_capacity(n * (n + 1) / 2);
                    for j in 0..n {
                        let (lj, tj) = blk.cells[j];
                        for &(li, ti) in &blk.cells[j..] {
                            let (a, b) = if ti <= tj { (ti, tj) } else { (tj, ti) };
                            let di = dist_index[li * nl + lj] as usize;
                            out.push(((a * nt + b) * dists.len() + di) as u32);
                        }
                    }
                    out
                })
                .collect()
        });
        Ok(Self {
            locations: grid.locations.clone(),
            times: grid.times.clone(),
            dist_index,
            dists,
            blocks,
            slots,
        })
    }

    pub fn blocks(&self) -> &[EngineBlock] {
        &self.blocks
    }

    pub fn block_points(&self, b: usize) -> Vec<SpaceTimePoint> {
        self.blocks[b]
            .cells
            .iter()
            .map(|&(l, t)| SpaceTimePoint {
                s: self.locations[l],
                t: self.times[t],
            })
            .collect()
    }

    /// Block values of another realization on the same grid.
    pub fn block_values(&self, grid: &GridData) -> Result<Vec<Vec<f64>>> {
        self.blocks
            .iter()
            .map(|b| {
                b.cells
                    .iter()
                    .map(|&(l, t)| {
                        grid.value(l, t)
                            .ok_or_else(|| Error::Data(format!("cell ({l}, {t}) is missing")))
                    })
                    .collect()
            })
            .collect()
    }

    fn lookup<'a>(&'a self, model: &'a CovarianceModel) -> CovLookup<'a> {
        CovLookup::new(model, &self.times, &self.dists)
    }

    fn cross_matrix(
        &self,
        lookup: &mut CovLookup<'_>,
        nugget: f64,
        rows: &[(usize, usize)],
        cols: &[(usize, usize)],
    ) -> Result<Mat<f64>> {
        let nl = self.locations.len();
        let mut m = Mat::<f64>::zeros(rows.len(), cols.len());
        for (j, &(lj, tj)) in cols.iter().enumerate() {
            for (i, &(li, ti)) in rows.iter().enumerate() {
                let di = self.dist_index[li * nl + lj] as usize;
                let mut v = lookup.value(ti, tj, di)?;
                if li == lj && ti == tj {
                    v += nugget;
                }
                m[(i, j)] = v;
            }
        }
        Ok(m)
    }

    /// Block covariance; with `lower_only` the strict upper triangle is
    /// left at zero, which is all the Cholesky factorization reads.
    fn block_matrix(
        &self,
        lookup: &mut CovLookup<'_>,
        nugget: f64,
        b: usize,
        lower_only: bool,
    ) -> Result<Mat<f64>> {
        let cells = &self.blocks[b].cells;
        let n = cells.len();
        let mut m = Mat::<f64>::zeros(n, n);
        if let (Some(slots), Some(_)) = (&self.slots, &lookup.table) {
            let mut slots = slots[b].iter();
            for j in 0..n {
                let col = &mut m.col_as_slice_mut(j)[j..];
                for v in col.iter_mut() {
                    *v = lookup.slot_value(*slots.next().unwrap())?;
                }
                col[0] += nugget;
            }
            if !lower_only {
                for j in 0..n {
                    for i in j + 1..n {
                        m[(j, i)] = m[(i, j)];
                    }
                }
            }
            return Ok(m);
        }
        let nl = self.locations.len();
        for j in 0..n {
            let (lj, tj) = cells[j];
            for i in j..n {
                let (li, ti) = cells[i];
                let di = self.dist_index[li * nl + lj] as usize;
                let v = lookup.value(ti, tj, di)?;
                m[(i, j)] = v;
                m[(j, i)] = v;
            }
            m[(j, j)] += nugget;
        }
        Ok(m)
    }

    /// Covariance matrix of every block, in block order.
    pub fn block_matrices(&self, model: &CovarianceModel) -> Result<Vec<Mat<f64>>> {
        let mut lookup = self.lookup(model);
        (0..self.blocks.len())
            .map(|b| {
                self.block_matrix(&mut lookup, model.nugget(), b, false)
                    .map_err(|e| e.in_block(&self.blocks[b].label))
            })
            .collect()
    }

    /// The composite log-likelihood `0.5 * sum_b loglik_b`.
    pub fn loglik(&self, model: &CovarianceModel) -> Result<f64> {
        let mut lookup = self.lookup(model);
        let s2 = model.sigma().powi(2);
        let mut total = 0.0;
        for (b, block) in self.blocks.iter().enumerate() {
            let m = self
                .block_matrix(&mut lookup, model.nugget(), b, true)
                .map_err(|e| e.in_block(&block.label))?;
            let f = factorize(m.as_ref(), s2).map_err(|e| e.in_block(&block.label))?;
            total += block.weight * gaussian_loglik(&f, &block.values);
        }
        Ok(total)
    }
}

/// Composite log-likelihood of `grid` under `model` and `plan`.
pub fn rcl_loglik(model: &CovarianceModel, grid: &GridData, plan: &PartitionPlan) -> Result<f64> {
    model.validate_on_times(&grid.times)?;
    RclEngine::new(grid, plan)?.loglik(model)
}

// ---------------------------------------------------------------- parameters

/// Map between a natural parameter and the optimizer's unconstrained scale.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ParamTransform {
    Log,
    /// `ln(x + offset)` for `x >= 0`.
    LogOffset { offset: f64 },
    /// `logit(x)` with `x` clamped to `[clamp, 1 - clamp]`.
    Logit { clamp: f64 },
    Identity,
}

impl ParamTransform {
    pub fn forward(&self, x: f64) -> Result<f64> {
        let bad = || Error::domain(format!("value {x} is outside the domain of {self:?}"));
        match *self {
            ParamTransform::Log if x > 0.0 && x.is_finite() => Ok(x.ln()),
            ParamTransform::LogOffset { offset } if x >= 0.0 && x.is_finite() => Ok((x + offset).ln()),
            ParamTransform::Logit { clamp } if (0.0..=1.0).contains(&x) => {
                let c = x.clamp(clamp, 1.0 - clamp);
                Ok((c / (1.0 - c)).ln())
            }
            ParamTransform::Identity if x.is_finite() => Ok(x),
            _ => Err(bad()),
        }
    }

    pub fn inverse(&self, u: f64) -> f64 {
        match *self {
            ParamTransform::Log => u.exp(),
            ParamTransform::LogOffset { offset } => (u.exp() - offset).max(0.0),
            ParamTransform::Logit { clamp } => expit(u).clamp(clamp, 1.0 - clamp),
            ParamTransform::Identity => u,
        }
    }
}

const DELTA_OFFSET: f64 = 1e-8;
const UNIT_CLAMP: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq)]
enum Domain {
    Positive,
    NonNegative,
    /// (0, 1]
    HalfOpenUnit,
    /// [0, 1]
    Unit,
    Real,
}

impl Domain {
    fn contains(&self, x: f64) -> bool {
        match self {
            Domain::Positive => x > 0.0 && x.is_finite(),
            Domain::NonNegative => x >= 0.0 && x.is_finite(),
            Domain::HalfOpenUnit => x > 0.0 && x <= 1.0,
            Domain::Unit => (0.0..=1.0).contains(&x),
            Domain::Real => x.is_finite(),
        }
    }
}

fn default_order() -> usize {
    2
}

fn default_d() -> u32 {
    2
}

/// What to fit: the variant, polynomial orders, fixed and initial values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub variant: Variant,
    #[serde(default = "default_order")]
    pub alpha_poly_order: usize,
    #[serde(default = "default_order")]
    pub nu_poly_order: usize,
    #[serde(default)]
    pub fixed: BTreeMap<String, f64>,
    #[serde(default)]
    pub initial: BTreeMap<String, f64>,
    #[serde(default = "default_d")]
    pub d: u32,
    /// Nugget held fixed during fitting.
    #[serde(default)]
    pub nugget: f64,
}

impl ModelSpec {
    pub fn new(variant: Variant) -> Self {
        Self {
            variant,
            alpha_poly_order: 2,
            nu_poly_order: 2,
            fixed: BTreeMap::new(),
            initial: BTreeMap::new(),
            d: 2,
            nugget: 0.0,
        }
    }

    pub fn with_orders(mut self, alpha: usize, nu: usize) -> Self {
        self.alpha_poly_order = alpha;
        self.nu_poly_order = nu;
        self
    }

    pub fn fix(mut self, name: &str, value: f64) -> Self {
        self.fixed.insert(name.to_string(), value);
        self
    }

    /// Every natural parameter name of the variant, in layout order.
    pub fn param_names(&self) -> Vec<String> {
        let mut names: Vec<String> = ["sigma", "a", "gamma"].iter().map(|s| s.to_string()).collect();
        if self.variant != Variant::Sep {
            names.push("beta".into());
        }
        names.push("delta".into());
        match self.variant {
            Variant::Tvar => {
                names.extend((0..=self.alpha_poly_order).map(|k| format!("alpha_{k}")));
                names.extend((0..=self.nu_poly_order).map(|k| format!("nu_{k}")));
            }
            Variant::Gneit | Variant::Sep => {
                names.push("alpha".into());
                names.push("nu".into());
            }
        }
        names
    }

    pub fn validate(&self) -> Result<()> {
        let names = self.param_names();
        let mut bad = Vec::new();
        for (kind, map) in [("fixed", &self.fixed), ("initial", &self.initial)] {
            for (k, &v) in map {
                match names.iter().position(|n| n == k) {
                    None => bad.push(format!("{kind} parameter '{k}' is not a {} parameter", self.variant)),
                    Some(_) if !domain_of(k).contains(v) => {
                        bad.push(format!("{kind} value {k}={v} is out of bounds"))
                    }
                    Some(_) => {}
                }
            }
        }
        if self.d == 0 {
            bad.push("d must be at least 1".into());
        }
        if !(self.nugget >= 0.0 && self.nugget.is_finite()) {
            bad.push(format!("nugget={} must be nonnegative", self.nugget));
        }
        if bad.is_empty() {
            Ok(())
        } else {
            Err(Error::Domain(bad.join("; ")))
        }
    }
}

fn domain_of(name: &str) -> Domain {
    match name {
        "sigma" | "a" | "alpha" | "nu" => Domain::Positive,
        "delta" => Domain::NonNegative,
        "gamma" => Domain::HalfOpenUnit,
        "beta" => Domain::Unit,
        _ => Domain::Real,
    }
}

fn default_transform(name: &str) -> ParamTransform {
    match domain_of(name) {
        Domain::Positive => ParamTransform::Log,
        Domain::NonNegative => ParamTransform::LogOffset {
            offset: DELTA_OFFSET,
        },
        Domain::HalfOpenUnit | Domain::Unit => ParamTransform::Logit { clamp: UNIT_CLAMP },
        Domain::Real => ParamTransform::Identity,
    }
}

/// Free parameters of a spec, their transforms, and the training times
/// that define the Tvar `alpha_bar`.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamLayout {
    spec: ModelSpec,
    names: Vec<String>,
    free: Vec<usize>,
    transforms: Vec<ParamTransform>,
    training_times: Vec<f64>,
}

impl ParamLayout {
    pub fn new(spec: ModelSpec, training_times: Vec<f64>) -> Result<Self> {
        spec.validate()?;
        if training_times.is_empty() {
            return Err(Error::domain("at least one training time is required"));
        }
        let names = spec.param_names();
        let free = (0..names.len()).filter(|&i| !spec.fixed.contains_key(&names[i])).collect();
        let transforms = names.iter().map(|n| default_transform(n)).collect();
        Ok(Self {
            spec,
            names,
            free,
            transforms,
            training_times,
        })
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn training_times(&self) -> &[f64] {
        &self.training_times
    }

    pub fn n_free(&self) -> usize {
        self.free.len()
    }

    pub fn free_names(&self) -> Vec<String> {
        self.free.iter().map(|&i| self.names[i].clone()).collect()
    }

    pub fn free_transforms(&self) -> Vec<ParamTransform> {
        self.free.iter().map(|&i| self.transforms[i]).collect()
    }

    /// Replaces the transform of one parameter.
    pub fn set_transform(&mut self, name: &str, t: ParamTransform) -> Result<()> {
        let i = self
            .names
            .iter()
            .position(|n| n == name)
            .ok_or_else(|| Error::domain(format!("unknown parameter '{name}'")))?;
        self.transforms[i] = t;
        Ok(())
    }

    fn free_domain(&self, k: usize) -> Domain {
        domain_of(&self.names[self.free[k]])
    }

    /// Natural free values to the unconstrained scale.
    pub fn transform(&self, theta: &[f64]) -> Result<Vec<f64>> {
        self.check_len(theta)?;
        theta
            .iter()
            .enumerate()
            .map(|(k, &x)| {
                if !self.free_domain(k).contains(x) {
                    return Err(Error::domain(format!(
                        "{}={x} is out of bounds",
                        self.names[self.free[k]]
                    )));
                }
                self.transforms[self.free[k]].forward(x)
            })
            .collect()
    }

    pub fn untransform(&self, u: &[f64]) -> Vec<f64> {
        u.iter()
            .enumerate()
            .map(|(k, &v)| self.transforms[self.free[k]].inverse(v))
            .collect()
    }

    fn check_len(&self, theta: &[f64]) -> Result<()> {
        if theta.len() != self.free.len() {
            return Err(Error::domain(format!(
                "expected {} free parameters, got {}",
                self.free.len(),
                theta.len()
            )));
        }
        Ok(())
    }

    fn full_natural(&self, theta: &[f64]) -> Result<Vec<f64>> {
        self.check_len(theta)?;
        let mut full = vec![0.0; self.names.len()];
        for (i, n) in self.names.iter().enumerate() {
            if let Some(&v) = self.spec.fixed.get(n) {
                full[i] = v;
            }
        }
        for (k, &i) in self.free.iter().enumerate() {
            full[i] = theta[k];
        }
        Ok(full)
    }

    /// Builds the model for free natural values; `alpha_bar` is recomputed
    /// from the training times.
    pub fn model(&self, theta: &[f64]) -> Result<CovarianceModel> {
        let full = self.full_natural(theta)?;
        let get = |name: &str| full[self.names.iter().position(|n| n == name).unwrap()];
        let spec = &self.spec;
        let model = match spec.variant {
            Variant::Tvar => {
                let coeffs = |prefix: &str, order: usize| -> Vec<f64> {
                    (0..=order).map(|k| get(&format!("{prefix}_{k}"))).collect()
                };
                let alpha_fn = TimeFn::LogPoly(coeffs("alpha", spec.alpha_poly_order));
                let nu_fn = TimeFn::LogPoly(coeffs("nu", spec.nu_poly_order));
                for &t in &self.training_times {
                    let (a, n) = (alpha_fn.value(t), nu_fn.value(t));
                    if !(a > 0.0 && a <= ALPHA_MAX && n > 0.0 && n <= NU_MAX) {
                        return Err(Error::domain(format!(
                            "alpha_s({t})={a} or nu_s({t})={n} outside the fitting range"
                        )));
                    }
                }
                let ab = alpha_bar(&alpha_fn, &self.training_times)?;
                CovarianceModel::Tvar(TvarModel {
                    sigma: get("sigma"),
                    a: get("a"),
                    gamma: get("gamma"),
                    beta: get("beta"),
                    delta: get("delta"),
                    alpha_fn,
                    nu_fn,
                    alpha_bar: ab,
                    d: spec.d,
                    nugget: spec.nugget,
                })
            }
            Variant::Gneit => CovarianceModel::Gneit(GneitModel {
                sigma: get("sigma"),
                a: get("a"),
                gamma: get("gamma"),
                beta: get("beta"),
                delta: get("delta"),
                alpha: get("alpha"),
                nu: get("nu"),
                d: spec.d,
                nugget: spec.nugget,
            }),
            Variant::Sep => CovarianceModel::Sep(SepModel {
                sigma: get("sigma"),
                a: get("a"),
                gamma: get("gamma"),
                delta: get("delta"),
                alpha: get("alpha"),
                nu: get("nu"),
                d: spec.d,
                nugget: spec.nugget,
            }),
        };
        if let CovarianceModel::Gneit(GneitModel { nu, .. }) | CovarianceModel::Sep(SepModel { nu, .. }) = &model {
            if *nu > NU_MAX {
                return Err(Error::domain(format!("nu={nu} exceeds the fitting range")));
            }
        }
        model.validate()?;
        Ok(model)
    }

    /// Free natural values of a named-value map; missing names are errors.
    pub fn theta_from_map(&self, values: &BTreeMap<String, f64>) -> Result<Vec<f64>> {
        self.free
            .iter()
            .map(|&i| {
                values
                    .get(&self.names[i])
                    .copied()
                    .ok_or_else(|| Error::domain(format!("no value for '{}'", self.names[i])))
            })
            .collect()
    }

    pub fn theta_to_map(&self, theta: &[f64]) -> BTreeMap<String, f64> {
        self.free
            .iter()
            .zip(theta)
            .map(|(&i, &v)| (self.names[i].clone(), v))
            .collect()
    }

    /// Free natural values that reproduce `model` (Tvar polynomials must
    /// have the spec's orders).
    pub fn theta_from_model(&self, model: &CovarianceModel) -> Result<Vec<f64>> {
        let mut map = BTreeMap::new();
        let mismatch = || Error::domain("model variant or polynomial orders differ from the spec");
        match (model, self.spec.variant) {
            (CovarianceModel::Tvar(m), Variant::Tvar) => {
                map.extend([("sigma", m.sigma), ("a", m.a), ("gamma", m.gamma), ("beta", m.beta), ("delta", m.delta)].map(|(k, v)| (k.to_string(), v)));
                let ac = m.alpha_fn.log_poly().ok_or_else(mismatch)?;
                let nc = m.nu_fn.log_poly().ok_or_else(mismatch)?;
                if ac.len() != self.spec.alpha_poly_order + 1 || nc.len() != self.spec.nu_poly_order + 1 {
                    return Err(mismatch());
                }
                for (k, v) in ac.iter().enumerate() {
                    map.insert(format!("alpha_{k}"), *v);
                }
                for (k, v) in nc.iter().enumerate() {
                    map.insert(format!("nu_{k}"), *v);
                }
            }
            (CovarianceModel::Gneit(m), Variant::Gneit) => {
                map.extend([("sigma", m.sigma), ("a", m.a), ("gamma", m.gamma), ("beta", m.beta), ("delta", m.delta), ("alpha", m.alpha), ("nu", m.nu)].map(|(k, v)| (k.to_string(), v)));
            }
            (CovarianceModel::Sep(m), Variant::Sep) => {
                map.extend([("sigma", m.sigma), ("a", m.a), ("gamma", m.gamma), ("delta", m.delta), ("alpha", m.alpha), ("nu", m.nu)].map(|(k, v)| (k.to_string(), v)));
            }
            _ => return Err(mismatch()),
        }
        self.theta_from_map(&map)
    }

    /// Finite-difference step for free parameter `k` and whether the
    /// central stencil stays in bounds on each side.
    fn fd_stencil(&self, theta: &[f64], k: usize) -> (f64, bool, bool) {
        let h = (1e-5 * theta[k].abs()).max(1e-7);
        let dom = self.free_domain(k);
        (h, dom.contains(theta[k] - h), dom.contains(theta[k] + h))
    }
}

// ---------------------------------------------------------------- warm start

/// Purely spatial Matérn fit at one time.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SliceEstimate {
    pub t: f64,
    pub sigma2: f64,
    pub alpha: f64,
    pub nu: f64,
}

/// Per-time maximum likelihood fits of `sigma^2 M(h | alpha, nu)` with
/// `sigma^2` profiled out.
pub fn slice_matern_mle(grid: &GridData) -> Result<Vec<SliceEstimate>> {
    let mut out = Vec::new();
    for t in 0..grid.n_times() {
        let locs: Vec<usize> = (0..grid.n_locations()).filter(|&l| grid.value(l, t).is_some()).collect();
        if locs.len() < 3 {
            continue;
        }
        let x: Vec<f64> = locs.iter().map(|&l| grid.value(l, t).unwrap()).collect();
        let n = locs.len();
        let mut dist_of: FxHashMap<u64, usize> = FxHashMap::default();
        let mut dists = Vec::new();
        let mut pair = vec![0usize; n * n];
        for i in 0..n {
            for j in 0..i {
                let a = grid.locations[locs[i]];
                let b = grid.locations[locs[j]];
                let h = (a[0] - b[0]).hypot(a[1] - b[1]);
                let k = *dist_of.entry(h.to_bits()).or_insert_with(|| {
                    dists.push(h);
                    dists.len() - 1
                });
                pair[i * n + j] = k;
            }
        }
        let positive: Vec<f64> = dists.iter().copied().filter(|d| *d > 0.0).collect();
        if positive.is_empty() {
            continue;
        }
        let dmin = positive.iter().copied().fold(f64::INFINITY, f64::min);
        let dmax = positive.iter().copied().fold(0.0, f64::max);
        let profile = |u: &[f64]| -> f64 {
            let (alpha, nu) = (u[0].exp(), u[1].exp());
            if !(alpha > 0.01 / dmax && alpha < 1e3 / dmin && (0.05..=10.0).contains(&nu)) {
                return f64::INFINITY;
            }
            let Ok(corr) = crate::kernels::MaternCorrelation::new(nu) else {
                return f64::INFINITY;
            };
            let vals: Vec<f64> = dists.iter().map(|&h| corr.eval(alpha * h)).collect();
            let m = Mat::from_fn(n, n, |i, j| {
                if i == j {
                    1.0
                } else if i > j {
                    vals[pair[i * n + j]]
                } else {
                    vals[pair[j * n + i]]
                }
            });
            let Ok(f) = factorize(m.as_ref(), 1.0) else {
                return f64::INFINITY;
            };
            let (q, ld) = f.quad_and_logdet(&x);
            let s2 = q / n as f64;
            0.5 * (n as f64 * s2.ln() + ld)
        };
        let med = {
            let mut p = positive.clone();
            p.sort_by(f64::total_cmp);
            p[p.len() / 2]
        };
        let starts = [[(2.0 / med).ln(), 0.0], [(8.0 / med).ln(), 0.0]];
        let cfg = NelderMeadConfig {
            max_iters: 400,
            tol: 1e-8,
            initial_step: 0.5,
        };
        let best = starts
            .iter()
            .map(|s| nelder_mead(profile, s, &cfg))
            .min_by(|a, b| a.f.total_cmp(&b.f))
            .unwrap();
        if !best.f.is_finite() {
            continue;
        }
        let (alpha, nu) = (best.x[0].exp(), best.x[1].exp());
        let corr = crate::kernels::MaternCorrelation::new(nu)?;
        let vals: Vec<f64> = dists.iter().map(|&h| corr.eval(alpha * h)).collect();
        let m = Mat::from_fn(n, n, |i, j| {
            if i == j {
                1.0
            } else {
                vals[pair[i.max(j) * n + i.min(j)]]
            }
        });
        let f = factorize(m.as_ref(), 1.0)?;
        let (q, _) = f.quad_and_logdet(&x);
        out.push(SliceEstimate {
            t: grid.times[t],
            sigma2: q / n as f64,
            alpha,
            nu,
        });
    }
    Ok(out)
}

/// Least-squares polynomial of the given order through `(t, y)`; orders
/// above what the data supports get zero coefficients.
fn poly_fit(ts: &[f64], ys: &[f64], order: usize) -> Vec<f64> {
    let usable = order.min(ts.len().saturating_sub(1));
    let mut coeffs = vec![0.0; order + 1];
    if ts.is_empty() {
        return coeffs;
    }
    let m = usable + 1;
    let a = Mat::from_fn(ts.len(), m, |i, j| ts[i].powi(j as i32));
    let b = Mat::from_fn(ts.len(), 1, |i, _| ys[i]);
    let qr = a.col_piv_qr();
    use faer::linalg::solvers::SolveLstsq;
    let sol = qr.solve_lstsq(b.as_ref());
    for j in 0..m {
        let v = sol[(j, 0)];
        coeffs[j] = if v.is_finite() { v } else { 0.0 };
    }
    coeffs
}

/// Default starting values: empirical variance for `sigma`, mid-range
/// `gamma`, `beta`, `delta`, and slice-wise Matérn fits for the spatial
/// parameters.
pub fn default_start(grid: &GridData, spec: &ModelSpec) -> Result<BTreeMap<String, f64>> {
    let vals: Vec<f64> = grid.observed_values().collect();
    let n = vals.len() as f64;
    let mean = vals.iter().sum::<f64>() / n;
    let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let mut map = BTreeMap::new();
    map.insert("sigma".to_string(), var.sqrt().max(1e-8));
    map.insert("a".to_string(), 1.0);
    map.insert("gamma".to_string(), 0.5);
    map.insert("beta".to_string(), 0.5);
    map.insert("delta".to_string(), 0.5);
    let slices = slice_matern_mle(grid)?;
    let (ts, la, ln): (Vec<f64>, Vec<f64>, Vec<f64>) = {
        let mut ts = Vec::new();
        let mut la = Vec::new();
        let mut ln = Vec::new();
        for s in &slices {
            ts.push(s.t);
            la.push(s.alpha.ln());
            ln.push(s.nu.ln());
        }
        (ts, la, ln)
    };
    let mean_of = |v: &[f64], fallback: f64| {
        if v.is_empty() {
            fallback
        } else {
            v.iter().sum::<f64>() / v.len() as f64
        }
    };
    match spec.variant {
        Variant::Tvar => {
            let ca = if ts.is_empty() { vec![0.0; spec.alpha_poly_order + 1] } else { poly_fit(&ts, &la, spec.alpha_poly_order) };
            let cn = if ts.is_empty() { vec![0.0; spec.nu_poly_order + 1] } else { poly_fit(&ts, &ln, spec.nu_poly_order) };
            for (k, v) in ca.iter().enumerate() {
                map.insert(format!("alpha_{k}"), *v);
            }
            for (k, v) in cn.iter().enumerate() {
                map.insert(format!("nu_{k}"), *v);
            }
        }
        Variant::Gneit | Variant::Sep => {
            map.insert("alpha".into(), mean_of(&la, 0.0).exp());
            map.insert("nu".into(), mean_of(&ln, 0.0).exp());
        }
    }
    for (k, v) in &spec.fixed {
        map.insert(k.clone(), *v);
    }
    for (k, v) in &spec.initial {
        map.insert(k.clone(), *v);
    }
    Ok(map)
}

/// Overlays a partial start on a complete one. A polynomial given only in
/// part has its missing coefficients set to zero.
fn merge_start(base: &BTreeMap<String, f64>, extra: &BTreeMap<String, f64>) -> BTreeMap<String, f64> {
    let mut out = base.clone();
    for prefix in ["alpha_", "nu_"] {
        if extra.keys().any(|k| k.starts_with(prefix)) {
            for (k, v) in out.iter_mut() {
                if k.starts_with(prefix) {
                    *v = 0.0;
                }
            }
        }
    }
    for (k, v) in extra {
        out.insert(k.clone(), *v);
    }
    out
}

// ---------------------------------------------------------------- fitting

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OptimizerConfig {
    pub max_iters: usize,
    pub tol: f64,
    /// Number of starts; extra starts jitter the best initial point.
    pub multistart: usize,
    pub seed: u64,
    pub initial_step: f64,
    /// Fresh-simplex restarts from the best point after convergence.
    pub restarts: usize,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            max_iters: 2000,
            tol: 1e-6,
            multistart: 1,
            seed: 0,
            initial_step: 0.25,
            restarts: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanSummary {
    pub seed: u64,
    #[serde(flatten)]
    pub shape: PartitionShape,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub model: CovarianceModel,
    pub param_names: Vec<String>,
    pub theta_natural: Vec<f64>,
    pub theta_unconstrained: Vec<f64>,
    pub transforms: Vec<ParamTransform>,
    /// Composite log-likelihood at the estimate.
    pub objective_value: f64,
    pub iterations: usize,
    pub evaluations: usize,
    pub converged: bool,
    /// Best composite log-likelihood after each optimizer iteration.
    pub trace: Vec<f64>,
    pub alpha_bar_used: Option<f64>,
    pub plan: PlanSummary,
    pub optimizer: OptimizerConfig,
    pub warnings: Vec<String>,
}

/// Maximizes the composite likelihood of `data`.
pub fn fit(data: &Dataset, spec: &ModelSpec, plan: &PartitionPlan, cfg: &OptimizerConfig) -> Result<FitResult> {
    let grid = GridData::from_dataset(data)?;
    fit_grid(&grid, spec, plan, cfg, &[])
}

/// [`fit`] on grid data, also trying the given (possibly partial) starts.
pub fn fit_grid(
    grid: &GridData,
    spec: &ModelSpec,
    plan: &PartitionPlan,
    cfg: &OptimizerConfig,
    extra_starts: &[BTreeMap<String, f64>],
) -> Result<FitResult> {
    let layout = ParamLayout::new(spec.clone(), grid.times.clone())?;
    let base = default_start(grid, spec)?;
    let mut starts = vec![layout.theta_from_map(&base)?];
    for extra in extra_starts {
        starts.push(layout.theta_from_map(&merge_start(&base, extra))?);
    }
    fit_layout(grid, &layout, plan, cfg, &starts)
}

/// Core fitting routine over explicit natural-scale starting points.
pub fn fit_layout(
    grid: &GridData,
    layout: &ParamLayout,
    plan: &PartitionPlan,
    cfg: &OptimizerConfig,
    starts: &[Vec<f64>],
) -> Result<FitResult> {
    let engine = RclEngine::new(grid, plan)?;
    let objective = |u: &[f64]| -> f64 {
        let theta = layout.untransform(u);
        match layout.model(&theta).and_then(|m| engine.loglik(&m)) {
            Ok(v) if v.is_finite() => -v,
            _ => f64::INFINITY,
        }
    };

    let mut best_start: Option<(Vec<f64>, f64)> = None;
    let mut failures = Vec::new();
    for (i, s) in starts.iter().enumerate() {
        let u = match layout.transform(s) {
            Ok(u) => u,
            Err(e) => {
                failures.push(format!("start {i}: {e}"));
                continue;
            }
        };
        let theta = layout.untransform(&u);
        match layout.model(&theta).and_then(|m| engine.loglik(&m)) {
            Ok(v) if v.is_finite() => {
                if best_start.as_ref().is_none_or(|(_, f)| -v < *f) {
                    best_start = Some((u, -v));
                }
            }
            Ok(v) => failures.push(format!("start {i}: objective {v}")),
            Err(e) => failures.push(format!("start {i}: {e}")),
        }
    }
    let Some((u0, _)) = best_start else {
        return Err(Error::Numerical(format!(
            "composite likelihood is not finite at any initial point: {}",
            failures.join("; ")
        )));
    };

    let nm = NelderMeadConfig {
        max_iters: cfg.max_iters,
        tol: cfg.tol,
        initial_step: cfg.initial_step,
    };
    let mut rng = ChaCha20Rng::seed_from_u64(cfg.seed);
    let jitter = Normal::new(0.0, 0.2).unwrap();
    let mut launch_points = vec![u0.clone()];
    for _ in 1..cfg.multistart.max(1) {
        launch_points.push(u0.iter().map(|v| v + jitter.sample(&mut rng)).collect());
    }

    let mut best: Option<(Vec<f64>, f64, bool)> = None;
    let mut iterations = 0;
    let mut evaluations = 0;
    let mut trace = Vec::new();
    for x0 in launch_points {
        let mut out = nelder_mead(objective, &x0, &nm);
        iterations += out.iterations;
        evaluations += out.evaluations;
        trace.extend(out.trace.iter().map(|f| -f));
        for _ in 0..cfg.restarts {
            if !out.converged || !out.f.is_finite() {
                break;
            }
            let again = nelder_mead(objective, &out.x, &nm);
            iterations += again.iterations;
            evaluations += again.evaluations;
            trace.extend(again.trace.iter().map(|f| -f));
            let gain = out.f - again.f;
            let done = gain <= cfg.tol * out.f.abs().max(1.0);
            if again.f <= out.f {
                out = crate::optim::NelderMeadOutcome {
                    converged: again.converged,
                    ..again
                };
            }
            if done {
                break;
            }
        }
        if best.as_ref().is_none_or(|(_, f, _)| out.f < *f) {
            best = Some((out.x, out.f, out.converged));
        }
    }
    let (u, _, converged) = best.unwrap();
    let theta = layout.untransform(&u);
    let model = layout.model(&theta)?;
    let objective_value = engine.loglik(&model)?;

    let mut warnings = Vec::new();
    if !converged {
        warnings.push(format!(
            "optimizer stopped after {} iterations without meeting the relative tolerance {:e}",
            cfg.max_iters, cfg.tol
        ));
    }
    let names = layout.free_names();
    for (name, &v) in names.iter().zip(&theta) {
        let near = match domain_of(name) {
            Domain::HalfOpenUnit => v >= 1.0 - 1e-6,
            Domain::Unit => v <= 1e-6 || v >= 1.0 - 1e-6,
            Domain::NonNegative => v <= 1e-6,
            _ => false,
        };
        if near {
            warnings.push(format!("{name}={v} is at the boundary of its range"));
        }
    }
    let alpha_bar_used = if let CovarianceModel::Tvar(m) = &model {
        let (lo, hi) = (grid.times[0], grid.times[grid.n_times() - 1]);
        warnings.push(format!(
            "alpha_s(t) and nu_s(t) were estimated on t in [{lo}, {hi}]; values outside this range are extrapolations and should be interpreted with caution"
        ));
        Some(m.alpha_bar)
    } else {
        None
    };
    Ok(FitResult {
        model,
        param_names: names,
        theta_unconstrained: layout.transform(&theta)?,
        theta_natural: theta,
        transforms: layout.free_transforms(),
        objective_value,
        iterations,
        evaluations,
        converged,
        trace,
        alpha_bar_used,
        plan: PlanSummary {
            seed: plan.seed,
            shape: plan.shape,
        },
        optimizer: *cfg,
        warnings,
    })
}

// ---------------------------------------------------------------- derivatives

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreMethod {
    /// Central differences of the composite log-likelihood.
    FiniteDifference,
    /// Trace and quadratic-form expression with finite-difference
    /// covariance derivatives.
    Analytic,
}

/// Finite-difference derivative of a vector-valued function of one
/// parameter, central where the stencil stays in bounds.
fn fd_derivative<T, F>(layout: &ParamLayout, theta: &[f64], k: usize, mut f: F) -> Result<Vec<T>>
where
    F: FnMut(&[f64]) -> Result<Vec<T>>,
    T: FdValue,
{
    let (h, lo_ok, hi_ok) = layout.fd_stencil(theta, k);
    let at = |d: f64| {
        let mut x = theta.to_vec();
        x[k] += d;
        x
    };
    if lo_ok && hi_ok {
        let plus = f(&at(h))?;
        let minus = f(&at(-h))?;
        Ok(plus.iter().zip(&minus).map(|(p, m)| T::comb(&[(1.0, p), (-1.0, m)], 2.0 * h)).collect())
    } else {
        // second-order one-sided stencil
        let s = if hi_ok { 1.0 } else { -1.0 };
        let f0 = f(theta)?;
        let f1 = f(&at(s * h))?;
        let f2 = f(&at(2.0 * s * h))?;
        Ok(f0
            .iter()
            .zip(&f1)
            .zip(&f2)
            .map(|((a, b), c)| T::comb(&[(-3.0, a), (4.0, b), (-1.0, c)], 2.0 * s * h))
            .collect())
    }
}

trait FdValue: Sized {
    fn comb(terms: &[(f64, &Self)], denom: f64) -> Self;
}

impl FdValue for f64 {
    fn comb(terms: &[(f64, &Self)], denom: f64) -> Self {
        terms.iter().map(|(c, v)| c * **v).sum::<f64>() / denom
    }
}

impl FdValue for Mat<f64> {
    fn comb(terms: &[(f64, &Self)], denom: f64) -> Self {
        let (r, c) = (terms[0].1.nrows(), terms[0].1.ncols());
        Mat::from_fn(r, c, |i, j| terms.iter().map(|(w, m)| w * m[(i, j)]).sum::<f64>() / denom)
    }
}

/// Per-block quantities for score, sensitivity and variability matrices.
pub struct ScoreOperator {
    weights: Vec<f64>,
    /// `dSigma_b / dtheta_r`, indexed `[block][param]`.
    d: Vec<Vec<Mat<f64>>>,
    /// `Sigma_b^{-1} dSigma_b Sigma_b^{-1}`
    a: Vec<Vec<Mat<f64>>>,
    /// `tr(Sigma_b^{-1} dSigma_b)`
    tr: Vec<Vec<f64>>,
    n_params: usize,
}

fn frob_inner(a: &Mat<f64>, b: &Mat<f64>) -> f64 {
    let mut s = 0.0;
    for j in 0..a.ncols() {
        for i in 0..a.nrows() {
            s += a[(i, j)] * b[(j, i)];
        }
    }
    s
}

fn quad(a: &Mat<f64>, x: &[f64]) -> f64 {
    let mut s = 0.0;
    for j in 0..a.ncols() {
        let mut c = 0.0;
        for i in 0..a.nrows() {
            c += a[(i, j)] * x[i];
        }
        s += c * x[j];
    }
    s
}

impl ScoreOperator {
    pub fn new(engine: &RclEngine, layout: &ParamLayout, theta: &[f64]) -> Result<Self> {
        let model = layout.model(theta)?;
        let sigmas = engine.block_matrices(&model)?;
        let nb = sigmas.len();
        let p = layout.n_free();
        let mut d: Vec<Vec<Mat<f64>>> = (0..nb).map(|_| Vec::with_capacity(p)).collect();
        for k in 0..p {
            let dk = fd_derivative(layout, theta, k, |x| engine.block_matrices(&layout.model(x)?))?;
            for (b, m) in dk.into_iter().enumerate() {
                d[b].push(m);
            }
        }
        let s2 = model.sigma().powi(2);
        let mut a = Vec::with_capacity(nb);
        let mut tr = Vec::with_capacity(nb);
        for b in 0..nb {
            let f = factorize(sigmas[b].as_ref(), s2).map_err(|e| e.in_block(&engine.blocks[b].label))?;
            let mut ab = Vec::with_capacity(p);
            let mut tb = Vec::with_capacity(p);
            for k in 0..p {
                let sd = f.solve_mat(d[b][k].as_ref());
                tb.push((0..sd.nrows()).map(|i| sd[(i, i)]).sum());
                // Sigma^{-1} dSigma Sigma^{-1} = (Sigma^{-1} (Sigma^{-1} dSigma)')'
                let t = f.solve_mat(sd.transpose());
                ab.push(t.transpose().to_owned());
            }
            a.push(ab);
            tr.push(tb);
        }
        Ok(Self {
            weights: engine.blocks.iter().map(|b| b.weight).collect(),
            d,
            a,
            tr,
            n_params: p,
        })
    }

    /// Composite score for block values (see [`RclEngine::block_values`]).
    pub fn score(&self, block_values: &[Vec<f64>]) -> Vec<f64> {
        let mut s = vec![0.0; self.n_params];
        for (b, x) in block_values.iter().enumerate() {
            for (k, sk) in s.iter_mut().enumerate() {
                *sk += self.weights[b] * 0.5 * (quad(&self.a[b][k], x) - self.tr[b][k]);
            }
        }
        s
    }

    /// `H_rs = sum_b w_b * 0.5 * tr(Sigma^{-1} D_r Sigma^{-1} D_s)`.
    pub fn sensitivity(&self) -> Mat<f64> {
        let p = self.n_params;
        let mut h = Mat::<f64>::zeros(p, p);
        for b in 0..self.weights.len() {
            for r in 0..p {
                for s in r..p {
                    let v = self.weights[b] * 0.5 * frob_inner(&self.a[b][r], &self.d[b][s]);
                    h[(r, s)] += v;
                    if r != s {
                        h[(s, r)] += v;
                    }
                }
            }
        }
        // symmetrize away rounding differences between the two triangles
        Mat::from_fn(p, p, |i, j| 0.5 * (h[(i, j)] + h[(j, i)]))
    }
}

fn total_dim(engine: &RclEngine) -> usize {
    engine.blocks.iter().map(|b| b.cells.len()).sum()
}

/// Composite score at `theta` (free natural parameters of `layout`).
pub fn rcl_score(
    layout: &ParamLayout,
    theta: &[f64],
    grid: &GridData,
    plan: &PartitionPlan,
    method: ScoreMethod,
) -> Result<Vec<f64>> {
    let engine = RclEngine::new(grid, plan)?;
    match method {
        ScoreMethod::FiniteDifference => {
            let mut out = Vec::with_capacity(theta.len());
            for k in 0..theta.len() {
                let g = fd_derivative(layout, theta, k, |x| Ok(vec![engine.loglik(&layout.model(x)?)?]))?;
                out.push(g[0]);
            }
            Ok(out)
        }
        ScoreMethod::Analytic => {
            let op = ScoreOperator::new(&engine, layout, theta)?;
            Ok(op.score(&engine.block_values(grid)?))
        }
    }
}

/// Negative expected Hessian of the composite log-likelihood.
pub fn expected_hessian(
    layout: &ParamLayout,
    theta: &[f64],
    grid: &GridData,
    plan: &PartitionPlan,
) -> Result<Mat<f64>> {
    let engine = RclEngine::new(grid, plan)?;
    let largest = engine.blocks.iter().map(|b| b.cells.len()).max().unwrap_or(0);
    if largest > HESSIAN_BLOCK_CAP {
        return Err(Error::TooLarge(format!(
            "largest block has {largest} observations; the expected Hessian is limited to {HESSIAN_BLOCK_CAP}"
        )));
    }
    Ok(ScoreOperator::new(&engine, layout, theta)?.sensitivity())
}

/// Sensitivity `H`, variability `J` and the Godambe variance `H^{-1} J H^{-1}`.
#[derive(Debug, Clone)]
pub struct GodambeResult {
    pub h: Mat<f64>,
    pub j: Mat<f64>,
    pub g_inv: Mat<f64>,
}

/// Score covariance `J` from exact cross-block covariances.
pub fn score_variability(
    engine: &RclEngine,
    op: &ScoreOperator,
    model: &CovarianceModel,
) -> Result<Mat<f64>> {
    let total = total_dim(engine);
    if total > GODAMBE_TOTAL_CAP {
        return Err(Error::TooLarge(format!(
            "blocks hold {total} observations in total; the score covariance is limited to {GODAMBE_TOTAL_CAP}"
        )));
    }
    let p = op.n_params;
    let nb = engine.blocks.len();
    let mut lookup = engine.lookup(model);
    let mut j = Mat::<f64>::zeros(p, p);
    for b in 0..nb {
        for c in 0..nb {
            let cbc = engine.cross_matrix(&mut lookup, model.nugget(), &engine.blocks[b].cells, &engine.blocks[c].cells)?;
            let ccb = cbc.transpose().to_owned();
            let w = op.weights[b] * op.weights[c] * 0.5;
            // M_s = C_bc A_{c,s} C_cb
            let ms: Vec<Mat<f64>> = (0..p).map(|s| &cbc * &op.a[c][s] * &ccb).collect();
            for r in 0..p {
                for (s, m) in ms.iter().enumerate() {
                    j[(r, s)] += w * frob_inner(&op.a[b][r], m);
                }
            }
        }
    }
    Ok(Mat::from_fn(p, p, |r, s| 0.5 * (j[(r, s)] + j[(s, r)])))
}

/// Godambe (sandwich) variance of the composite likelihood estimator.
pub fn godambe_variance(
    layout: &ParamLayout,
    theta: &[f64],
    grid: &GridData,
    plan: &PartitionPlan,
) -> Result<GodambeResult> {
    let engine = RclEngine::new(grid, plan)?;
    let total = total_dim(&engine);
    if total > GODAMBE_TOTAL_CAP {
        return Err(Error::TooLarge(format!(
            "blocks hold {total} observations in total; the Godambe variance is limited to {GODAMBE_TOTAL_CAP}"
        )));
    }
    let model = layout.model(theta)?;
    let op = ScoreOperator::new(&engine, layout, theta)?;
    let h = op.sensitivity();
    let j = score_variability(&engine, &op, &model)?;
    let h_inv = spd_inverse(h.as_ref(), "sensitivity matrix H")?;
    let ev = sym_eigenvalues(j.as_ref())?;
    if ev.first().is_none_or(|&m| m <= 0.0) {
        return Err(Error::Numerical(format!(
            "variability matrix J is not positive definite; eigenvalues {ev:?}"
        )));
    }
    let g = &h_inv * &j * &h_inv;
    let g_inv = Mat::from_fn(g.nrows(), g.ncols(), |r, s| 0.5 * (g[(r, s)] + g[(s, r)]));
    Ok(GodambeResult { h, j, g_inv })
}
