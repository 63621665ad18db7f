//! Deterministic mean: harmonics in time plus space-time interaction terms,
//! fitted by least squares.

use std::f64::consts::PI;

use faer::linalg::solvers::SolveLstsq;
use faer::Mat;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gp::{Dataset, PredictiveDistribution};
use crate::kernels::SpaceTimePoint;

pub const N_TERMS: usize = 16;

pub const TERM_NAMES: [&str; N_TERMS] = [
    "intercept",
    "sin_h1",
    "cos_h1",
    "sin_h2",
    "cos_h2",
    "t",
    "s1",
    "s2",
    "s1_t",
    "s2_t",
    "s1_t2",
    "s2_t2",
    "s1_t3",
    "s2_t3",
    "s1_t4",
    "s2_t4",
];

/// Angular frequencies of the two harmonic pairs. The defaults are
/// `2 pi / 0.5` and `4 pi / 0.25`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Harmonics {
    pub first: f64,
    pub second: f64,
}

impl Default for Harmonics {
    fn default() -> Self {
        Self {
            first: 2.0 * PI / 0.5,
            second: 4.0 * PI / 0.25,
        }
    }
}

/// Design row `[1, sin, cos, sin, cos, t, s', s't, s't^2, s't^3, s't^4]`.
pub fn build_design_row(p: &SpaceTimePoint, h: Harmonics) -> [f64; N_TERMS] {
    let t = p.t;
    let [s1, s2] = p.s;
    let (a, b) = (h.first * t, h.second * t);
    let (t2, t3) = (t * t, t * t * t);
    let t4 = t2 * t2;
    [
        1.0,
        a.sin(),
        a.cos(),
        b.sin(),
        b.cos(),
        t,
        s1,
        s2,
        s1 * t,
        s2 * t,
        s1 * t2,
        s2 * t2,
        s1 * t3,
        s2 * t3,
        s1 * t4,
        s2 * t4,
    ]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct TermJson {
    name: String,
    coefficient: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct TrendJson {
    terms: Vec<TermJson>,
    harmonics: Harmonics,
}

/// Fitted mean model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(into = "TrendJson", try_from = "TrendJson")]
pub struct TrendModel {
    pub coefficients: [f64; N_TERMS],
    pub harmonics: Harmonics,
}

impl From<TrendModel> for TrendJson {
    fn from(m: TrendModel) -> Self {
        TrendJson {
            terms: TERM_NAMES
                .iter()
                .zip(m.coefficients)
                .map(|(n, c)| TermJson {
                    name: n.to_string(),
                    coefficient: c,
                })
                .collect(),
            harmonics: m.harmonics,
        }
    }
}

impl TryFrom<TrendJson> for TrendModel {
    type Error = String;

    fn try_from(j: TrendJson) -> std::result::Result<Self, String> {
        if j.terms.len() != N_TERMS {
            return Err(format!("expected {N_TERMS} trend terms, got {}", j.terms.len()));
        }
        let mut coefficients = [0.0; N_TERMS];
        for (k, term) in j.terms.iter().enumerate() {
            if term.name != TERM_NAMES[k] {
                return Err(format!("trend term {k} should be '{}', got '{}'", TERM_NAMES[k], term.name));
            }
            if !term.coefficient.is_finite() {
                return Err(format!("trend coefficient '{}' is not finite", term.name));
            }
            coefficients[k] = term.coefficient;
        }
        Ok(TrendModel {
            coefficients,
            harmonics: j.harmonics,
        })
    }
}

impl TrendModel {
    pub fn mean(&self, p: &SpaceTimePoint) -> f64 {
        build_design_row(p, self.harmonics)
            .iter()
            .zip(&self.coefficients)
            .map(|(x, b)| x * b)
            .sum()
    }
}

const RANK_TOL: f64 = 1e-9;

/// Least-squares fit through a column-pivoted QR of the column-equilibrated
/// design.
pub fn ols_fit(points: &[SpaceTimePoint], values: &[f64], harmonics: Harmonics) -> Result<TrendModel> {
    let n = points.len();
    if values.len() != n {
        return Err(Error::Data(format!("{n} points but {} values", values.len())));
    }
    if n < N_TERMS {
        return Err(Error::Data(format!(
            "the trend needs at least {N_TERMS} observations, got {n}"
        )));
    }
    if let Some(i) = points.iter().position(|p| !p.is_finite()) {
        return Err(Error::Data(format!("point {i} is not finite")));
    }
    if let Some(i) = values.iter().position(|v| !v.is_finite()) {
        return Err(Error::Data(format!("value {i} is not finite")));
    }
    let rows: Vec<[f64; N_TERMS]> = points.iter().map(|p| build_design_row(p, harmonics)).collect();
    let scale: Vec<f64> = (0..N_TERMS)
        .map(|j| rows.iter().map(|r| r[j] * r[j]).sum::<f64>().sqrt())
        .collect();
    let zero: Vec<&str> = (0..N_TERMS).filter(|&j| scale[j] == 0.0).map(|j| TERM_NAMES[j]).collect();
    if !zero.is_empty() {
        return Err(Error::Data(format!(
            "rank-deficient trend design: columns {} are identically zero",
            zero.join(", ")
        )));
    }
    let x = Mat::from_fn(n, N_TERMS, |i, j| rows[i][j] / scale[j]);
    let qr = x.col_piv_qr();
    let r = qr.R();
    let perm = qr.P().arrays().0;
    let r00 = r[(0, 0)].abs();
    let rank = (0..N_TERMS).take_while(|&k| r[(k, k)].abs() > RANK_TOL * r00).count();
    if rank < N_TERMS {
        return Err(Error::Data(collinear_message(r, perm, rank)));
    }
    let y = Mat::from_fn(n, 1, |i, _| values[i]);
    let sol = qr.solve_lstsq(y.as_ref());
    let mut coefficients = [0.0; N_TERMS];
    for j in 0..N_TERMS {
        coefficients[j] = sol[(j, 0)] / scale[j];
    }
    Ok(TrendModel {
        coefficients,
        harmonics,
    })
}

/// Names each dependent column together with the independent columns it
/// is a combination of.
fn collinear_message(r: faer::MatRef<'_, f64>, perm: &[usize], rank: usize) -> String {
    let mut groups = Vec::new();
    for k in rank..N_TERMS {
        // R11 x = R12[:, k]
        let mut x = vec![0.0; rank];
        for i in (0..rank).rev() {
            let mut s = r[(i, k)];
            for j in i + 1..rank {
                s -= r[(i, j)] * x[j];
            }
            x[i] = s / r[(i, i)];
        }
        let big = x.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let mut names = vec![TERM_NAMES[perm[k]]];
        names.extend(
            (0..rank)
                .filter(|&i| x[i].abs() > 1e-6 * big)
                .map(|i| TERM_NAMES[perm[i]]),
        );
        groups.push(format!("[{}]", names.join(", ")));
    }
    format!("rank-deficient trend design: collinear columns {}", groups.join("; "))
}

/// Residuals `y - mu(s, t)`.
pub fn detrend(model: &TrendModel, data: &Dataset) -> Dataset {
    Dataset {
        points: data.points.clone(),
        values: data
            .points
            .iter()
            .zip(&data.values)
            .map(|(p, v)| v - model.mean(p))
            .collect(),
    }
}

/// Adds the mean back to predictive means; variances are unchanged.
pub fn retrend(model: &TrendModel, pd: &PredictiveDistribution) -> PredictiveDistribution {
    PredictiveDistribution {
        targets: pd.targets.clone(),
        mean: pd.targets.iter().zip(&pd.mean).map(|(p, m)| m + model.mean(p)).collect(),
        variance: pd.variance.clone(),
    }
}
