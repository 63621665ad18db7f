//! Cholesky factorization with the diagonal jitter policy.

use faer::linalg::solvers::{DenseSolveCore, Llt, Solve};
use faer::{Mat, MatRef, Par, Side};

use crate::error::{Error, Result};

const JITTER_START: f64 = 1e-10;
const JITTER_MAX: f64 = 1e-4;

/// A lower Cholesky factor `L L' = A + jitter I`.
pub struct CholFactor {
    llt: Llt<f64>,
    jitter: f64,
}

/// Factorizes a symmetric matrix.
///
/// On failure, `JITTER_START * scale` is added to the diagonal and raised
/// tenfold up to `JITTER_MAX * scale`. `scale` is the process variance.
pub fn factorize(a: MatRef<'_, f64>, scale: f64) -> Result<CholFactor> {
    let n = a.nrows();
    if let Ok(llt) = a.llt(Side::Lower) {
        return Ok(CholFactor { llt, jitter: 0.0 });
    }
    let mut work = a.to_owned();
    let mut rel = JITTER_START;
    let mut added = 0.0;
    while rel <= JITTER_MAX * (1.0 + 1e-9) {
        let jitter = rel * scale;
        for i in 0..n {
            work[(i, i)] += jitter - added;
        }
        added = jitter;
        if let Ok(llt) = work.llt(Side::Lower) {
            log::debug!("cholesky of {n}x{n} matrix needed jitter {jitter:e}");
            return Ok(CholFactor { llt, jitter });
        }
        rel *= 10.0;
    }
    let diag = (0..n).map(|i| a[(i, i)]);
    let min_diag = diag.clone().fold(f64::INFINITY, f64::min);
    let max_diag = diag.fold(f64::NEG_INFINITY, f64::max);
    Err(Error::Factorization {
        dim: n,
        jitter: added,
        min_diag,
        max_diag,
    })
}

impl CholFactor {
    pub fn dim(&self) -> usize {
        self.llt.L().nrows()
    }

    /// Diagonal jitter that was needed, zero when none.
    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    pub fn l(&self) -> MatRef<'_, f64> {
        self.llt.L()
    }

    /// `ln det A`
    pub fn log_det(&self) -> f64 {
        let l = self.llt.L();
        2.0 * (0..l.nrows()).map(|i| l[(i, i)].ln()).sum::<f64>()
    }

    /// `A^{-1} b`
    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let mut x = Mat::from_fn(b.len(), 1, |i, _| b[i]);
        self.llt.solve_in_place(x.as_mut());
        (0..b.len()).map(|i| x[(i, 0)]).collect()
    }

    /// `A^{-1} B`
    pub fn solve_mat(&self, b: MatRef<'_, f64>) -> Mat<f64> {
        let mut x = b.to_owned();
        self.llt.solve_in_place(x.as_mut());
        x
    }

    /// `L^{-1} B`
    pub fn half_solve_mat(&self, b: MatRef<'_, f64>) -> Mat<f64> {
        let mut x = b.to_owned();
        faer::linalg::triangular_solve::solve_lower_triangular_in_place(
            self.llt.L(),
            x.as_mut(),
            Par::Seq,
        );
        x
    }

    /// `L^{-1} b`
    pub fn half_solve(&self, b: &[f64]) -> Vec<f64> {
        let x = self.half_solve_mat(MatRef::from_column_major_slice(b, b.len(), 1));
        (0..b.len()).map(|i| x[(i, 0)]).collect()
    }

    pub fn inverse(&self) -> Mat<f64> {
        self.llt.inverse()
    }

    /// `x' A^{-1} x` and `ln det A` for a Gaussian log-density.
    pub fn quad_and_logdet(&self, x: &[f64]) -> (f64, f64) {
        let z = self.half_solve(x);
        (z.iter().map(|v| v * v).sum(), self.log_det())
    }
}

/// Zero-mean Gaussian log-density `-0.5 (ln det A + x'A^{-1}x + n ln 2 pi)`.
pub fn gaussian_loglik(factor: &CholFactor, x: &[f64]) -> f64 {
    let (q, ld) = factor.quad_and_logdet(x);
    -0.5 * (ld + q + x.len() as f64 * (2.0 * std::f64::consts::PI).ln())
}

/// Eigenvalues of a symmetric matrix in nondecreasing order.
pub fn sym_eigenvalues(a: MatRef<'_, f64>) -> Result<Vec<f64>> {
    a.self_adjoint_eigenvalues(Side::Lower)
        .map_err(|e| Error::Numerical(format!("eigenvalue solver failed: {e:?}")))
}

/// Inverse of a symmetric positive definite matrix, reporting eigenvalues
/// when it is not.
pub(crate) fn spd_inverse(a: MatRef<'_, f64>, what: &str) -> Result<Mat<f64>> {
    match a.llt(Side::Lower) {
        Ok(llt) => Ok(llt.inverse()),
        Err(_) => {
            let ev = sym_eigenvalues(a)?;
            Err(Error::Numerical(format!(
                "{what} is not positive definite; eigenvalues {ev:?}"
            )))
        }
    }
}
