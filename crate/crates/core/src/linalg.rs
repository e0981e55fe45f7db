//! Dense least-squares solving and the compound-symmetry covariance kernel.
//!
//! Every estimator in the crate reduces to (weighted) least squares plus the
//! closed-form inverse of a random-intercept covariance, so both live here.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Relative rank tolerance for least-squares designs: a singular value below
/// `RANK_TOL * sigma_max` counts as zero.
pub const RANK_TOL: f64 = 1e-10;

/// A solved least-squares problem, keeping what estimators need downstream:
/// the coefficient vector, the unscaled coefficient covariance (X'X)^-1,
/// the residual sum of squares and the design condition number.
#[derive(Debug, Clone)]
pub struct LstsqFit {
    pub coef: DVector<f64>,
    pub xtx_inv: DMatrix<f64>,
    pub rss: f64,
    pub condition_number: f64,
}

/// Solves `min ||y - X b||^2` by singular value decomposition.
///
/// Fails with [`Error::SingularDesign`] when the effective rank of `X`
/// (singular values above `RANK_TOL * sigma_max`) is below the number of
/// columns. Deterministic for identical inputs.
pub fn solve_least_squares(x: &DMatrix<f64>, y: &DVector<f64>) -> Result<DVector<f64>> {
    lstsq(x, y).map(|fit| fit.coef)
}

/// Full least-squares solve; see [`solve_least_squares`].
pub fn lstsq(x: &DMatrix<f64>, y: &DVector<f64>) -> Result<LstsqFit> {
    let (rows, cols) = x.shape();
    if rows < cols {
        return Err(Error::ShapeMismatch(format!(
            "least squares needs rows >= cols, got {rows}x{cols}"
        )));
    }
    if y.len() != rows {
        return Err(Error::ShapeMismatch(format!(
            "response length {} does not match {} design rows",
            y.len(),
            rows
        )));
    }
    if x.iter().any(|v| !v.is_finite()) || y.iter().any(|v| !v.is_finite()) {
        return Err(Error::ShapeMismatch("non-finite value in design or response".into()));
    }

    // Householder QR first, then an SVD of the small triangular factor:
    // the singular values of R equal those of X, so the rank decision is
    // unchanged while the tall orthogonalization stays cheap.
    let qr = x.clone().qr();
    let q = qr.q();
    let r = qr.r();

    let svd = r.svd(true, true);
    let sigma_max = svd.singular_values.max();
    let tol = RANK_TOL * sigma_max;
    let rank = svd.singular_values.iter().filter(|&&s| s > tol).count();
    if rank < cols {
        return Err(Error::SingularDesign(format!(
            "effective rank {rank} < {cols} columns (sigma_max = {sigma_max:.3e})"
        )));
    }
    let sigma_min = svd.singular_values.min();

    let u = svd.u.as_ref().expect("svd computed with u");
    let v_t = svd.v_t.as_ref().expect("svd computed with v_t");

    // coef = V * Sigma^-1 * U' Q' y
    let mut uty = u.transpose() * (q.transpose() * y);
    for (i, s) in svd.singular_values.iter().enumerate() {
        uty[i] /= s;
    }
    let coef = v_t.transpose() * uty;

    // (X'X)^-1 = V * Sigma^-2 * V'
    let mut xtx_inv = DMatrix::zeros(cols, cols);
    for k in 0..cols {
        let s2 = svd.singular_values[k] * svd.singular_values[k];
        let vk = v_t.row(k);
        for i in 0..cols {
            for j in 0..cols {
                xtx_inv[(i, j)] += vk[i] * vk[j] / s2;
            }
        }
    }

    let resid = y - x * &coef;
    let rss = resid.dot(&resid);

    Ok(LstsqFit {
        coef,
        xtx_inv,
        rss,
        condition_number: sigma_max / sigma_min,
    })
}

/// Per-cluster means of a balanced `m x n` matrix (one row per cluster).
pub fn cluster_means(mat: &DMatrix<f64>) -> DVector<f64> {
    let n = mat.ncols() as f64;
    DVector::from_iterator(mat.nrows(), mat.row_iter().map(|r| r.sum() / n))
}

/// Compound-symmetry covariance `V = sigma_within2 * I_n + sigma_between2 * J J'`,
/// the covariance of a cluster with a random intercept. Its inverse has the
/// closed form `V^-1 = (1/sigma_within2) (I_n - s J J')` with
/// `s = sigma_between2 / (sigma_within2 + n * sigma_between2)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CompoundSymmetryKernel {
    sigma_within2: f64,
    sigma_between2: f64,
    n: usize,
}

impl CompoundSymmetryKernel {
    pub fn new(sigma_within2: f64, sigma_between2: f64, n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::NotPositiveDefinite("cluster size n = 0".into()));
        }
        if !sigma_within2.is_finite() || !sigma_between2.is_finite() {
            return Err(Error::NotPositiveDefinite("non-finite variance component".into()));
        }
        if sigma_within2 <= 0.0 {
            return Err(Error::NotPositiveDefinite(format!(
                "sigma_within2 = {sigma_within2} must be positive"
            )));
        }
        if sigma_between2 < 0.0 {
            return Err(Error::NotPositiveDefinite(format!(
                "sigma_between2 = {sigma_between2} must be nonnegative"
            )));
        }
        Ok(Self {
            sigma_within2,
            sigma_between2,
            n,
        })
    }

    pub fn sigma_within2(&self) -> f64 {
        self.sigma_within2
    }

    pub fn sigma_between2(&self) -> f64 {
        self.sigma_between2
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// The shrinkage factor `s = sigma_between2 / (sigma_within2 + n * sigma_between2)`,
    /// always in `[0, 1/n)`.
    pub fn shrinkage(&self) -> f64 {
        self.sigma_between2 / (self.sigma_within2 + self.n as f64 * self.sigma_between2)
    }

    /// Applies `V^-1` to an `n x q` block using the closed form; no general
    /// matrix inversion is performed.
    pub fn inverse_apply(&self, m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if m.nrows() != self.n {
            return Err(Error::ShapeMismatch(format!(
                "kernel is {}x{} but block has {} rows",
                self.n,
                self.n,
                m.nrows()
            )));
        }
        let s = self.shrinkage();
        let mut out = m.clone();
        for c in 0..m.ncols() {
            let col_sum: f64 = m.column(c).sum();
            let shift = s * col_sum;
            for r in 0..self.n {
                out[(r, c)] = (m[(r, c)] - shift) / self.sigma_within2;
            }
        }
        Ok(out)
    }

    /// Dense `n x n` realization of `V`; used by tests as the oracle for
    /// [`Self::inverse_apply`].
    pub fn dense(&self) -> DMatrix<f64> {
        let mut v = DMatrix::from_element(self.n, self.n, self.sigma_between2);
        for i in 0..self.n {
            v[(i, i)] += self.sigma_within2;
        }
        v
    }
}

/// Applies the closed-form kernel inverse to a matrix block.
pub fn kernel_inverse_apply(k: &CompoundSymmetryKernel, m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    k.inverse_apply(m)
}
