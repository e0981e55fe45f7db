//! Domain types shared across the crate: scenario parameterization,
//! simulated datasets and fit results.

use std::collections::BTreeMap;
use std::fmt;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// The four fitting procedures under study.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Method {
    Iv,
    Ols,
    Fe,
    Lmm,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::Iv, Method::Ols, Method::Fe, Method::Lmm];

    pub fn parse(s: &str) -> Option<Method> {
        match s.to_ascii_uppercase().as_str() {
            "IV" | "IVA" => Some(Method::Iv),
            "OLS" => Some(Method::Ols),
            "FE" => Some(Method::Fe),
            "LMM" => Some(Method::Lmm),
            _ => None,
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Method::Iv => "IV",
            Method::Ols => "OLS",
            Method::Fe => "FE",
            Method::Lmm => "LMM",
        };
        f.write_str(s)
    }
}

/// Which unmeasured confounders the true models carry.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ConfounderMode {
    None,
    WOnly,
    BOnly,
    WAndB,
}

impl ConfounderMode {
    pub fn includes_w(&self) -> bool {
        matches!(self, ConfounderMode::WOnly | ConfounderMode::WAndB)
    }

    pub fn includes_b(&self) -> bool {
        matches!(self, ConfounderMode::BOnly | ConfounderMode::WAndB)
    }

    pub fn parse(s: &str) -> Option<ConfounderMode> {
        match s {
            "none" => Some(ConfounderMode::None),
            "W_only" => Some(ConfounderMode::WOnly),
            "B_only" => Some(ConfounderMode::BOnly),
            "W_and_B" => Some(ConfounderMode::WAndB),
            _ => None,
        }
    }
}

impl fmt::Display for ConfounderMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            ConfounderMode::None => "none",
            ConfounderMode::WOnly => "W_only",
            ConfounderMode::BOnly => "B_only",
            ConfounderMode::WAndB => "W_and_B",
        };
        f.write_str(s)
    }
}

/// Whether a measured covariate varies within clusters or is constant per
/// cluster.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CovariateKind {
    Within,
    Between,
}

/// A measured covariate column: its level of variation and normal
/// distribution parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CovariateSpec {
    pub kind: CovariateKind,
    pub mean: f64,
    pub sd: f64,
}

/// Full parameterization of the true models: the exposure model
/// `T_ij = t_intercept + C'alpha_c + W'alpha_w + B'alpha_b + a_0i + eps_t`
/// and the outcome model
/// `Y_ij = y_intercept + beta T_ij + C'beta_c + W'beta_w + B'beta_b + b_0i + eps_y`.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioConfig {
    /// Number of clusters.
    pub m: usize,
    /// Common cluster size (balanced design).
    pub n: usize,
    /// True exposure effect.
    pub beta: f64,
    /// Exposure-model intercept.
    pub t_intercept: f64,
    /// Outcome-model intercept.
    pub y_intercept: f64,
    /// Measured covariate columns (intercept excluded; added by the
    /// design-matrix builders).
    pub covariates: Vec<CovariateSpec>,
    /// Effects of measured covariates on the exposure.
    pub alpha_c: Vec<f64>,
    /// Effects of measured covariates on the outcome.
    pub beta_c: Vec<f64>,
    /// Effects of unmeasured within-cluster confounders on the exposure.
    pub alpha_w: Vec<f64>,
    /// Effects of unmeasured within-cluster confounders on the outcome.
    pub beta_w: Vec<f64>,
    /// Effects of unmeasured between-cluster confounders on the exposure.
    pub alpha_b: Vec<f64>,
    /// Effects of unmeasured between-cluster confounders on the outcome.
    pub beta_b: Vec<f64>,
    /// Variance of the exposure-model cluster random error.
    pub sigma_a2: f64,
    /// Variance of the outcome-model cluster random error.
    pub sigma_b2: f64,
    /// Variance of the exposure-model unit-level error.
    pub sigma_et2: f64,
    /// Variance of the outcome-model unit-level error.
    pub sigma_ey2: f64,
    /// Covariance of the within-cluster confounder vector.
    pub v_w: DMatrix<f64>,
    /// Covariance of the between-cluster confounder vector.
    pub v_b: DMatrix<f64>,
    pub mean_w: Vec<f64>,
    pub mean_b: Vec<f64>,
    /// Which unmeasured confounders are generated.
    pub confounder_mode: ConfounderMode,
    /// Master RNG seed.
    pub seed: u64,
}

/// Tolerance for accepting a covariance matrix as symmetric PSD.
const PSD_TOL: f64 = 1e-12;

fn check_covariance(name: &str, v: &DMatrix<f64>, dim: usize) -> Result<()> {
    if v.nrows() != dim || v.ncols() != dim {
        return Err(Error::InvalidConfig(format!(
            "{name} must be {dim}x{dim}, got {}x{}",
            v.nrows(),
            v.ncols()
        )));
    }
    if dim == 0 {
        return Ok(());
    }
    let scale = v.abs().max().max(1.0);
    if (v - v.transpose()).abs().max() > 1e-10 * scale {
        return Err(Error::InvalidCovariance(format!("{name} is not symmetric")));
    }
    let eig = v.clone().symmetric_eigenvalues();
    if eig.iter().any(|&l| l < -PSD_TOL * scale) {
        return Err(Error::InvalidCovariance(format!(
            "{name} has a negative eigenvalue ({:.3e})",
            eig.min()
        )));
    }
    Ok(())
}

impl ScenarioConfig {
    /// Default simulation parameterization: 200 clusters of 20 units, one
    /// within covariate N(0,1) and one cluster-level covariate N(11,1), one
    /// within and one between confounder each N(1,1) with unit effect
    /// coefficients 0.6, and both confounding pathways active.
    pub fn defaults() -> Self {
        ScenarioConfig {
            m: 200,
            n: 20,
            beta: 0.7,
            t_intercept: 18.0,
            y_intercept: 3.0,
            covariates: vec![
                CovariateSpec {
                    kind: CovariateKind::Within,
                    mean: 0.0,
                    sd: 1.0,
                },
                CovariateSpec {
                    kind: CovariateKind::Between,
                    mean: 11.0,
                    sd: 1.0,
                },
            ],
            alpha_c: vec![-1.0, -1.0],
            beta_c: vec![1.0, 1.0],
            alpha_w: vec![0.6],
            beta_w: vec![0.6],
            alpha_b: vec![0.6],
            beta_b: vec![0.6],
            sigma_a2: 0.09,
            sigma_b2: 1.0,
            sigma_et2: 1.0,
            sigma_ey2: 1.0,
            v_w: DMatrix::identity(1, 1),
            v_b: DMatrix::identity(1, 1),
            mean_w: vec![1.0],
            mean_b: vec![1.0],
            confounder_mode: ConfounderMode::WAndB,
            seed: 42,
        }
    }

    pub fn k_c(&self) -> usize {
        self.covariates.len()
    }

    pub fn k_w(&self) -> usize {
        self.alpha_w.len()
    }

    pub fn k_b(&self) -> usize {
        self.alpha_b.len()
    }

    /// Checks the cross-field invariants. Entry-point operations call this
    /// before using a configuration.
    pub fn validate(&self) -> Result<()> {
        if self.m < 2 {
            return Err(Error::InvalidConfig(format!("m = {} must be >= 2", self.m)));
        }
        if self.n < 1 {
            return Err(Error::InvalidConfig("n must be >= 1".into()));
        }
        for (name, value) in [
            ("sigma_a2", self.sigma_a2),
            ("sigma_b2", self.sigma_b2),
            ("sigma_et2", self.sigma_et2),
            ("sigma_ey2", self.sigma_ey2),
        ] {
            if !value.is_finite() || value < 0.0 {
                return Err(Error::InvalidConfig(format!(
                    "{name} = {value} must be finite and nonnegative"
                )));
            }
        }
        if self.alpha_c.len() != self.k_c() || self.beta_c.len() != self.k_c() {
            return Err(Error::InvalidConfig(format!(
                "alpha_c/beta_c lengths ({}, {}) must match {} covariates",
                self.alpha_c.len(),
                self.beta_c.len(),
                self.k_c()
            )));
        }
        if self.beta_w.len() != self.k_w() || self.mean_w.len() != self.k_w() {
            return Err(Error::InvalidConfig(
                "alpha_w, beta_w and mean_w must have equal lengths".into(),
            ));
        }
        if self.beta_b.len() != self.k_b() || self.mean_b.len() != self.k_b() {
            return Err(Error::InvalidConfig(
                "alpha_b, beta_b and mean_b must have equal lengths".into(),
            ));
        }
        check_covariance("V_w", &self.v_w, self.k_w())?;
        check_covariance("V_b", &self.v_b, self.k_b())?;
        for c in &self.covariates {
            if !c.sd.is_finite() || c.sd < 0.0 {
                return Err(Error::InvalidConfig("covariate sd must be nonnegative".into()));
            }
        }
        Ok(())
    }
}

/// A balanced simulated dataset. Outcome, exposure and covariates are
/// `m x n` matrices (row = cluster); the latent confounders actually drawn
/// are retained for oracle fits only.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusteredDataset {
    pub m: usize,
    pub n: usize,
    pub y: DMatrix<f64>,
    pub t: DMatrix<f64>,
    /// Measured covariate columns, each expanded to `m x n`.
    pub c: Vec<DMatrix<f64>>,
    /// Latent within-cluster confounder columns (empty when not generated).
    pub w_latent: Vec<DMatrix<f64>>,
    /// Latent between-cluster confounder columns, one value per cluster
    /// (empty when not generated).
    pub b_latent: Vec<DVector<f64>>,
}

impl ClusteredDataset {
    /// Cluster index of every row in flattened (row-major) order.
    pub fn cluster_ids(&self) -> Vec<usize> {
        (0..self.m).flat_map(|i| std::iter::repeat_n(i, self.n)).collect()
    }

    /// Flattens an `m x n` matrix to the `m*n` vector in row-major
    /// (cluster-by-cluster) order used by the design builders.
    pub fn flatten(mat: &DMatrix<f64>) -> DVector<f64> {
        let (m, n) = mat.shape();
        DVector::from_iterator(m * n, (0..m).flat_map(|i| (0..n).map(move |j| (i, j))).map(|(i, j)| mat[(i, j)]))
    }
}

/// Point estimate and diagnostics from one fitted model.
#[derive(Debug, Clone, PartialEq)]
pub struct FitResult {
    /// Estimated exposure effect (first design coordinate).
    pub beta_hat: f64,
    /// All fixed-effect estimates in design order.
    pub coef: DVector<f64>,
    /// Model-based variance of `beta_hat`.
    pub var_beta_hat: f64,
    /// Estimated `(sigma_d2_hat, sigma_chi2_hat)` variance components where
    /// the method estimates them (LMM, IV).
    pub varcomp: Option<(f64, f64)>,
    /// Named scalar diagnostics (partial F, condition number, fallback and
    /// truncation flags).
    pub diagnostics: BTreeMap<String, f64>,
}

impl FitResult {
    pub fn diagnostic(&self, key: &str) -> Option<f64> {
        self.diagnostics.get(key).copied()
    }
}
