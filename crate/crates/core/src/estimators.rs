//! The four fitting procedures: pooled OLS, the fixed-effects (within)
//! estimator, a two-step feasible-GLS linear mixed model, and the
//! preference-based instrumental variable estimator with cluster membership
//! as the instrument.
//!
//! All fits consume a [`ClusteredDataset`] plus a [`CovariatePolicy`] and
//! return a [`FitResult`] whose first coefficient is the exposure effect.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::{cluster_means, lstsq, CompoundSymmetryKernel};
use crate::model::{ClusteredDataset, FitResult};

/// Diagnostic keys attached to [`FitResult::diagnostics`].
pub const DIAG_CONDITION_NUMBER: &str = "condition_number";
pub const DIAG_PARTIAL_F: &str = "partial_f";
pub const DIAG_VARCOMP_TRUNCATED: &str = "varcomp_truncated";
pub const DIAG_OLS_FALLBACK: &str = "ols_fallback";
pub const DIAG_IDENTITY_WEIGHTING: &str = "identity_weighting";
pub const DIAG_WEAK_INSTRUMENT: &str = "weak_instrument";
pub const DIAG_GLS_EQUALS_OLS: &str = "gls_equals_ols";

/// First-stage F values below this threshold flag a weak instrument.
pub const WEAK_INSTRUMENT_F: f64 = 10.0;

/// Which covariate columns enter a fit. Latent confounders may be included
/// for oracle fits that adjust for the truth; excluding them is what induces
/// unmeasured confounding.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CovariatePolicy {
    pub include_measured: bool,
    pub include_latent_w: bool,
    pub include_latent_b: bool,
    /// The within transform always eliminates cluster-constant columns, so
    /// this is forced on inside the FE fit; it is recorded here so the
    /// policy states the behavior explicitly.
    pub drop_between_cluster_covariates_for_fe: bool,
}

impl Default for CovariatePolicy {
    fn default() -> Self {
        CovariatePolicy {
            include_measured: true,
            include_latent_w: false,
            include_latent_b: false,
            drop_between_cluster_covariates_for_fe: true,
        }
    }
}

impl CovariatePolicy {
    pub fn measured_only() -> Self {
        Self::default()
    }

    pub fn no_covariates() -> Self {
        CovariatePolicy {
            include_measured: false,
            ..Self::default()
        }
    }

    /// Oracle policy adjusting for the retained latent confounders.
    pub fn oracle() -> Self {
        CovariatePolicy {
            include_measured: true,
            include_latent_w: true,
            include_latent_b: true,
            drop_between_cluster_covariates_for_fe: true,
        }
    }
}

/// Covariate columns selected by the policy, each as an `m x n` matrix.
fn policy_columns(data: &ClusteredDataset, policy: &CovariatePolicy) -> Result<Vec<DMatrix<f64>>> {
    let mut cols = Vec::new();
    if policy.include_measured {
        cols.extend(data.c.iter().cloned());
    }
    if policy.include_latent_w {
        if data.w_latent.is_empty() {
            return Err(Error::InvalidPolicy(
                "include_latent_w requires retained W draws in the dataset".into(),
            ));
        }
        cols.extend(data.w_latent.iter().cloned());
    }
    if policy.include_latent_b {
        if data.b_latent.is_empty() {
            return Err(Error::InvalidPolicy(
                "include_latent_b requires retained B draws in the dataset".into(),
            ));
        }
        for b in &data.b_latent {
            cols.push(DMatrix::from_fn(data.m, data.n, |i, _| b[i]));
        }
    }
    Ok(cols)
}

/// Stacks `m x n` matrices into the flattened `m*n x p` design
/// `[exposure, intercept?, covariates...]` used by the pooled fits.
fn stacked_design(
    exposure: &DMatrix<f64>,
    intercept: bool,
    covariates: &[DMatrix<f64>],
) -> DMatrix<f64> {
    let (m, n) = exposure.shape();
    let rows = m * n;
    let p = 1 + usize::from(intercept) + covariates.len();
    let mut x = DMatrix::zeros(rows, p);
    for i in 0..m {
        for j in 0..n {
            let r = i * n + j;
            x[(r, 0)] = exposure[(i, j)];
            let mut c = 1;
            if intercept {
                x[(r, c)] = 1.0;
                c += 1;
            }
            for col in covariates {
                x[(r, c)] = col[(i, j)];
                c += 1;
            }
        }
    }
    x
}

fn base_diagnostics(condition_number: f64) -> BTreeMap<String, f64> {
    let mut d = BTreeMap::new();
    d.insert(DIAG_CONDITION_NUMBER.to_string(), condition_number);
    d
}

fn ols_on_design(x: &DMatrix<f64>, y: &DVector<f64>) -> Result<FitResult> {
    let rows = x.nrows();
    let p = x.ncols();
    if rows <= p {
        return Err(Error::ShapeMismatch(format!(
            "OLS needs more than {p} rows, got {rows}"
        )));
    }
    let fit = lstsq(x, y)?;
    let sigma2 = fit.rss / (rows - p) as f64;
    Ok(FitResult {
        beta_hat: fit.coef[0],
        var_beta_hat: sigma2 * fit.xtx_inv[(0, 0)],
        coef: fit.coef,
        varcomp: None,
        diagnostics: base_diagnostics(fit.condition_number),
    })
}

/// Pooled least squares of the outcome on `(T, 1, C...)`; the model-based
/// variance uses the residual mean square with denominator `m*n - p`.
pub fn fit_ols(data: &ClusteredDataset, policy: &CovariatePolicy) -> Result<FitResult> {
    let cols = policy_columns(data, policy)?;
    let x = stacked_design(&data.t, true, &cols);
    let y = ClusteredDataset::flatten(&data.y);
    ols_on_design(&x, &y)
}

/// Subtracts the cluster mean from every row of `mat`.
fn center_rows(mat: &DMatrix<f64>) -> DMatrix<f64> {
    let means = cluster_means(mat);
    let mut out = mat.clone();
    for i in 0..mat.nrows() {
        for j in 0..mat.ncols() {
            out[(i, j)] -= means[i];
        }
    }
    out
}

/// Centered columns with the cluster-constant ones removed (a column is
/// cluster-constant when nothing survives the centering at tolerance
/// 1e-12 relative to its scale).
fn center_and_drop(cols: &[DMatrix<f64>]) -> (Vec<DMatrix<f64>>, Vec<usize>) {
    let mut kept = Vec::new();
    let mut out = Vec::new();
    for (k, col) in cols.iter().enumerate() {
        let centered = center_rows(col);
        let scale = col.abs().max().max(1.0);
        if centered.abs().max() > 1e-12 * scale {
            out.push(centered);
            kept.push(k);
        }
    }
    (out, kept)
}

/// The within transform of a dataset: outcome, exposure and the measured
/// covariate columns that still vary after cluster means are removed.
#[derive(Debug, Clone)]
pub struct WithinTransformed {
    pub y: DMatrix<f64>,
    pub t: DMatrix<f64>,
    pub covariates: Vec<DMatrix<f64>>,
    /// Indices into the original measured covariates of the surviving
    /// columns.
    pub kept_columns: Vec<usize>,
}

/// Removes cluster means from outcome, exposure and measured covariates;
/// the intercept and every cluster-constant column vanish.
pub fn within_transform(data: &ClusteredDataset) -> Result<WithinTransformed> {
    if data.n < 2 {
        return Err(Error::DegenerateWithin);
    }
    let (covariates, kept_columns) = center_and_drop(&data.c);
    Ok(WithinTransformed {
        y: center_rows(&data.y),
        t: center_rows(&data.t),
        covariates,
        kept_columns,
    })
}

/// Fixed-effects (within) estimator: least squares on within-transformed
/// data. Numerically identical to the dummy-variable regression; the
/// variance denominator `m*n - m - p` accounts for the absorbed cluster
/// means.
pub fn fit_fe(data: &ClusteredDataset, policy: &CovariatePolicy) -> Result<FitResult> {
    if data.n < 2 {
        return Err(Error::DegenerateWithin);
    }
    let cols = policy_columns(data, policy)?;
    let (centered_cols, _) = center_and_drop(&cols);
    let t_centered = center_rows(&data.t);
    let y_centered = center_rows(&data.y);

    let x = stacked_design(&t_centered, false, &centered_cols);
    let p = x.ncols();
    let rows = x.nrows();
    let df = rows as i64 - data.m as i64 - p as i64;
    if df <= 0 {
        return Err(Error::ShapeMismatch(format!(
            "FE has no residual degrees of freedom (m*n = {rows}, m = {}, p = {p})",
            data.m
        )));
    }
    let y = ClusteredDataset::flatten(&y_centered);
    let fit = lstsq(&x, &y).map_err(|e| match e {
        Error::SingularDesign(msg) => {
            Error::SingularDesign(format!("within design: {msg}"))
        }
        other => other,
    })?;
    let sigma2 = fit.rss / df as f64;
    Ok(FitResult {
        beta_hat: fit.coef[0],
        var_beta_hat: sigma2 * fit.xtx_inv[(0, 0)],
        coef: fit.coef,
        varcomp: None,
        diagnostics: base_diagnostics(fit.condition_number),
    })
}

/// Raw (untruncated) one-way ANOVA moment components of a balanced
/// residual matrix: `(between, within)` where `within` is the within-cluster
/// mean square and `between` is `(between MS - within MS) / n`.
fn variance_components_raw(resid: &DMatrix<f64>) -> Result<(f64, f64)> {
    let (m, n) = resid.shape();
    if m < 2 || n < 2 {
        return Err(Error::ShapeMismatch(format!(
            "variance components need m >= 2 and n >= 2, got {m}x{n}"
        )));
    }
    let means = cluster_means(resid);
    let grand = means.sum() / m as f64;
    let mut ssw = 0.0;
    for i in 0..m {
        for j in 0..n {
            let d = resid[(i, j)] - means[i];
            ssw += d * d;
        }
    }
    let msw = ssw / (m * (n - 1)) as f64;
    let ssb: f64 = means.iter().map(|&mi| (mi - grand) * (mi - grand)).sum::<f64>() * n as f64;
    let msb = ssb / (m - 1) as f64;
    Ok(((msb - msw) / n as f64, msw))
}

/// Balanced one-way ANOVA moment estimators of the random-intercept and
/// unit-level variance components, with the between component truncated at
/// zero.
pub fn estimate_variance_components(resid: &DMatrix<f64>) -> Result<(f64, f64)> {
    let (raw_d2, chi2) = variance_components_raw(resid)?;
    Ok((raw_d2.max(0.0), chi2))
}

/// One feasible-GLS step: solves
/// `(sum O_i' V^-1 O_i) coef = sum O_i' V^-1 y_i` by blockwise application
/// of the closed-form kernel inverse; returns the coefficients and the
/// inverse normal matrix (the model-based coefficient covariance).
fn gls_step(
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    kernel: &CompoundSymmetryKernel,
    m: usize,
    n: usize,
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let p = x.ncols();
    let mut normal = DMatrix::zeros(p, p);
    let mut rhs = DVector::zeros(p);
    for i in 0..m {
        let oi = x.rows(i * n, n).into_owned();
        let yi = y.rows(i * n, n).into_owned();
        let vio = kernel.inverse_apply(&oi)?;
        normal += oi.transpose() * &vio;
        rhs += vio.transpose() * yi;
    }
    // Accumulation can leave the normal matrix asymmetric in the last ulp.
    let normal = (&normal + normal.transpose()) * 0.5;
    let chol = nalgebra::Cholesky::new(normal)
        .ok_or_else(|| Error::SingularDesign("GLS normal matrix is not positive definite".into()))?;
    let coef = chol.solve(&rhs);
    Ok((coef, chol.inverse()))
}

/// Untruncated variance components of the pooled-OLS residuals, plus the
/// OLS fit itself; the first step of the mixed-model pipeline.
fn pooled_components(
    data: &ClusteredDataset,
    policy: &CovariatePolicy,
) -> Result<(f64, f64, FitResult)> {
    let cols = policy_columns(data, policy)?;
    let x = stacked_design(&data.t, true, &cols);
    let y = ClusteredDataset::flatten(&data.y);
    let ols = ols_on_design(&x, &y)?;
    let fitted = &x * &ols.coef;
    let resid = DMatrix::from_fn(data.m, data.n, |i, j| {
        y[i * data.n + j] - fitted[i * data.n + j]
    });
    let (raw_d2, chi2) = variance_components_raw(&resid)?;
    Ok((raw_d2, chi2, ols))
}

/// The `(sigma_d2_hat, sigma_chi2_hat)` pair the mixed-model pipeline would
/// use for a dataset: ANOVA moment components of the pooled-OLS residuals,
/// between component truncated at zero.
pub fn lmm_variance_components(
    data: &ClusteredDataset,
    policy: &CovariatePolicy,
) -> Result<(f64, f64)> {
    let (raw_d2, chi2, _) = pooled_components(data, policy)?;
    Ok((raw_d2.max(0.0), chi2))
}

/// Linear mixed model via two-step feasible GLS: a pooled OLS pass supplies
/// residuals, the ANOVA moment method supplies the variance components, and
/// a single GLS step with the compound-symmetry kernel produces the
/// estimate. Falls back to the OLS fit (flagged) when the components are
/// unidentifiable (`n = 1`) or the within component is zero.
pub fn fit_lmm(data: &ClusteredDataset, policy: &CovariatePolicy) -> Result<FitResult> {
    if data.n < 2 {
        let mut out = fit_ols(data, policy)?;
        out.diagnostics.insert(DIAG_OLS_FALLBACK.to_string(), 1.0);
        return Ok(out);
    }

    let (raw_d2, chi2, ols) = pooled_components(data, policy)?;
    let d2 = raw_d2.max(0.0);
    let truncated = raw_d2 < 0.0;

    if chi2 <= 0.0 {
        let mut out = ols;
        out.varcomp = Some((d2, chi2.max(0.0)));
        out.diagnostics.insert(DIAG_OLS_FALLBACK.to_string(), 1.0);
        return Ok(out);
    }

    let mut result = fit_lmm_with_components(data, policy, (d2, chi2))?;
    if truncated {
        result.diagnostics.insert(DIAG_VARCOMP_TRUNCATED.to_string(), 1.0);
    }
    Ok(result)
}

/// The GLS step of the mixed model with caller-supplied variance components
/// `(sigma_d2, sigma_chi2)`; exposed so the degeneracy `sigma_d2 = 0 =>
/// GLS == OLS` can be exercised directly.
pub fn fit_lmm_with_components(
    data: &ClusteredDataset,
    policy: &CovariatePolicy,
    components: (f64, f64),
) -> Result<FitResult> {
    let (d2, chi2) = components;
    let kernel = CompoundSymmetryKernel::new(chi2, d2, data.n)?;
    let cols = policy_columns(data, policy)?;
    let x = stacked_design(&data.t, true, &cols);
    let y = ClusteredDataset::flatten(&data.y);
    let (coef, cov) = gls_step(&x, &y, &kernel, data.m, data.n)?;

    let mut diagnostics = BTreeMap::new();
    if d2 == 0.0 {
        diagnostics.insert(DIAG_GLS_EQUALS_OLS.to_string(), 1.0);
    }
    Ok(FitResult {
        beta_hat: coef[0],
        var_beta_hat: cov[(0, 0)],
        coef,
        varcomp: Some((d2, chi2)),
        diagnostics,
    })
}

/// First-stage summary of the preference-based IV fit: the per-cluster
/// exposure levels (the dummy-variable coefficients), the predicted
/// exposure, and the partial F statistic of the cluster dummies.
#[derive(Debug, Clone)]
pub struct FirstStageResult {
    pub gamma_hat: DVector<f64>,
    pub t_hat: DMatrix<f64>,
    pub partial_f: f64,
}

/// Regresses the exposure on one indicator per cluster (no global
/// intercept) plus the within-cluster covariates. The dummy block is
/// absorbed through the within transform, so the fit costs the same as a
/// small least-squares problem; `gamma_hat` is recovered from the cluster
/// means. `partial_f` tests the joint significance of the dummies given the
/// covariates (numerator df `m - 1`, denominator df `m*n - m - K_c`).
pub fn iv_first_stage(
    data: &ClusteredDataset,
    policy: &CovariatePolicy,
) -> Result<FirstStageResult> {
    if data.m < 2 {
        return Err(Error::ShapeMismatch("first stage needs at least 2 clusters".into()));
    }
    let (m, n) = (data.m, data.n);
    let cols = policy_columns(data, policy)?;
    // Cluster-constant covariates are collinear with the dummies; only the
    // within-varying ones enter the first stage.
    let (centered_cols, kept) = if n >= 2 {
        center_and_drop(&cols)
    } else {
        (Vec::new(), Vec::new())
    };
    let k_c = centered_cols.len();
    if k_c > 0 && m * n <= m + k_c {
        return Err(Error::ShapeMismatch(format!(
            "first stage with covariates needs m*n > m + K_c ({} <= {})",
            m * n,
            m + k_c
        )));
    }

    let t_means = cluster_means(&data.t);
    let t_centered = center_rows(&data.t);

    let (gamma_hat, t_hat, rss_full) = if k_c == 0 {
        let t_hat = DMatrix::from_fn(m, n, |i, _| t_means[i]);
        let rss_full = t_centered.iter().map(|v| v * v).sum::<f64>();
        (t_means.clone(), t_hat, rss_full)
    } else {
        let xw = stacked_from_cols(&centered_cols, m, n);
        let tw = ClusteredDataset::flatten(&t_centered);
        let fit = lstsq(&xw, &tw).map_err(|e| match e {
            Error::SingularDesign(msg) => {
                Error::SingularDesign(format!("first-stage within design: {msg}"))
            }
            other => other,
        })?;
        // gamma_i = mean(T_i) - mean(C_i)' alpha_hat
        let mut gamma = t_means.clone();
        let originals: Vec<&DMatrix<f64>> = kept.iter().map(|&k| &cols[k]).collect();
        for (idx, col) in originals.iter().enumerate() {
            let col_means = cluster_means(col);
            for i in 0..m {
                gamma[i] -= col_means[i] * fit.coef[idx];
            }
        }
        let mut t_hat = DMatrix::zeros(m, n);
        for i in 0..m {
            for j in 0..n {
                let mut v = gamma[i];
                for (idx, col) in originals.iter().enumerate() {
                    v += col[(i, j)] * fit.coef[idx];
                }
                t_hat[(i, j)] = v;
            }
        }
        (gamma, t_hat, fit.rss)
    };

    // Restricted model: exposure on intercept plus the same covariates.
    let (rss_restricted, exact_between_ss) = if k_c == 0 {
        let grand = t_means.sum() / m as f64;
        let between: f64 = t_means
            .iter()
            .map(|&mi| (mi - grand) * (mi - grand))
            .sum::<f64>()
            * n as f64;
        (rss_full + between, Some(between))
    } else {
        let originals: Vec<DMatrix<f64>> = kept.iter().map(|&k| cols[k].clone()).collect();
        let ones = DMatrix::from_element(m, n, 1.0);
        let xr = stacked_design(&ones, false, &originals);
        let tr = ClusteredDataset::flatten(&data.t);
        (lstsq(&xr, &tr)?.rss, None)
    };

    let num_df = (m - 1) as f64;
    let den_df = (m * n) as i64 - m as i64 - k_c as i64;
    let ss_num = exact_between_ss.unwrap_or((rss_restricted - rss_full).max(0.0));
    let partial_f = if den_df <= 0 || rss_full <= 0.0 {
        if ss_num <= 0.0 {
            0.0
        } else {
            f64::INFINITY
        }
    } else {
        (ss_num / num_df) / (rss_full / den_df as f64)
    };

    Ok(FirstStageResult {
        gamma_hat,
        t_hat,
        partial_f,
    })
}

fn stacked_from_cols(cols: &[DMatrix<f64>], m: usize, n: usize) -> DMatrix<f64> {
    let mut x = DMatrix::zeros(m * n, cols.len());
    for (c, col) in cols.iter().enumerate() {
        for i in 0..m {
            for j in 0..n {
                x[(i * n + j, c)] = col[(i, j)];
            }
        }
    }
    x
}

/// Two-stage GLS instrumental variable estimator: the first stage predicts
/// the exposure from cluster membership, a plain 2SLS pass supplies
/// residuals to the ANOVA moment estimator, and a final GLS step with the
/// estimated kernel produces the estimate. The model-based variance is the
/// inverse GLS normal matrix. A first-stage F below
/// [`WEAK_INSTRUMENT_F`] sets the (non-fatal) weak-instrument flag.
pub fn fit_iv(data: &ClusteredDataset, policy: &CovariatePolicy) -> Result<FitResult> {
    let (m, n) = (data.m, data.n);
    let first = iv_first_stage(data, policy)?;
    let cols = policy_columns(data, policy)?;

    let x_hat = stacked_design(&first.t_hat, true, &cols);
    let rows = x_hat.nrows();
    let p = x_hat.ncols();
    if rows <= p {
        return Err(Error::ShapeMismatch(format!(
            "IV second stage needs more than {p} rows, got {rows}"
        )));
    }
    let y = ClusteredDataset::flatten(&data.y);
    let prelim = lstsq(&x_hat, &y).map_err(|e| match e {
        Error::SingularDesign(msg) => {
            Error::SingularDesign(format!("IV second-stage design: {msg}"))
        }
        other => other,
    })?;

    // Standard 2SLS residuals: observed design, second-stage coefficients.
    let x_actual = stacked_design(&data.t, true, &cols);
    let fitted = &x_actual * &prelim.coef;
    let resid = DMatrix::from_fn(m, n, |i, j| y[i * n + j] - fitted[i * n + j]);

    let mut diagnostics = BTreeMap::new();
    diagnostics.insert(DIAG_PARTIAL_F.to_string(), first.partial_f);
    if first.partial_f < WEAK_INSTRUMENT_F {
        diagnostics.insert(DIAG_WEAK_INSTRUMENT.to_string(), 1.0);
    }

    let mut varcomp = None;
    if n >= 2 {
        let (raw_d2, chi2) = variance_components_raw(&resid)?;
        let d2 = raw_d2.max(0.0);
        varcomp = Some((d2, chi2.max(0.0)));
        if raw_d2 < 0.0 {
            diagnostics.insert(DIAG_VARCOMP_TRUNCATED.to_string(), 1.0);
        }
        if chi2 > 0.0 {
            let kernel = CompoundSymmetryKernel::new(chi2, d2, n)?;
            let (coef, cov) = gls_step(&x_hat, &y, &kernel, m, n)?;
            return Ok(FitResult {
                beta_hat: coef[0],
                var_beta_hat: cov[(0, 0)],
                coef,
                varcomp,
                diagnostics,
            });
        }
    }

    // Variance components unavailable (n = 1 or exact fit): keep the plain
    // 2SLS estimate with identity weighting.
    diagnostics.insert(DIAG_IDENTITY_WEIGHTING.to_string(), 1.0);
    let sigma2 = prelim.rss / (rows - p) as f64;
    Ok(FitResult {
        beta_hat: prelim.coef[0],
        var_beta_hat: sigma2 * prelim.xtx_inv[(0, 0)],
        coef: prelim.coef,
        varcomp,
        diagnostics,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dgp::{simulate_dataset, ReplicationSeed};
    use crate::model::{ConfounderMode, ScenarioConfig};

    fn dataset_from_matrices(t: DMatrix<f64>, y: DMatrix<f64>) -> ClusteredDataset {
        let (m, n) = t.shape();
        ClusteredDataset {
            m,
            n,
            y,
            t,
            c: Vec::new(),
            w_latent: Vec::new(),
            b_latent: Vec::new(),
        }
    }

    #[test]
    fn ols_recovers_exact_linear_law() {
        let t = DMatrix::from_row_slice(2, 3, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let y = t.map(|v| 3.0 + 0.7 * v);
        let data = dataset_from_matrices(t, y);
        let fit = fit_ols(&data, &CovariatePolicy::no_covariates()).unwrap();
        assert!((fit.beta_hat - 0.7).abs() < 1e-12);
        assert!((fit.coef[1] - 3.0).abs() < 1e-11);
    }

    #[test]
    fn ols_matches_hand_normal_equations() {
        // Six observations, design [t, 1]; the 2x2 normal equations are
        // solved by hand in the assertions below.
        let t = DMatrix::from_row_slice(2, 3, &[0.0, 1.0, 2.0, 3.0, 4.0, 5.0]);
        let y = DMatrix::from_row_slice(2, 3, &[1.0, 1.5, 3.2, 3.9, 5.4, 6.1]);
        let data = dataset_from_matrices(t.clone(), y.clone());
        let fit = fit_ols(&data, &CovariatePolicy::no_covariates()).unwrap();

        // X'X = [[sum t^2, sum t], [sum t, 6]], X'y = [sum t*y, sum y].
        let st: f64 = t.iter().sum();
        let stt: f64 = t.iter().map(|v| v * v).sum();
        let sy: f64 = y.iter().sum();
        let sty: f64 = t.iter().zip(y.iter()).map(|(a, b)| a * b).sum();
        let det = stt * 6.0 - st * st;
        let slope = (6.0 * sty - st * sy) / det;
        let intercept = (stt * sy - st * sty) / det;
        assert!((fit.beta_hat - slope).abs() < 1e-10);
        assert!((fit.coef[1] - intercept).abs() < 1e-10);
    }

    #[test]
    fn within_transform_centers_and_drops() {
        let t = DMatrix::from_row_slice(2, 3, &[1.0, 2.0, 3.0, 4.0, 6.0, 8.0]);
        let y = t.clone();
        let mut data = dataset_from_matrices(t, y);
        // One within-varying column and one cluster-constant column.
        data.c = vec![
            DMatrix::from_row_slice(2, 3, &[0.0, 1.0, 2.0, 5.0, 5.0, 8.0]),
            DMatrix::from_row_slice(2, 3, &[7.0, 7.0, 7.0, 9.0, 9.0, 9.0]),
        ];
        let tr = within_transform(&data).unwrap();
        assert_eq!(tr.t.row(0).iter().copied().collect::<Vec<_>>(), vec![-1.0, 0.0, 1.0]);
        assert_eq!(tr.kept_columns, vec![0]);
        for i in 0..2 {
            assert!(tr.y.row(i).sum().abs() < 1e-12);
            assert!(tr.t.row(i).sum().abs() < 1e-12);
            assert!(tr.covariates[0].row(i).sum().abs() < 1e-12);
        }
    }

    #[test]
    fn within_transform_rejects_singleton_clusters() {
        let t = DMatrix::from_row_slice(3, 1, &[1.0, 2.0, 3.0]);
        let data = dataset_from_matrices(t.clone(), t);
        assert!(matches!(within_transform(&data), Err(Error::DegenerateWithin)));
    }

    #[test]
    fn fe_rejects_between_only_exposure() {
        let t = DMatrix::from_fn(3, 4, |i, _| i as f64);
        let y = t.map(|v| 1.0 + v);
        let data = dataset_from_matrices(t, y);
        assert!(matches!(
            fit_fe(&data, &CovariatePolicy::no_covariates()),
            Err(Error::SingularDesign(_))
        ));
    }

    #[test]
    fn variance_components_hand_worked_two_by_two() {
        // Cluster means 0 and 1, grand mean 0.5: SSW = 4 over 2 df gives a
        // within MS of 2; SSB = 1 over 1 df gives 1, so the between
        // component (1 - 2)/2 truncates to zero.
        let resid = DMatrix::from_row_slice(2, 2, &[1.0, -1.0, 2.0, 0.0]);
        let (d2, chi2) = estimate_variance_components(&resid).unwrap();
        assert_eq!(chi2, 2.0);
        assert_eq!(d2, 0.0);
    }

    #[test]
    fn variance_components_pure_between_variation() {
        let resid = DMatrix::from_fn(4, 3, |i, _| i as f64);
        let (d2, chi2) = estimate_variance_components(&resid).unwrap();
        assert_eq!(chi2, 0.0);
        // Sample variance of cluster values {0,1,2,3} is 5/3.
        assert!((d2 - 5.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn variance_components_iid_residuals() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(9);
        let resid = DMatrix::from_fn(200, 20, |_, _| {
            rng.sample::<f64, _>(rand_distr::StandardNormal)
        });
        let (d2, chi2) = estimate_variance_components(&resid).unwrap();
        assert!((chi2 - 1.0).abs() < 0.05, "chi2 = {chi2}");
        assert!(d2 < 0.02, "d2 = {d2}");
    }

    #[test]
    fn lmm_with_zero_between_component_equals_ols() {
        let cfg = ScenarioConfig::defaults();
        let data = simulate_dataset(&cfg, ReplicationSeed::new(3, 0)).unwrap();
        let policy = CovariatePolicy::default();
        let ols = fit_ols(&data, &policy).unwrap();
        let gls = fit_lmm_with_components(&data, &policy, (0.0, 1.7)).unwrap();
        assert!((gls.beta_hat - ols.beta_hat).abs() < 1e-10);
        assert_eq!(gls.diagnostic(DIAG_GLS_EQUALS_OLS), Some(1.0));
    }

    #[test]
    fn lmm_falls_back_to_ols_for_singleton_clusters() {
        let mut cfg = ScenarioConfig::defaults();
        cfg.n = 1;
        cfg.m = 60;
        let data = simulate_dataset(&cfg, ReplicationSeed::new(5, 0)).unwrap();
        let policy = CovariatePolicy::default();
        let lmm = fit_lmm(&data, &policy).unwrap();
        let ols = fit_ols(&data, &policy).unwrap();
        assert_eq!(lmm.beta_hat, ols.beta_hat);
        assert_eq!(lmm.diagnostic(DIAG_OLS_FALLBACK), Some(1.0));
    }

    #[test]
    fn first_stage_predictions_equal_cluster_means_without_covariates() {
        let cfg = ScenarioConfig::defaults();
        let data = simulate_dataset(&cfg, ReplicationSeed::new(11, 0)).unwrap();
        let first = iv_first_stage(&data, &CovariatePolicy::no_covariates()).unwrap();
        let means = cluster_means(&data.t);
        for i in 0..data.m {
            assert!((first.gamma_hat[i] - means[i]).abs() < 1e-12);
            for j in 0..data.n {
                assert!((first.t_hat[(i, j)] - means[i]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn first_stage_f_is_zero_without_between_variation() {
        // Identical clusters: the dummies explain nothing beyond the mean.
        let row = [1.0, 2.0, 3.0, 4.0];
        let t = DMatrix::from_fn(5, 4, |_, j| row[j]);
        let y = t.map(|v| 2.0 * v);
        let data = dataset_from_matrices(t, y);
        let first = iv_first_stage(&data, &CovariatePolicy::no_covariates()).unwrap();
        assert_eq!(first.partial_f, 0.0);
    }

    #[test]
    fn partial_f_grows_with_cluster_level_exposure_variance() {
        let mut avg_f = Vec::new();
        for &sigma_a in &[0.1f64, 0.3, 0.9] {
            let mut cfg = ScenarioConfig::defaults();
            cfg.m = 60;
            cfg.n = 10;
            cfg.sigma_a2 = sigma_a * sigma_a;
            cfg.confounder_mode = ConfounderMode::None;
            let mut total = 0.0;
            for rep in 0..20 {
                let data = simulate_dataset(&cfg, ReplicationSeed::new(cfg.seed, rep)).unwrap();
                let first = iv_first_stage(&data, &CovariatePolicy::default()).unwrap();
                total += first.partial_f;
            }
            avg_f.push(total / 20.0);
        }
        assert!(avg_f[0] < avg_f[1] && avg_f[1] < avg_f[2], "{avg_f:?}");
    }

    #[test]
    fn iv_recovers_exact_effect_with_cluster_determined_exposure() {
        let t = DMatrix::from_fn(4, 3, |i, _| 1.0 + i as f64);
        let y = t.map(|v| 3.0 + 0.7 * v);
        let data = dataset_from_matrices(t, y);
        let fit = fit_iv(&data, &CovariatePolicy::no_covariates()).unwrap();
        assert!((fit.beta_hat - 0.7).abs() < 1e-10);
    }

    #[test]
    fn iv_equals_ols_for_singleton_clusters() {
        let mut cfg = ScenarioConfig::defaults();
        cfg.n = 1;
        cfg.m = 80;
        let data = simulate_dataset(&cfg, ReplicationSeed::new(21, 0)).unwrap();
        let iv = fit_iv(&data, &CovariatePolicy::no_covariates()).unwrap();
        let ols = fit_ols(&data, &CovariatePolicy::no_covariates()).unwrap();
        assert!((iv.beta_hat - ols.beta_hat).abs() < 1e-10);
        assert_eq!(iv.diagnostic(DIAG_IDENTITY_WEIGHTING), Some(1.0));
    }

    #[test]
    fn oracle_policy_requires_retained_latents() {
        let mut cfg = ScenarioConfig::defaults();
        cfg.confounder_mode = ConfounderMode::BOnly;
        let data = simulate_dataset(&cfg, ReplicationSeed::new(2, 0)).unwrap();
        let policy = CovariatePolicy {
            include_latent_w: true,
            ..CovariatePolicy::default()
        };
        assert!(matches!(fit_ols(&data, &policy), Err(Error::InvalidPolicy(_))));
    }
}
