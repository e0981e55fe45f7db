//! Data generation: reproducible draws from the true exposure and outcome
//! models with per-replication, per-variable RNG substreams.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::model::{ClusteredDataset, CovariateKind, ScenarioConfig};

/// Identifies one replication of one scenario. The mapping
/// `(master_seed, replication_index, variable tag) -> random stream` is
/// injective and independent of thread schedule, so replications can run in
/// any order on any number of workers and still produce identical data.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ReplicationSeed {
    pub master_seed: u64,
    pub replication_index: u64,
}

impl ReplicationSeed {
    pub fn new(master_seed: u64, replication_index: u64) -> Self {
        Self {
            master_seed,
            replication_index,
        }
    }

    /// A dedicated generator for one model variable of this replication.
    fn stream(&self, tag: u64) -> ChaCha12Rng {
        let mut seed = [0u8; 32];
        seed[0..8].copy_from_slice(&self.master_seed.to_le_bytes());
        seed[8..16].copy_from_slice(&self.replication_index.to_le_bytes());
        seed[16..24].copy_from_slice(&tag.to_le_bytes());
        ChaCha12Rng::from_seed(seed)
    }
}

const TAG_A0: u64 = 1;
const TAG_B0: u64 = 2;
const TAG_EPS_T: u64 = 3;
const TAG_EPS_Y: u64 = 4;
const TAG_W: u64 = 5;
const TAG_B: u64 = 6;
const TAG_C_BASE: u64 = 16;

/// Stateless 64-bit mixer used to derive independent seeds for grid points
/// and calibration runs.
pub(crate) fn splitmix64(state: u64) -> u64 {
    let mut z = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn standard_normals(rng: &mut ChaCha12Rng, count: usize) -> Vec<f64> {
    (0..count).map(|_| rng.sample(StandardNormal)).collect()
}

/// Lower-triangular-ish factor `L` with `L L' = V`, tolerating positive
/// semidefinite matrices: plain Cholesky first, otherwise a symmetric
/// eigendecomposition with eigenvalues floored at zero (tolerance 1e-12).
fn psd_factor(name: &str, v: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if let Some(chol) = nalgebra::Cholesky::new(v.clone()) {
        return Ok(chol.l());
    }
    let eig = nalgebra::SymmetricEigen::new(v.clone());
    let scale = eig.eigenvalues.abs().max().max(1.0);
    if eig.eigenvalues.iter().any(|&l| l < -1e-12 * scale) {
        return Err(Error::InvalidCovariance(format!(
            "{name} is not positive semidefinite (min eigenvalue {:.3e})",
            eig.eigenvalues.min()
        )));
    }
    let sqrt = DMatrix::from_diagonal(&eig.eigenvalues.map(|l| l.max(0.0).sqrt()));
    Ok(&eig.eigenvectors * sqrt)
}

/// `out = factor * z` without allocating per draw.
fn factor_mul(factor: &DMatrix<f64>, z: &[f64], out: &mut [f64]) {
    for (r, o) in out.iter_mut().enumerate() {
        let mut acc = 0.0;
        for (c, zc) in z.iter().enumerate() {
            acc += factor[(r, c)] * zc;
        }
        *o = acc;
    }
}

/// Draws one balanced dataset from the true models. Identical
/// `(cfg, rep)` pairs produce bit-identical datasets.
pub fn simulate_dataset(cfg: &ScenarioConfig, rep: ReplicationSeed) -> Result<ClusteredDataset> {
    cfg.validate()?;
    let (m, n) = (cfg.m, cfg.n);
    let with_w = cfg.confounder_mode.includes_w() && cfg.k_w() > 0;
    let with_b = cfg.confounder_mode.includes_b() && cfg.k_b() > 0;

    let sigma_a = cfg.sigma_a2.sqrt();
    let sigma_b = cfg.sigma_b2.sqrt();
    let sigma_et = cfg.sigma_et2.sqrt();
    let sigma_ey = cfg.sigma_ey2.sqrt();

    let a0: Vec<f64> = standard_normals(&mut rep.stream(TAG_A0), m)
        .into_iter()
        .map(|z| sigma_a * z)
        .collect();
    let b0: Vec<f64> = standard_normals(&mut rep.stream(TAG_B0), m)
        .into_iter()
        .map(|z| sigma_b * z)
        .collect();
    let eps_t = standard_normals(&mut rep.stream(TAG_EPS_T), m * n);
    let eps_y = standard_normals(&mut rep.stream(TAG_EPS_Y), m * n);

    // Latent confounders.
    let mut w_latent: Vec<DMatrix<f64>> = Vec::new();
    if with_w {
        let k = cfg.k_w();
        let chol = psd_factor("V_w", &cfg.v_w)?;
        let mut rng = rep.stream(TAG_W);
        w_latent = vec![DMatrix::zeros(m, n); k];
        let mut z = vec![0.0; k];
        let mut x = vec![0.0; k];
        for i in 0..m {
            for j in 0..n {
                for zk in z.iter_mut() {
                    *zk = rng.sample(StandardNormal);
                }
                factor_mul(&chol, &z, &mut x);
                for (kk, col) in w_latent.iter_mut().enumerate() {
                    col[(i, j)] = cfg.mean_w[kk] + x[kk];
                }
            }
        }
    }
    let mut b_latent: Vec<DVector<f64>> = Vec::new();
    if with_b {
        let k = cfg.k_b();
        let chol = psd_factor("V_b", &cfg.v_b)?;
        let mut rng = rep.stream(TAG_B);
        b_latent = vec![DVector::zeros(m); k];
        let mut z = vec![0.0; k];
        let mut x = vec![0.0; k];
        for i in 0..m {
            for zk in z.iter_mut() {
                *zk = rng.sample(StandardNormal);
            }
            factor_mul(&chol, &z, &mut x);
            for (kk, col) in b_latent.iter_mut().enumerate() {
                col[i] = cfg.mean_b[kk] + x[kk];
            }
        }
    }

    // Measured covariates, each with its own stream.
    let mut c: Vec<DMatrix<f64>> = Vec::with_capacity(cfg.k_c());
    for (k, spec) in cfg.covariates.iter().enumerate() {
        let mut rng = rep.stream(TAG_C_BASE + k as u64);
        let col = match spec.kind {
            CovariateKind::Within => {
                let z = standard_normals(&mut rng, m * n);
                DMatrix::from_fn(m, n, |i, j| spec.mean + spec.sd * z[i * n + j])
            }
            CovariateKind::Between => {
                let z = standard_normals(&mut rng, m);
                DMatrix::from_fn(m, n, |i, _| spec.mean + spec.sd * z[i])
            }
        };
        c.push(col);
    }

    // Assemble T, then Y.
    let mut t = DMatrix::zeros(m, n);
    let mut y = DMatrix::zeros(m, n);
    for i in 0..m {
        let b_dot_alpha: f64 = b_latent.iter().zip(&cfg.alpha_b).map(|(col, a)| col[i] * a).sum();
        let b_dot_beta: f64 = b_latent.iter().zip(&cfg.beta_b).map(|(col, b)| col[i] * b).sum();
        for j in 0..n {
            let c_dot_alpha: f64 = c.iter().zip(&cfg.alpha_c).map(|(col, a)| col[(i, j)] * a).sum();
            let c_dot_beta: f64 = c.iter().zip(&cfg.beta_c).map(|(col, b)| col[(i, j)] * b).sum();
            let w_dot_alpha: f64 =
                w_latent.iter().zip(&cfg.alpha_w).map(|(col, a)| col[(i, j)] * a).sum();
            let w_dot_beta: f64 =
                w_latent.iter().zip(&cfg.beta_w).map(|(col, b)| col[(i, j)] * b).sum();

            let t_ij = cfg.t_intercept
                + c_dot_alpha
                + w_dot_alpha
                + b_dot_alpha
                + a0[i]
                + sigma_et * eps_t[i * n + j];
            t[(i, j)] = t_ij;
            y[(i, j)] = cfg.y_intercept
                + cfg.beta * t_ij
                + c_dot_beta
                + w_dot_beta
                + b_dot_beta
                + b0[i]
                + sigma_ey * eps_y[i * n + j];
        }
    }

    Ok(ClusteredDataset {
        m,
        n,
        y,
        t,
        c,
        w_latent,
        b_latent,
    })
}

/// One swept parameter value together with the fully specified scenario it
/// induces.
#[derive(Debug, Clone)]
pub struct GridPoint {
    pub value: f64,
    pub cfg: ScenarioConfig,
}

/// A one-dimensional scenario sweep: one parameter varies, everything else
/// is copied from the base configuration.
#[derive(Debug, Clone)]
pub struct ScenarioGrid {
    pub axis: String,
    pub points: Vec<GridPoint>,
}

/// Names accepted by [`scenario_grid`].
pub const AXIS_NAMES: &[&str] = &[
    "n",
    "m",
    "beta",
    "alpha_1c",
    "beta_1c",
    "alpha_2c",
    "alpha_3c",
    "beta_2c",
    "beta_3c",
    "alpha_1w",
    "beta_1w",
    "alpha_1b",
    "beta_1b",
    "sigma_a2",
    "sigma_b2",
    "sigma_et2",
    "sigma_ey2",
];

fn positive_integer(axis: &str, value: f64) -> Result<usize> {
    if !value.is_finite() || value < 1.0 || value.fract() != 0.0 {
        return Err(Error::InvalidConfig(format!(
            "axis `{axis}` needs a positive integer, got {value}"
        )));
    }
    Ok(value as usize)
}

fn vector_entry<'a>(
    axis: &str,
    v: &'a mut [f64],
    index: usize,
) -> Result<&'a mut f64> {
    v.get_mut(index).ok_or_else(|| {
        Error::InvalidConfig(format!(
            "axis `{axis}` indexes entry {index} but the vector has fewer elements"
        ))
    })
}

/// Sets one named parameter of a configuration; the vocabulary follows the
/// default parameterization (`alpha_1w` is the first within-confounder
/// effect on the exposure, `alpha_2c`/`alpha_3c` the two covariate effects,
/// and so on).
pub fn set_axis(cfg: &mut ScenarioConfig, axis: &str, value: f64) -> Result<()> {
    match axis {
        "n" => cfg.n = positive_integer(axis, value)?,
        "m" => cfg.m = positive_integer(axis, value)?,
        "beta" => cfg.beta = value,
        "alpha_1c" => cfg.t_intercept = value,
        "beta_1c" => cfg.y_intercept = value,
        "alpha_2c" => *vector_entry(axis, &mut cfg.alpha_c, 0)? = value,
        "alpha_3c" => *vector_entry(axis, &mut cfg.alpha_c, 1)? = value,
        "beta_2c" => *vector_entry(axis, &mut cfg.beta_c, 0)? = value,
        "beta_3c" => *vector_entry(axis, &mut cfg.beta_c, 1)? = value,
        "alpha_1w" => *vector_entry(axis, &mut cfg.alpha_w, 0)? = value,
        "beta_1w" => *vector_entry(axis, &mut cfg.beta_w, 0)? = value,
        "alpha_1b" => *vector_entry(axis, &mut cfg.alpha_b, 0)? = value,
        "beta_1b" => *vector_entry(axis, &mut cfg.beta_b, 0)? = value,
        "sigma_a2" => cfg.sigma_a2 = value,
        "sigma_b2" => cfg.sigma_b2 = value,
        "sigma_et2" => cfg.sigma_et2 = value,
        "sigma_ey2" => cfg.sigma_ey2 = value,
        other => return Err(Error::UnknownAxis(other.to_string())),
    }
    Ok(())
}

/// Expands a base configuration into one configuration per axis value, with
/// seeds offset deterministically so the grid points draw independent data.
pub fn scenario_grid(
    base: &ScenarioConfig,
    axis: &str,
    values: &[f64],
) -> Result<ScenarioGrid> {
    base.validate()?;
    if !AXIS_NAMES.contains(&axis) {
        return Err(Error::UnknownAxis(axis.to_string()));
    }
    let mut points = Vec::with_capacity(values.len());
    for (k, &value) in values.iter().enumerate() {
        let mut cfg = base.clone();
        set_axis(&mut cfg, axis, value)?;
        cfg.seed = splitmix64(base.seed ^ splitmix64(k as u64 + 1));
        cfg.validate()?;
        points.push(GridPoint { value, cfg });
    }
    Ok(ScenarioGrid {
        axis: axis.to_string(),
        points,
    })
}

/// Writes a dataset as CSV with columns `cluster,unit,y,t,c_*` and, when
/// `include_latents` is set, the retained `w_*`/`b_*` draws.
pub fn write_dataset_csv<W: Write>(
    data: &ClusteredDataset,
    include_latents: bool,
    out: &mut W,
) -> Result<()> {
    write!(out, "cluster,unit,y,t")?;
    for k in 0..data.c.len() {
        write!(out, ",c_{}", k + 1)?;
    }
    if include_latents {
        for k in 0..data.w_latent.len() {
            write!(out, ",w_{}", k + 1)?;
        }
        for k in 0..data.b_latent.len() {
            write!(out, ",b_{}", k + 1)?;
        }
    }
    writeln!(out)?;
    for i in 0..data.m {
        for j in 0..data.n {
            write!(out, "{},{},{},{}", i, j, data.y[(i, j)], data.t[(i, j)])?;
            for c in &data.c {
                write!(out, ",{}", c[(i, j)])?;
            }
            if include_latents {
                for w in &data.w_latent {
                    write!(out, ",{}", w[(i, j)])?;
                }
                for b in &data.b_latent {
                    write!(out, ",{}", b[i])?;
                }
            }
            writeln!(out)?;
        }
    }
    Ok(())
}
