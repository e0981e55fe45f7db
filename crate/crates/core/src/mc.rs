//! Monte Carlo harness: replicated simulate-then-fit cycles over scenario
//! grids, aggregated into empirical-versus-analytic bias comparisons.
//!
//! Replications are independent jobs and run in parallel; aggregation walks
//! the results in replication order, so reports are bit-identical across
//! worker counts.

use std::collections::BTreeMap;
use std::io::Write;

use rayon::prelude::*;

use crate::bias::{bias_for, point_plims, LmmPlimConstants, Regime};
use crate::dgp::{simulate_dataset, ReplicationSeed, ScenarioGrid};
use crate::error::{Error, Result};
use crate::estimators::{
    fit_fe, fit_iv, fit_lmm, fit_ols, CovariatePolicy, DIAG_VARCOMP_TRUNCATED,
    DIAG_WEAK_INSTRUMENT,
};
use crate::model::{ConfounderMode, FitResult, Method, ScenarioConfig};

/// How a Monte Carlo run is executed and judged.
#[derive(Debug, Clone)]
pub struct RunSettings {
    pub reps: usize,
    /// Agreement threshold in Monte Carlo standard errors.
    pub z: f64,
    pub policy: CovariatePolicy,
    /// Methods included in the report; all replications still fit all four.
    pub methods: Vec<Method>,
    /// Worker count (`None` uses the global pool).
    pub threads: Option<usize>,
    /// Calibration size for the mixed-model plim constants.
    pub m_cal: usize,
    pub reps_cal: usize,
}

impl Default for RunSettings {
    fn default() -> Self {
        RunSettings {
            reps: 1000,
            z: 3.0,
            policy: CovariatePolicy::default(),
            methods: Method::ALL.to_vec(),
            threads: None,
            m_cal: crate::bias::DEFAULT_M_CAL,
            reps_cal: crate::bias::DEFAULT_REPS_CAL,
        }
    }
}

/// Per-method fit outcomes of one replication.
pub type ReplicationFits = BTreeMap<Method, Result<FitResult>>;

/// One simulated dataset fitted by all four methods. Per-fit errors are
/// captured, not thrown.
pub fn run_replication(
    cfg: &ScenarioConfig,
    rep: ReplicationSeed,
    policy: &CovariatePolicy,
) -> Result<ReplicationFits> {
    let data = simulate_dataset(cfg, rep)?;
    let mut fits = BTreeMap::new();
    fits.insert(Method::Iv, fit_iv(&data, policy));
    fits.insert(Method::Ols, fit_ols(&data, policy));
    fits.insert(Method::Fe, fit_fe(&data, policy));
    fits.insert(Method::Lmm, fit_lmm(&data, policy));
    Ok(fits)
}

/// Aggregated outcome for one method at one scenario point.
#[derive(Debug, Clone)]
pub struct MethodSummary {
    pub method: Method,
    pub reps_used: usize,
    pub mean_bias: f64,
    /// Sample SD of the estimates divided by sqrt(reps_used).
    pub mc_se: f64,
    pub analytic_bias: f64,
    /// Whether the empirical mean sits within `z` Monte Carlo standard
    /// errors of the analytic value; `None` when the method produced no
    /// estimates at this point (every fit failed), in which case `reps_used`
    /// and `failures` carry the diagnosis.
    pub agreement: Option<bool>,
    pub truncation_count: usize,
    pub weak_instrument_count: usize,
    /// Replication index and error text of every failed fit.
    pub failures: Vec<(u64, String)>,
}

/// All method summaries at one grid point.
#[derive(Debug, Clone)]
pub struct PointReport {
    pub axis_value: f64,
    pub scenario: ConfounderMode,
    pub n: usize,
    /// Calibrated plim constants backing the LMM analytic cell, when the
    /// report includes the LMM.
    pub plims: Option<LmmPlimConstants>,
    pub methods: Vec<MethodSummary>,
}

#[derive(Debug, Clone)]
pub struct MonteCarloReport {
    pub axis: String,
    pub z: f64,
    pub reps_requested: usize,
    pub points: Vec<PointReport>,
}

/// Column header of the report CSV.
pub const CSV_HEADER: &str =
    "scenario_axis,axis_value,method,mean_bias,mc_se,analytic_bias,agreement,reps,truncations,weak_iv_count";

impl MonteCarloReport {
    /// True when no empirical point disagreed with its analytic value;
    /// methods that produced no estimates have no agreement flag and do
    /// not veto (their failure counts are the signal).
    pub fn all_agree(&self) -> bool {
        self.points
            .iter()
            .flat_map(|p| p.methods.iter())
            .all(|s| s.agreement != Some(false))
    }

    pub fn write_csv<W: Write>(&self, out: &mut W) -> Result<()> {
        writeln!(out, "{CSV_HEADER}")?;
        for point in &self.points {
            for s in &point.methods {
                let agreement = match s.agreement {
                    Some(a) => a.to_string(),
                    None => String::new(),
                };
                writeln!(
                    out,
                    "{},{},{},{},{},{},{},{},{},{}",
                    self.axis,
                    point.axis_value,
                    s.method,
                    s.mean_bias,
                    s.mc_se,
                    s.analytic_bias,
                    agreement,
                    s.reps_used,
                    s.truncation_count,
                    s.weak_instrument_count
                )?;
            }
        }
        Ok(())
    }
}

fn build_pool(threads: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::InvalidConfig(format!("worker pool: {e}")))
}

fn summarize(
    method: Method,
    cfg: &ScenarioConfig,
    outcomes: &[(u64, std::result::Result<FitResult, String>)],
    analytic_bias: f64,
    z: f64,
) -> MethodSummary {
    let mut biases = Vec::with_capacity(outcomes.len());
    let mut failures = Vec::new();
    let mut truncation_count = 0;
    let mut weak_instrument_count = 0;
    for (rep, outcome) in outcomes {
        match outcome {
            Ok(fit) => {
                biases.push(fit.beta_hat - cfg.beta);
                if fit.diagnostic(DIAG_VARCOMP_TRUNCATED) == Some(1.0) {
                    truncation_count += 1;
                }
                if fit.diagnostic(DIAG_WEAK_INSTRUMENT) == Some(1.0) {
                    weak_instrument_count += 1;
                }
            }
            Err(msg) => failures.push((*rep, msg.clone())),
        }
    }
    let reps_used = biases.len();
    let (mean_bias, mc_se) = if reps_used == 0 {
        (f64::NAN, f64::NAN)
    } else {
        let mean = biases.iter().sum::<f64>() / reps_used as f64;
        let se = if reps_used > 1 {
            let var = biases.iter().map(|b| (b - mean) * (b - mean)).sum::<f64>()
                / (reps_used - 1) as f64;
            (var / reps_used as f64).sqrt()
        } else {
            f64::NAN
        };
        (mean, se)
    };
    let agreement = if reps_used == 0 {
        None
    } else {
        Some((mean_bias - analytic_bias).abs() <= z * mc_se)
    };
    MethodSummary {
        method,
        reps_used,
        mean_bias,
        mc_se,
        analytic_bias,
        agreement,
        truncation_count,
        weak_instrument_count,
        failures,
    }
}

fn run_point(
    axis_value: f64,
    cfg: &ScenarioConfig,
    settings: &RunSettings,
) -> Result<PointReport> {
    let scenario = cfg.confounder_mode;
    let needs_plims = settings.methods.contains(&Method::Lmm);
    let plims = if needs_plims {
        Some(point_plims(cfg, settings.m_cal, settings.reps_cal)?)
    } else {
        None
    };
    let analytic_plims = plims
        .clone()
        .unwrap_or_else(|| LmmPlimConstants::fixed(1.0, 1.0));

    let policy = settings.policy;
    let outcomes: Vec<(u64, std::result::Result<ReplicationFits, String>)> =
        (0..settings.reps as u64)
            .into_par_iter()
            .map(|r| {
                let res = run_replication(cfg, ReplicationSeed::new(cfg.seed, r), &policy)
                    .map_err(|e| e.to_string());
                (r, res)
            })
            .collect();

    let mut methods = Vec::with_capacity(settings.methods.len());
    for &method in &settings.methods {
        let per_method: Vec<(u64, std::result::Result<FitResult, String>)> = outcomes
            .iter()
            .map(|(r, res)| {
                let fit = match res {
                    Ok(map) => match &map[&method] {
                        Ok(fit) => Ok(fit.clone()),
                        Err(e) => Err(e.to_string()),
                    },
                    Err(e) => Err(e.clone()),
                };
                (*r, fit)
            })
            .collect();
        let analytic = bias_for(method, cfg, scenario, Regime::MInftyFixedN, &analytic_plims)?;
        methods.push(summarize(method, cfg, &per_method, analytic, settings.z));
    }

    Ok(PointReport {
        axis_value,
        scenario,
        n: cfg.n,
        plims,
        methods,
    })
}

/// Runs the full grid: every point is calibrated once (when the LMM is
/// reported), replicated `settings.reps` times in parallel, and compared
/// against the fixed-n analytic bias at the point's parameters.
pub fn run_monte_carlo(grid: &ScenarioGrid, settings: &RunSettings) -> Result<MonteCarloReport> {
    if settings.reps < 2 {
        return Err(Error::InvalidConfig(format!(
            "Monte Carlo needs reps >= 2, got {}",
            settings.reps
        )));
    }
    let mut points = Vec::with_capacity(grid.points.len());
    match settings.threads {
        Some(t) => {
            let pool = build_pool(t)?;
            for point in &grid.points {
                points.push(pool.install(|| run_point(point.value, &point.cfg, settings))?);
            }
        }
        None => {
            for point in &grid.points {
                points.push(run_point(point.value, &point.cfg, settings)?);
            }
        }
    }
    Ok(MonteCarloReport {
        axis: grid.axis.clone(),
        z: settings.z,
        reps_requested: settings.reps,
        points,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dgp::scenario_grid;
    use crate::error::Error;

    /// Exposure keeps cluster and unit noise (the designs need variation)
    /// but the outcome is an exact linear law, so every estimator recovers
    /// the effect without statistical error.
    fn exact_outcome_cfg() -> ScenarioConfig {
        let mut cfg = ScenarioConfig::defaults();
        cfg.m = 30;
        cfg.n = 6;
        cfg.sigma_b2 = 0.0;
        cfg.sigma_ey2 = 0.0;
        cfg.confounder_mode = ConfounderMode::None;
        cfg
    }

    #[test]
    fn all_methods_are_exact_without_outcome_noise() {
        let cfg = exact_outcome_cfg();
        let fits = run_replication(
            &cfg,
            ReplicationSeed::new(cfg.seed, 0),
            &CovariatePolicy::default(),
        )
        .unwrap();
        for (method, fit) in &fits {
            let fit = fit.as_ref().unwrap_or_else(|e| panic!("{method}: {e}"));
            assert!(
                (fit.beta_hat - cfg.beta).abs() < 1e-10,
                "{method}: {}",
                fit.beta_hat
            );
        }
    }

    #[test]
    fn replications_are_bit_identical() {
        let cfg = ScenarioConfig::defaults();
        let policy = CovariatePolicy::default();
        let a = run_replication(&cfg, ReplicationSeed::new(cfg.seed, 5), &policy).unwrap();
        let b = run_replication(&cfg, ReplicationSeed::new(cfg.seed, 5), &policy).unwrap();
        for method in Method::ALL {
            let fa = a[&method].as_ref().unwrap();
            let fb = b[&method].as_ref().unwrap();
            assert_eq!(fa.beta_hat.to_bits(), fb.beta_hat.to_bits(), "{method}");
            assert_eq!(fa.var_beta_hat.to_bits(), fb.var_beta_hat.to_bits());
        }
    }

    #[test]
    fn singleton_clusters_fail_only_the_fixed_effects_fit() {
        let mut cfg = ScenarioConfig::defaults();
        cfg.n = 1;
        cfg.m = 50;
        let fits = run_replication(
            &cfg,
            ReplicationSeed::new(cfg.seed, 0),
            &CovariatePolicy::default(),
        )
        .unwrap();
        assert!(matches!(fits[&Method::Fe], Err(Error::DegenerateWithin)));
        for method in [Method::Iv, Method::Ols, Method::Lmm] {
            assert!(fits[&method].is_ok(), "{method} should succeed at n = 1");
        }
    }

    #[test]
    fn reports_are_identical_across_worker_counts() {
        let mut cfg = ScenarioConfig::defaults();
        cfg.m = 20;
        cfg.n = 5;
        let grid = scenario_grid(&cfg, "n", &[4.0, 5.0]).unwrap();
        let mut settings = RunSettings {
            reps: 16,
            m_cal: 100,
            reps_cal: 8,
            ..RunSettings::default()
        };
        settings.threads = Some(1);
        let single = run_monte_carlo(&grid, &settings).unwrap();
        settings.threads = Some(4);
        let multi = run_monte_carlo(&grid, &settings).unwrap();

        let mut csv_single = Vec::new();
        single.write_csv(&mut csv_single).unwrap();
        let mut csv_multi = Vec::new();
        multi.write_csv(&mut csv_multi).unwrap();
        assert_eq!(csv_single, csv_multi);
    }

    #[test]
    fn mc_se_shrinks_with_replication_count() {
        let mut cfg = ScenarioConfig::defaults();
        cfg.m = 40;
        cfg.n = 5;
        cfg.confounder_mode = ConfounderMode::WOnly;
        let grid = scenario_grid(&cfg, "n", &[5.0]).unwrap();
        let se_at = |reps: usize| {
            let settings = RunSettings {
                reps,
                methods: vec![Method::Ols],
                m_cal: 100,
                reps_cal: 8,
                ..RunSettings::default()
            };
            run_monte_carlo(&grid, &settings).unwrap().points[0].methods[0].mc_se
        };
        let se = [se_at(250), se_at(1000), se_at(4000)];
        for pair in se.windows(2) {
            let ratio = pair[0] / pair[1];
            assert!(
                (ratio - 2.0).abs() <= 0.4,
                "mc_se ratio {ratio} outside 2.0 +/- 20% ({se:?})"
            );
        }
    }

    #[test]
    fn failures_are_listed_not_dropped() {
        let mut cfg = ScenarioConfig::defaults();
        cfg.n = 1;
        cfg.m = 40;
        let grid = scenario_grid(&cfg, "m", &[40.0]).unwrap();
        let settings = RunSettings {
            reps: 5,
            methods: vec![Method::Fe, Method::Ols],
            m_cal: 100,
            reps_cal: 8,
            ..RunSettings::default()
        };
        let report = run_monte_carlo(&grid, &settings).unwrap();
        let fe = &report.points[0].methods[0];
        assert_eq!(fe.method, Method::Fe);
        assert_eq!(fe.reps_used, 0);
        assert_eq!(fe.failures.len(), 5);
        assert_eq!(fe.agreement, None);
        let ols = &report.points[0].methods[1];
        assert_eq!(ols.reps_used, 5);
        assert!(ols.failures.is_empty());
    }
}
