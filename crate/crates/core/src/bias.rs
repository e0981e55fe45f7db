//! Closed-form asymptotic bias of each estimator under each confounding
//! scenario, plus Monte Carlo calibration of the mixed-model plim
//! constants.
//!
//! All formulas are driven by the four quadratic forms `alpha_w' V_w
//! beta_w`, `alpha_w' V_w alpha_w`, `alpha_b' V_b beta_b` and
//! `alpha_b' V_b alpha_b`; a scenario simply switches the inactive pathway
//! off.

use std::fmt;
use std::io::Write;

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::dgp::{simulate_dataset, splitmix64, ReplicationSeed};
use crate::error::{Error, Result};
use crate::estimators::{lmm_variance_components, CovariatePolicy};
use crate::model::{ConfounderMode, Method, ScenarioConfig};

/// Asymptotic regime of a bias value: many clusters with the cluster size
/// held fixed, or both dimensions growing.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Regime {
    MInftyFixedN,
    MAndNInfty,
}

impl fmt::Display for Regime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Regime::MInftyFixedN => "m_infty_fixed_n",
            Regime::MAndNInfty => "m_and_n_infty",
        };
        f.write_str(s)
    }
}

/// One analytic bias value.
#[derive(Debug, Clone, PartialEq)]
pub struct BiasCell {
    pub method: Method,
    pub scenario: ConfounderMode,
    pub regime: Regime,
    /// Cluster size; meaningful only in the fixed-n regime.
    pub n: usize,
    pub value: f64,
}

/// Provenance of a calibration run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CalibrationMeta {
    pub m_cal: usize,
    pub reps_cal: usize,
    pub seed: u64,
    /// Monte Carlo spread (sample SD across calibration replications).
    pub sd_de2: f64,
    pub sd_chie2: f64,
}

/// Probability limits of the mixed-model variance-component estimators
/// under misspecification, obtained by simulation at a large cluster count.
#[derive(Debug, Clone, PartialEq)]
pub struct LmmPlimConstants {
    pub sigma_de2: f64,
    pub sigma_chie2: f64,
    pub calibration_meta: CalibrationMeta,
}

impl LmmPlimConstants {
    /// Constants taken as known rather than calibrated; used by tests that
    /// pin the formulas directly.
    pub fn fixed(sigma_de2: f64, sigma_chie2: f64) -> Self {
        LmmPlimConstants {
            sigma_de2,
            sigma_chie2,
            calibration_meta: CalibrationMeta {
                m_cal: 0,
                reps_cal: 0,
                seed: 0,
                sd_de2: 0.0,
                sd_chie2: 0.0,
            },
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.sigma_de2.is_finite() && self.sigma_de2 > 0.0)
            || !(self.sigma_chie2.is_finite() && self.sigma_chie2 > 0.0)
        {
            return Err(Error::Calibration(format!(
                "plim constants must be positive and finite, got ({}, {})",
                self.sigma_de2, self.sigma_chie2
            )));
        }
        Ok(())
    }
}

/// The scenario-masked quadratic forms feeding every formula.
#[derive(Debug, Clone, Copy)]
struct QuadraticForms {
    awvbw: f64,
    awvaw: f64,
    abvbb: f64,
    abvab: f64,
}

fn quad_form(a: &[f64], v: &DMatrix<f64>, b: &[f64]) -> f64 {
    let mut total = 0.0;
    for (i, ai) in a.iter().enumerate() {
        for (j, bj) in b.iter().enumerate() {
            total += ai * v[(i, j)] * bj;
        }
    }
    total
}

fn forms(cfg: &ScenarioConfig, scenario: ConfounderMode) -> QuadraticForms {
    let w_on = scenario.includes_w();
    let b_on = scenario.includes_b();
    QuadraticForms {
        awvbw: if w_on {
            quad_form(&cfg.alpha_w, &cfg.v_w, &cfg.beta_w)
        } else {
            0.0
        },
        awvaw: if w_on {
            quad_form(&cfg.alpha_w, &cfg.v_w, &cfg.alpha_w)
        } else {
            0.0
        },
        abvbb: if b_on {
            quad_form(&cfg.alpha_b, &cfg.v_b, &cfg.beta_b)
        } else {
            0.0
        },
        abvab: if b_on {
            quad_form(&cfg.alpha_b, &cfg.v_b, &cfg.alpha_b)
        } else {
            0.0
        },
    }
}

/// Denominators below this magnitude raise [`Error::ZeroDenominator`]
/// instead of producing NaN or infinity.
const DENOM_FLOOR: f64 = 1e-300;

fn ratio(num: f64, den: f64, what: &str) -> Result<f64> {
    if !den.is_finite() || den.abs() < DENOM_FLOOR {
        return Err(Error::ZeroDenominator(what.to_string()));
    }
    Ok(num / den)
}

/// Asymptotic bias of the preference-based IV estimator.
pub fn bias_iv(cfg: &ScenarioConfig, scenario: ConfounderMode, regime: Regime) -> Result<f64> {
    let q = forms(cfg, scenario);
    match regime {
        Regime::MInftyFixedN => {
            let n = cfg.n as f64;
            ratio(
                q.abvbb + q.awvbw / n,
                (cfg.sigma_a2 + q.abvab) + (q.awvaw + cfg.sigma_et2) / n,
                "IV fixed-n denominator",
            )
        }
        Regime::MAndNInfty => ratio(q.abvbb, cfg.sigma_a2 + q.abvab, "IV limit denominator"),
    }
}

/// Asymptotic bias of pooled OLS; independent of the cluster size, so both
/// regimes evaluate the same expression.
pub fn bias_ols(cfg: &ScenarioConfig, scenario: ConfounderMode, _regime: Regime) -> Result<f64> {
    let q = forms(cfg, scenario);
    ratio(
        q.abvbb + q.awvbw,
        cfg.sigma_a2 + q.abvab + q.awvaw + cfg.sigma_et2,
        "OLS denominator",
    )
}

/// Asymptotic bias of the fixed-effects estimator; between-cluster
/// confounding never contributes.
pub fn bias_fe(cfg: &ScenarioConfig, scenario: ConfounderMode, _regime: Regime) -> Result<f64> {
    let q = forms(cfg, scenario);
    ratio(q.awvbw, q.awvaw + cfg.sigma_et2, "FE denominator")
}

/// Asymptotic bias of the mixed-model estimator. The fixed-n regime needs
/// the calibrated plim constants; the double-asymptotic regime does not.
pub fn bias_lmm(
    cfg: &ScenarioConfig,
    scenario: ConfounderMode,
    regime: Regime,
    plims: &LmmPlimConstants,
) -> Result<f64> {
    let q = forms(cfg, scenario);
    match regime {
        Regime::MInftyFixedN => {
            plims.validate()?;
            let n = cfg.n as f64;
            let kappa =
                plims.sigma_chie2 / (plims.sigma_chie2 + (n - 1.0) * plims.sigma_de2);
            ratio(
                q.abvbb * kappa + q.awvbw,
                (cfg.sigma_a2 + q.abvab) * kappa + (q.awvaw + cfg.sigma_et2),
                "LMM fixed-n denominator",
            )
        }
        Regime::MAndNInfty => ratio(q.awvbw, q.awvaw + cfg.sigma_et2, "LMM limit denominator"),
    }
}

/// Estimates the plim constants by running the mixed-model variance
/// component pipeline on `reps_cal` datasets simulated with `m_cal`
/// clusters at the configuration's cluster size.
pub fn calibrate_lmm_plims(
    cfg: &ScenarioConfig,
    m_cal: usize,
    reps_cal: usize,
) -> Result<LmmPlimConstants> {
    cfg.validate()?;
    if m_cal < 2 || reps_cal < 2 {
        return Err(Error::Calibration(format!(
            "calibration needs m_cal >= 2 and reps_cal >= 2, got ({m_cal}, {reps_cal})"
        )));
    }
    let mut cal_cfg = cfg.clone();
    cal_cfg.m = m_cal;
    cal_cfg.seed = splitmix64(cfg.seed ^ 0xCA11_B07E);

    let policy = CovariatePolicy::default();
    let components: Vec<Result<(f64, f64)>> = (0..reps_cal as u64)
        .into_par_iter()
        .map(|rep| {
            let data = simulate_dataset(&cal_cfg, ReplicationSeed::new(cal_cfg.seed, rep))?;
            lmm_variance_components(&data, &policy)
        })
        .collect();

    let mut d2 = Vec::with_capacity(reps_cal);
    let mut chi2 = Vec::with_capacity(reps_cal);
    for c in components {
        let (d, x) = c?;
        d2.push(d);
        chi2.push(x);
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let sd = |v: &[f64], mu: f64| {
        (v.iter().map(|x| (x - mu) * (x - mu)).sum::<f64>() / (v.len() - 1) as f64).sqrt()
    };
    let mean_d2 = mean(&d2);
    let mean_chi2 = mean(&chi2);
    let constants = LmmPlimConstants {
        sigma_de2: mean_d2,
        sigma_chie2: mean_chi2,
        calibration_meta: CalibrationMeta {
            m_cal,
            reps_cal,
            seed: cal_cfg.seed,
            sd_de2: sd(&d2, mean_d2),
            sd_chie2: sd(&chi2, mean_chi2),
        },
    };
    constants.validate()?;
    Ok(constants)
}

/// Default calibration size: large enough for the components to sit at
/// their plims, small enough to run everywhere.
pub const DEFAULT_M_CAL: usize = 2000;
pub const DEFAULT_REPS_CAL: usize = 50;

/// Plim constants for one scenario point: calibrated when the variance
/// components are identifiable (n >= 2), otherwise the neutral pair — at
/// n = 1 the mixed-model cell is plim-free because the shrinkage weight is
/// exactly one.
pub fn point_plims(
    cfg: &ScenarioConfig,
    m_cal: usize,
    reps_cal: usize,
) -> Result<LmmPlimConstants> {
    if cfg.n < 2 {
        Ok(LmmPlimConstants::fixed(1.0, 1.0))
    } else {
        calibrate_lmm_plims(cfg, m_cal, reps_cal)
    }
}

/// Analytic bias for one method at one scenario and regime.
pub fn bias_for(
    method: Method,
    cfg: &ScenarioConfig,
    scenario: ConfounderMode,
    regime: Regime,
    plims: &LmmPlimConstants,
) -> Result<f64> {
    match method {
        Method::Iv => bias_iv(cfg, scenario, regime),
        Method::Ols => bias_ols(cfg, scenario, regime),
        Method::Fe => bias_fe(cfg, scenario, regime),
        Method::Lmm => bias_lmm(cfg, scenario, regime, plims),
    }
}

const TABLE_SCENARIOS: [ConfounderMode; 3] = [
    ConfounderMode::WOnly,
    ConfounderMode::BOnly,
    ConfounderMode::WAndB,
];

/// All 24 cells (4 methods x 3 scenarios x 2 regimes) at the
/// configuration's cluster size.
pub fn bias_table(cfg: &ScenarioConfig, plims: &LmmPlimConstants) -> Result<Vec<BiasCell>> {
    cfg.validate()?;
    let mut cells = Vec::with_capacity(24);
    for regime in [Regime::MInftyFixedN, Regime::MAndNInfty] {
        for scenario in TABLE_SCENARIOS {
            for method in Method::ALL {
                cells.push(BiasCell {
                    method,
                    scenario,
                    regime,
                    n: cfg.n,
                    value: bias_for(method, cfg, scenario, regime, plims)?,
                });
            }
        }
    }
    Ok(cells)
}

/// Writes a bias table as CSV, one block per regime, rows by scenario and
/// one column per method.
pub fn write_bias_table_csv<W: Write>(cells: &[BiasCell], out: &mut W) -> Result<()> {
    writeln!(out, "regime,scenario,n,IV,OLS,FE,LMM")?;
    for regime in [Regime::MInftyFixedN, Regime::MAndNInfty] {
        for scenario in TABLE_SCENARIOS {
            let mut row = Vec::new();
            let mut n = 0;
            for method in Method::ALL {
                let cell = cells
                    .iter()
                    .find(|c| c.method == method && c.scenario == scenario && c.regime == regime)
                    .ok_or_else(|| Error::ShapeMismatch("incomplete bias table".into()))?;
                n = cell.n;
                row.push(cell.value.to_string());
            }
            writeln!(out, "{},{},{},{}", regime, scenario, n, row.join(","))?;
        }
    }
    Ok(())
}
