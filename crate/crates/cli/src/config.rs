//! Strict JSON experiment configs. Unknown keys are rejected and schema
//! validation reports every violation at once; omitted model parameters
//! fall back to the default parameterization.

use std::path::{Path, PathBuf};

use serde_json::{Map, Value};

use confound_core::dgp::{set_axis, AXIS_NAMES};
use confound_core::{ConfounderMode, Method, ScenarioConfig};

use crate::error::{CliError, Result};
use crate::presets::FigurePreset;

/// A fully resolved experiment: base scenario, swept axis, replication
/// budget and output locations.
#[derive(Debug, Clone)]
pub struct ExperimentSpec {
    pub name: String,
    pub base: ScenarioConfig,
    pub axis: String,
    pub values: Vec<f64>,
    pub reps: usize,
    pub methods: Vec<Method>,
    /// When false the experiment evaluates the bias formulas only.
    pub empirical: bool,
    /// Agreement threshold in Monte Carlo standard errors.
    pub agreement_z: f64,
    pub csv_path: PathBuf,
    pub svg_path: Option<PathBuf>,
}

impl ExperimentSpec {
    /// Redirects both outputs into a directory, keeping file names derived
    /// from the experiment name.
    pub fn with_output_dir(mut self, dir: &Path) -> Self {
        self.csv_path = dir.join(format!("{}.csv", self.name));
        if self.svg_path.is_some() {
            self.svg_path = Some(dir.join(format!("{}.svg", self.name)));
        }
        self
    }
}

/// Scalar model parameters accepted at the top level of a config; the
/// names follow the default parameterization and double as sweep axes.
const MODEL_KEYS: &[&str] = &[
    "m",
    "n",
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

const EXPERIMENT_KEYS: &[&str] = &[
    "name",
    "axis",
    "values",
    "reps",
    "methods",
    "empirical",
    "agreement_z",
    "seed",
    "confounder_mode",
    "csv",
    "svg",
];

/// Keys that may accompany a `preset` reference.
const PRESET_OVERRIDE_KEYS: &[&str] = &[
    "name",
    "reps",
    "empirical",
    "agreement_z",
    "seed",
    "csv",
    "svg",
];

struct Checker<'a> {
    obj: &'a Map<String, Value>,
    violations: Vec<String>,
}

impl<'a> Checker<'a> {
    fn new(obj: &'a Map<String, Value>) -> Self {
        Checker {
            obj,
            violations: Vec::new(),
        }
    }

    fn fail(&mut self, msg: String) {
        self.violations.push(msg);
    }

    fn string(&mut self, key: &str) -> Option<String> {
        match self.obj.get(key) {
            None => None,
            Some(Value::String(s)) => Some(s.clone()),
            Some(other) => {
                self.fail(format!("{key}: expected a string, got {other}"));
                None
            }
        }
    }

    fn bool(&mut self, key: &str) -> Option<bool> {
        match self.obj.get(key) {
            None => None,
            Some(Value::Bool(b)) => Some(*b),
            Some(other) => {
                self.fail(format!("{key}: expected a boolean, got {other}"));
                None
            }
        }
    }

    fn number(&mut self, key: &str) -> Option<f64> {
        match self.obj.get(key) {
            None => None,
            Some(Value::Number(n)) => match n.as_f64() {
                Some(v) if v.is_finite() => Some(v),
                _ => {
                    self.fail(format!("{key}: not a finite number"));
                    None
                }
            },
            Some(other) => {
                self.fail(format!("{key}: expected a number, got {other}"));
                None
            }
        }
    }

    fn unsigned(&mut self, key: &str) -> Option<u64> {
        match self.obj.get(key) {
            None => None,
            Some(Value::Number(n)) => match n.as_u64() {
                Some(v) => Some(v),
                None => {
                    self.fail(format!("{key}: expected a nonnegative integer"));
                    None
                }
            },
            Some(other) => {
                self.fail(format!("{key}: expected an integer, got {other}"));
                None
            }
        }
    }

    fn number_array(&mut self, key: &str) -> Option<Vec<f64>> {
        match self.obj.get(key) {
            None => None,
            Some(Value::Array(items)) => {
                let mut out = Vec::with_capacity(items.len());
                for (i, item) in items.iter().enumerate() {
                    match item.as_f64() {
                        Some(v) if v.is_finite() => out.push(v),
                        _ => {
                            self.fail(format!("{key}[{i}]: expected a finite number, got {item}"));
                            return None;
                        }
                    }
                }
                Some(out)
            }
            Some(other) => {
                self.fail(format!("{key}: expected an array, got {other}"));
                None
            }
        }
    }

    fn reject_unknown_keys(&mut self, allowed: &[&str]) {
        for key in self.obj.keys() {
            if !allowed.contains(&key.as_str()) {
                self.fail(format!("{key}: unknown key"));
            }
        }
    }
}

fn apply_common_overrides(checker: &mut Checker<'_>, spec: &mut ExperimentSpec) {
    if let Some(name) = checker.string("name") {
        spec.name = name;
    }
    if let Some(reps) = checker.unsigned("reps") {
        if reps < 2 {
            checker.fail(format!("reps: must be at least 2, got {reps}"));
        } else {
            spec.reps = reps as usize;
        }
    }
    if let Some(empirical) = checker.bool("empirical") {
        spec.empirical = empirical;
    }
    if let Some(z) = checker.number("agreement_z") {
        if z <= 0.0 {
            checker.fail(format!("agreement_z: must be positive, got {z}"));
        } else {
            spec.agreement_z = z;
        }
    }
    if let Some(seed) = checker.unsigned("seed") {
        spec.base.seed = seed;
    }
    if let Some(csv) = checker.string("csv") {
        spec.csv_path = PathBuf::from(csv);
    }
    if let Some(svg) = checker.string("svg") {
        spec.svg_path = Some(PathBuf::from(svg));
    }
}

fn parse_preset_config(obj: &Map<String, Value>) -> Result<ExperimentSpec> {
    let mut checker = Checker::new(obj);
    checker.reject_unknown_keys(
        &PRESET_OVERRIDE_KEYS
            .iter()
            .copied()
            .chain(std::iter::once("preset"))
            .collect::<Vec<_>>(),
    );
    let mut spec = None;
    if let Some(name) = checker.string("preset") {
        match FigurePreset::parse(&name) {
            Some(preset) => spec = Some(preset.expand()),
            None => checker.fail(format!(
                "preset: unknown preset `{name}` (expected one of {})",
                FigurePreset::ALL
                    .iter()
                    .map(|p| p.name())
                    .collect::<Vec<_>>()
                    .join(", ")
            )),
        }
    }
    let mut spec = spec.unwrap_or_else(|| FigurePreset::Fig2TopW.expand());
    apply_common_overrides(&mut checker, &mut spec);
    if checker.violations.is_empty() {
        Ok(spec)
    } else {
        Err(CliError::Schema(checker.violations))
    }
}

fn parse_full_config(obj: &Map<String, Value>) -> Result<ExperimentSpec> {
    let mut checker = Checker::new(obj);
    let allowed: Vec<&str> = EXPERIMENT_KEYS.iter().chain(MODEL_KEYS.iter()).copied().collect();
    checker.reject_unknown_keys(&allowed);

    let name = match checker.string("name") {
        Some(n) if !n.is_empty() => Some(n),
        Some(_) => {
            checker.fail("name: must not be empty".into());
            None
        }
        None => {
            checker.fail("name: required".into());
            None
        }
    };
    let axis = match checker.string("axis") {
        Some(a) if AXIS_NAMES.contains(&a.as_str()) => Some(a),
        Some(a) => {
            checker.fail(format!(
                "axis: `{a}` is not a sweepable parameter (expected one of {})",
                AXIS_NAMES.join(", ")
            ));
            None
        }
        None => {
            checker.fail("axis: required".into());
            None
        }
    };
    let values = match checker.number_array("values") {
        Some(v) if !v.is_empty() => Some(v),
        Some(_) => {
            checker.fail("values: must not be empty".into());
            None
        }
        None => {
            if !checker.obj.contains_key("values") {
                checker.fail("values: required".into());
            }
            None
        }
    };

    let mut base = ScenarioConfig::defaults();
    if let Some(mode) = checker.string("confounder_mode") {
        match ConfounderMode::parse(&mode) {
            Some(m) => base.confounder_mode = m,
            None => checker.fail(format!(
                "confounder_mode: `{mode}` is not one of none, W_only, B_only, W_and_B"
            )),
        }
    }
    for &key in MODEL_KEYS {
        if let Some(v) = checker.number(key) {
            if let Err(e) = set_axis(&mut base, key, v) {
                checker.fail(format!("{key}: {e}"));
            }
        }
    }

    let methods = match checker.obj.get("methods") {
        None => Method::ALL.to_vec(),
        Some(Value::Array(items)) => {
            let mut out = Vec::new();
            for (i, item) in items.iter().enumerate() {
                match item.as_str().and_then(Method::parse) {
                    Some(m) => {
                        if !out.contains(&m) {
                            out.push(m);
                        }
                    }
                    None => checker.fail(format!(
                        "methods[{i}]: expected one of IV, OLS, FE, LMM, got {item}"
                    )),
                }
            }
            if out.is_empty() {
                checker.fail("methods: must not be empty".into());
            }
            out
        }
        Some(other) => {
            checker.fail(format!("methods: expected an array, got {other}"));
            Vec::new()
        }
    };

    let mut spec = ExperimentSpec {
        name: name.clone().unwrap_or_default(),
        base,
        axis: axis.unwrap_or_default(),
        values: values.unwrap_or_default(),
        reps: 1000,
        methods,
        empirical: true,
        agreement_z: 3.0,
        csv_path: PathBuf::from(format!("{}.csv", name.unwrap_or_else(|| "experiment".into()))),
        svg_path: None,
    };
    apply_common_overrides(&mut checker, &mut spec);

    if checker.violations.is_empty() {
        Ok(spec)
    } else {
        Err(CliError::Schema(checker.violations))
    }
}

/// Parses an experiment config from JSON text. A `preset` key expands to
/// the corresponding predefined experiment (with a few overridable
/// fields); otherwise the full schema applies.
pub fn parse_config_str(text: &str) -> Result<ExperimentSpec> {
    let value: Value = serde_json::from_str(text).map_err(|e| {
        CliError::Parse(format!("line {}, column {}: {e}", e.line(), e.column()))
    })?;
    let obj = value
        .as_object()
        .ok_or_else(|| CliError::Parse("top level must be a JSON object".into()))?;
    if obj.contains_key("preset") {
        parse_preset_config(obj)
    } else {
        parse_full_config(obj)
    }
}

/// Reads and parses a config file.
pub fn parse_config(path: &Path) -> Result<ExperimentSpec> {
    let text = std::fs::read_to_string(path)?;
    parse_config_str(&text)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config_applies_defaults() {
        let spec =
            parse_config_str(r#"{"name":"t","axis":"n","values":[20],"reps":10}"#).unwrap();
        assert_eq!(spec.name, "t");
        assert_eq!(spec.axis, "n");
        assert_eq!(spec.values, vec![20.0]);
        assert_eq!(spec.reps, 10);
        assert_eq!(spec.methods, Method::ALL.to_vec());
        assert!(spec.empirical);
        assert_eq!(spec.agreement_z, 3.0);
        assert_eq!(spec.base.m, 200);
        assert_eq!(spec.base.beta, 0.7);
        assert_eq!(spec.base.sigma_a2, 0.09);
        assert_eq!(spec.csv_path, PathBuf::from("t.csv"));
        assert!(spec.svg_path.is_none());
    }

    #[test]
    fn empty_values_are_a_schema_error() {
        let err = parse_config_str(r#"{"name":"t","axis":"n","values":[],"reps":10}"#)
            .unwrap_err();
        match err {
            CliError::Schema(v) => assert!(v.iter().any(|m| m.contains("values"))),
            other => panic!("expected schema error, got {other}"),
        }
    }

    #[test]
    fn all_violations_are_listed() {
        let err = parse_config_str(
            r#"{"name":"","axis":"bogus","values":[],"reps":1,"mystery":3}"#,
        )
        .unwrap_err();
        match err {
            CliError::Schema(v) => {
                assert!(v.len() >= 4, "expected many violations, got {v:?}");
                assert!(v.iter().any(|m| m.contains("mystery")));
                assert!(v.iter().any(|m| m.contains("axis")));
                assert!(v.iter().any(|m| m.contains("reps")));
            }
            other => panic!("expected schema error, got {other}"),
        }
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let err =
            parse_config_str(r#"{"name":"t","axis":"n","values":[2],"extra_key":1}"#).unwrap_err();
        match err {
            CliError::Schema(v) => assert!(v.iter().any(|m| m.contains("extra_key"))),
            other => panic!("expected schema error, got {other}"),
        }
    }

    #[test]
    fn preset_reference_expands() {
        let spec = parse_config_str(r#"{"preset":"fig2_top_W"}"#).unwrap();
        assert_eq!(spec.axis, "n");
        assert_eq!(
            spec.values,
            vec![1.0, 2.0, 5.0, 10.0, 20.0, 50.0, 100.0, 200.0, 400.0]
        );
        assert_eq!(spec.base.confounder_mode, ConfounderMode::WOnly);
        assert!(spec.empirical);
    }

    #[test]
    fn preset_rejects_model_overrides() {
        let err = parse_config_str(r#"{"preset":"fig2_top_W","beta":0.5}"#).unwrap_err();
        assert!(matches!(err, CliError::Schema(_)));
    }

    #[test]
    fn model_overrides_reach_the_base_scenario() {
        let spec = parse_config_str(
            r#"{"name":"t","axis":"n","values":[5],"m":10,"beta":0.3,"sigma_a2":0.25,
               "confounder_mode":"B_only","alpha_1w":0.0,"seed":7}"#,
        )
        .unwrap();
        assert_eq!(spec.base.m, 10);
        assert_eq!(spec.base.beta, 0.3);
        assert_eq!(spec.base.sigma_a2, 0.25);
        assert_eq!(spec.base.confounder_mode, ConfounderMode::BOnly);
        assert_eq!(spec.base.alpha_w[0], 0.0);
        assert_eq!(spec.base.seed, 7);
    }

    #[test]
    fn syntax_errors_carry_location() {
        let err = parse_config_str("{\n  \"name\": \"t\",\n}").unwrap_err();
        match err {
            CliError::Parse(msg) => assert!(msg.contains("line")),
            other => panic!("expected parse error, got {other}"),
        }
    }
}
