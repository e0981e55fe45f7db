//! Artifact-level checks of the experiment runner: CSV shapes, the
//! analytic-only figure presets, and numeric round-tripping.

use confound_bench::experiment::run_experiment;
use confound_bench::presets::FigurePreset;
use confound_core::Method;

struct Row {
    method: String,
    mean_bias: String,
    analytic_bias: f64,
}

fn read_rows(path: &std::path::Path) -> Vec<Row> {
    let text = std::fs::read_to_string(path).unwrap();
    let mut lines = text.lines();
    assert_eq!(
        lines.next().unwrap(),
        "scenario_axis,axis_value,method,mean_bias,mc_se,analytic_bias,agreement,reps,truncations,weak_iv_count"
    );
    lines
        .map(|line| {
            let f: Vec<&str> = line.split(',').collect();
            Row {
                method: f[2].to_string(),
                mean_bias: f[3].to_string(),
                analytic_bias: f[5].parse().unwrap(),
            }
        })
        .collect()
}

#[test]
fn fig2_smoke_run_has_expected_shape() {
    let dir = tempfile::tempdir().unwrap();
    let mut spec = FigurePreset::Fig2TopW.expand().with_output_dir(dir.path());
    spec.reps = 200;
    let outcome = run_experiment(&spec, None).unwrap();
    let rows = read_rows(&outcome.csv_path);
    assert_eq!(rows.len(), 9 * 4);
    assert!(outcome.svg_path.is_some());
    let svg = std::fs::read_to_string(outcome.svg_path.unwrap()).unwrap();
    // One analytic polyline per method; empirical points are circles.
    assert_eq!(svg.matches("<polyline").count(), 4);
    assert!(svg.matches("<circle").count() >= 4 * 9);
    assert!(svg.contains("IV analytic"));
    assert!(svg.contains("LMM empirical"));

    // Printed numbers round-trip: parse then re-print reproduces the text.
    for row in &rows {
        if !row.mean_bias.is_empty() {
            let value: f64 = row.mean_bias.parse().unwrap();
            assert_eq!(value.to_string(), row.mean_bias);
        }
    }
}

#[test]
fn fig3_presets_show_iv_as_least_biased_under_within_confounding() {
    let dir = tempfile::tempdir().unwrap();
    let spec = FigurePreset::Fig3TopWEffects.expand().with_output_dir(dir.path());
    let outcome = run_experiment(&spec, None).unwrap();
    assert!(outcome.analytic_only);
    let rows = read_rows(&outcome.csv_path);
    assert_eq!(rows.len(), 9 * 4);
    assert!(rows.iter().all(|r| r.mean_bias.is_empty()));

    let max_abs = |method: Method| {
        rows.iter()
            .filter(|r| r.method == method.to_string())
            .map(|r| r.analytic_bias.abs())
            .fold(0.0f64, f64::max)
    };
    let iv = max_abs(Method::Iv);
    let fe = max_abs(Method::Fe);
    let lmm = max_abs(Method::Lmm);
    assert!(
        iv < 0.1 * fe && iv < 0.1 * lmm,
        "IV sweep magnitude {iv} should be far below FE {fe} / LMM {lmm}"
    );
}

#[test]
fn fig4_fe_and_lmm_curves_coincide() {
    let dir = tempfile::tempdir().unwrap();
    let spec = FigurePreset::Fig4WbEffects.expand().with_output_dir(dir.path());
    let outcome = run_experiment(&spec, None).unwrap();
    let rows = read_rows(&outcome.csv_path);
    let curve = |method: Method| -> Vec<f64> {
        rows.iter()
            .filter(|r| r.method == method.to_string())
            .map(|r| r.analytic_bias)
            .collect()
    };
    let fe = curve(Method::Fe);
    let lmm = curve(Method::Lmm);
    assert_eq!(fe.len(), 9);
    let max_gap = fe
        .iter()
        .zip(&lmm)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0f64, f64::max);
    assert!(max_gap < 0.02, "FE and LMM curves diverge by {max_gap}");
}
