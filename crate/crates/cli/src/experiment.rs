//! Experiment execution: scenario grids in, CSV tables and SVG charts out.
//! Every run is reproducible byte-for-byte given the same config.

use std::fs;
use std::path::{Path, PathBuf};

use confound_core::bias::{
    bias_for, bias_table, calibrate_lmm_plims, point_plims, BiasCell, LmmPlimConstants,
    Regime, DEFAULT_M_CAL, DEFAULT_REPS_CAL,
};
use confound_core::dgp::{scenario_grid, simulate_dataset, write_dataset_csv, ReplicationSeed};
use confound_core::mc::{run_monte_carlo, MonteCarloReport, RunSettings, CSV_HEADER};
use confound_core::Method;

use crate::config::ExperimentSpec;
use crate::error::Result;
use crate::svg::{emit_svg, ChartStyle, Series, SeriesKind};

/// What a finished experiment left on disk and whether every empirical
/// point agreed with its analytic value.
#[derive(Debug, Clone)]
pub struct ExperimentOutcome {
    pub all_agree: bool,
    pub analytic_only: bool,
    pub csv_path: PathBuf,
    pub svg_path: Option<PathBuf>,
}

/// Writes through a temporary file in the same directory, then renames, so
/// readers never observe a half-written output.
pub fn write_atomic(path: &Path, content: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent)?;
        }
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    fs::write(&tmp, content)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

fn method_color(method: Method) -> usize {
    Method::ALL.iter().position(|&m| m == method).unwrap_or(0)
}

fn chart_style(spec: &ExperimentSpec) -> ChartStyle {
    ChartStyle {
        title: spec.name.clone(),
        x_label: spec.axis.clone(),
        y_label: "bias".into(),
    }
}

fn empirical_artifacts(
    spec: &ExperimentSpec,
    report: &MonteCarloReport,
) -> Result<(String, Option<String>)> {
    let mut csv = Vec::new();
    report.write_csv(&mut csv).map_err(crate::error::CliError::Core)?;
    let csv = String::from_utf8(csv).expect("report CSV is UTF-8");

    let svg = match &spec.svg_path {
        None => None,
        Some(_) => {
            let mut series = Vec::new();
            for &method in &spec.methods {
                let mut analytic = Series {
                    name: format!("{method} analytic"),
                    x: Vec::new(),
                    y: Vec::new(),
                    kind: SeriesKind::Line,
                    color_index: method_color(method),
                };
                let mut empirical = Series {
                    name: format!("{method} empirical"),
                    x: Vec::new(),
                    y: Vec::new(),
                    kind: SeriesKind::Markers,
                    color_index: method_color(method),
                };
                for point in &report.points {
                    if let Some(s) = point.methods.iter().find(|s| s.method == method) {
                        analytic.x.push(point.axis_value);
                        analytic.y.push(s.analytic_bias);
                        if s.mean_bias.is_finite() {
                            empirical.x.push(point.axis_value);
                            empirical.y.push(s.mean_bias);
                        }
                    }
                }
                series.push(analytic);
                if !empirical.x.is_empty() {
                    series.push(empirical);
                }
            }
            Some(emit_svg(&series, &chart_style(spec))?)
        }
    };
    Ok((csv, svg))
}

fn analytic_artifacts(spec: &ExperimentSpec) -> Result<(String, Option<String>)> {
    let grid = scenario_grid(&spec.base, &spec.axis, &spec.values)?;
    let needs_plims = spec.methods.contains(&Method::Lmm);

    let mut csv = String::from(CSV_HEADER);
    csv.push('\n');
    let mut per_method: Vec<(Method, Vec<f64>, Vec<f64>)> = spec
        .methods
        .iter()
        .map(|&m| (m, Vec::new(), Vec::new()))
        .collect();
    for point in &grid.points {
        let plims = if needs_plims {
            point_plims(&point.cfg, DEFAULT_M_CAL, DEFAULT_REPS_CAL)?
        } else {
            LmmPlimConstants::fixed(1.0, 1.0)
        };
        for (method, xs, ys) in per_method.iter_mut() {
            let value = bias_for(
                *method,
                &point.cfg,
                point.cfg.confounder_mode,
                Regime::MInftyFixedN,
                &plims,
            )?;
            csv.push_str(&format!(
                "{},{},{},,,{},,0,0,0\n",
                grid.axis, point.value, method, value
            ));
            xs.push(point.value);
            ys.push(value);
        }
    }

    let svg = match &spec.svg_path {
        None => None,
        Some(_) => {
            let series: Vec<Series> = per_method
                .iter()
                .map(|(method, xs, ys)| Series {
                    name: format!("{method} analytic"),
                    x: xs.clone(),
                    y: ys.clone(),
                    kind: SeriesKind::Line,
                    color_index: method_color(*method),
                })
                .collect();
            Some(emit_svg(&series, &chart_style(spec))?)
        }
    };
    Ok((csv, svg))
}

/// Runs the experiment and writes its artifacts. Empirical runs replicate
/// each grid point and compare against the formulas; analytic-only runs
/// just evaluate the formulas along the sweep.
pub fn run_experiment(spec: &ExperimentSpec, threads: Option<usize>) -> Result<ExperimentOutcome> {
    let (all_agree, csv, svg) = if spec.empirical {
        let grid = scenario_grid(&spec.base, &spec.axis, &spec.values)?;
        let settings = RunSettings {
            reps: spec.reps,
            z: spec.agreement_z,
            methods: spec.methods.clone(),
            threads,
            ..RunSettings::default()
        };
        let report = run_monte_carlo(&grid, &settings)?;
        let (csv, svg) = empirical_artifacts(spec, &report)?;
        (report.all_agree(), csv, svg)
    } else {
        let (csv, svg) = analytic_artifacts(spec)?;
        (true, csv, svg)
    };

    write_atomic(&spec.csv_path, &csv)?;
    if let (Some(path), Some(svg)) = (&spec.svg_path, &svg) {
        write_atomic(path, svg)?;
    }
    Ok(ExperimentOutcome {
        all_agree,
        analytic_only: !spec.empirical,
        csv_path: spec.csv_path.clone(),
        svg_path: svg.as_ref().and(spec.svg_path.clone()),
    })
}

/// The full analytic table for a config's base scenario, together with the
/// calibrated plim constants backing its LMM cells.
pub fn bias_table_for_spec(
    spec: &ExperimentSpec,
) -> Result<(Vec<BiasCell>, LmmPlimConstants)> {
    let plims = calibrate_lmm_plims(&spec.base, DEFAULT_M_CAL, DEFAULT_REPS_CAL)?;
    let cells = bias_table(&spec.base, &plims)?;
    Ok((cells, plims))
}

/// Simulates replication 0 of the base scenario and dumps it as CSV.
pub fn simulate_dump(spec: &ExperimentSpec, path: &Path, include_latents: bool) -> Result<()> {
    let data = simulate_dataset(&spec.base, ReplicationSeed::new(spec.base.seed, 0))?;
    let mut out = Vec::new();
    write_dataset_csv(&data, include_latents, &mut out).map_err(crate::error::CliError::Core)?;
    write_atomic(path, &String::from_utf8(out).expect("dataset CSV is UTF-8"))
}
