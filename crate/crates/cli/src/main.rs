use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use confound_bench::config::parse_config;
use confound_bench::error::CliError;
use confound_bench::experiment::{bias_table_for_spec, run_experiment, simulate_dump};
use confound_bench::presets::FigurePreset;
use confound_core::bias::write_bias_table_csv;

/// Simulation bench for exposure-effect estimators on clustered data with
/// unmeasured within- and between-cluster confounding.
#[derive(Debug, Parser)]
#[command(name = "confound-bench", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run an experiment described by a JSON config file.
    Run {
        config: PathBuf,
    },
    /// Run one of the predefined figure experiments.
    Preset {
        /// fig2_top_W, fig2_mid_B, fig2_bottom_WB, fig3_top_W_effects,
        /// fig3_bottom_B_effects or fig4_WB_effects.
        name: String,
        /// Replications per grid point.
        #[arg(long)]
        reps: Option<u64>,
        /// Directory receiving the CSV/SVG outputs.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Add Monte Carlo overlays to the analytic-only presets.
        #[arg(long)]
        empirical: bool,
    },
    /// Print the 24-cell analytic bias table for a config's base scenario.
    Table {
        config: PathBuf,
    },
    /// Simulate one dataset from a config's base scenario and dump it.
    Simulate {
        config: PathBuf,
        /// Output CSV path.
        #[arg(long)]
        dump: PathBuf,
        /// Include the retained latent confounder draws.
        #[arg(long)]
        latents: bool,
    },
}

fn worker_threads() -> Option<usize> {
    match std::env::var("CONFOUND_BENCH_THREADS") {
        Err(_) => None,
        Ok(raw) => match raw.parse::<usize>() {
            Ok(t) if t > 0 => Some(t),
            _ => {
                eprintln!("warning: ignoring invalid CONFOUND_BENCH_THREADS={raw}");
                None
            }
        },
    }
}

fn execute(command: Command) -> Result<u8, CliError> {
    let threads = worker_threads();
    match command {
        Command::Run { config } => {
            let spec = parse_config(&config)?;
            finish_experiment(run_experiment(&spec, threads)?)
        }
        Command::Preset {
            name,
            reps,
            out,
            empirical,
        } => {
            let preset =
                FigurePreset::parse(&name).ok_or_else(|| CliError::UnknownPreset(name.clone()))?;
            let mut spec = preset.expand();
            if let Some(r) = reps {
                if r < 2 {
                    return Err(CliError::Schema(vec![format!(
                        "--reps: must be at least 2, got {r}"
                    )]));
                }
                spec.reps = r as usize;
            }
            if empirical {
                spec.empirical = true;
            }
            if let Some(dir) = out {
                spec = spec.with_output_dir(&dir);
            }
            finish_experiment(run_experiment(&spec, threads)?)
        }
        Command::Table { config } => {
            let spec = parse_config(&config)?;
            let (cells, plims) = bias_table_for_spec(&spec)?;
            let meta = &plims.calibration_meta;
            println!(
                "# calibration: m_cal={} reps_cal={} seed={} sigma_de2={} sigma_chie2={}",
                meta.m_cal, meta.reps_cal, meta.seed, plims.sigma_de2, plims.sigma_chie2
            );
            let mut csv = Vec::new();
            write_bias_table_csv(&cells, &mut csv)?;
            print!("{}", String::from_utf8(csv).expect("table CSV is UTF-8"));
            Ok(0)
        }
        Command::Simulate {
            config,
            dump,
            latents,
        } => {
            let spec = parse_config(&config)?;
            simulate_dump(&spec, &dump, latents)?;
            println!("dataset written to {}", dump.display());
            Ok(0)
        }
    }
}

fn finish_experiment(outcome: confound_bench::ExperimentOutcome) -> Result<u8, CliError> {
    println!("csv: {}", outcome.csv_path.display());
    if let Some(svg) = &outcome.svg_path {
        println!("svg: {}", svg.display());
    }
    if outcome.analytic_only {
        println!("analytic-only run");
        Ok(0)
    } else if outcome.all_agree {
        println!("agreement: all points within tolerance");
        Ok(0)
    } else {
        println!("agreement: FAILED at one or more points");
        Ok(2)
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match execute(cli.command) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
