//! Library half of the `confound-bench` command-line tool. The binary is a
//! thin shell: everything it can do — parsing experiment configs, expanding
//! figure presets, running experiments, emitting CSV and SVG — lives here
//! and is callable directly.

pub mod config;
pub mod error;
pub mod experiment;
pub mod presets;
pub mod svg;

pub use config::{parse_config, parse_config_str, ExperimentSpec};
pub use error::CliError;
pub use experiment::{run_experiment, ExperimentOutcome};
pub use presets::FigurePreset;
