//! CLI-side error type; configuration problems map to exit code 1, failed
//! empirical-vs-analytic agreement to exit code 2.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    /// The config file is not valid JSON.
    #[error("config parse error: {0}")]
    Parse(String),

    /// The config is valid JSON but violates the schema; every violation is
    /// listed, not just the first.
    #[error("config schema errors:\n  {}", .0.join("\n  "))]
    Schema(Vec<String>),

    #[error("unknown preset `{0}`")]
    UnknownPreset(String),

    /// A chart was requested with no data series.
    #[error("no data series to plot")]
    EmptySeries,

    #[error("non-finite value in series `{0}`")]
    NonFiniteSeries(String),

    #[error("series `{0}` has mismatched x/y lengths")]
    SeriesLengthMismatch(String),

    #[error(transparent)]
    Core(#[from] confound_core::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, CliError>;
