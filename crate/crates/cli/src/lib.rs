//! Command-line frontend: dataset generation, training, evaluation,
//! inference, ablation tables, and cascade baselines.
//!
//! Commands live in [`commands`] as plain functions over parsed argument
//! structs so integration tests can drive them in-process; `main` is a thin
//! clap dispatcher. Every command that writes an output directory drops a
//! byte-identical echo of its config file, a resolved (post-override)
//! configuration, and a SHA-256 inventory of its inputs, so any reported
//! number can be traced to exact inputs.

pub mod commands;
pub mod config;
pub mod io;

use std::fmt;

/// Failures split by exit code: usage problems (bad flags, malformed or
/// missing inputs, refusing to overwrite) exit 2, runtime failures exit 1.
#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Runtime(anyhow::Error),
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "{m}"),
            CliError::Runtime(e) => write!(f, "{e:#}"),
        }
    }
}

impl std::error::Error for CliError {}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Runtime(_) => 1,
        }
    }
}

pub fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

impl From<anyhow::Error> for CliError {
    fn from(e: anyhow::Error) -> Self {
        CliError::Runtime(e)
    }
}

macro_rules! runtime_from {
    ($($t:ty),* $(,)?) => {
        $(impl From<$t> for CliError {
            fn from(e: $t) -> Self {
                CliError::Runtime(anyhow::Error::new(e))
            }
        })*
    };
}

runtime_from!(
    std::io::Error,
    serde_json::Error,
    image::ImageError,
    fisr_core::frames::FrameError,
    fisr_core::windowing::WindowError,
    fisr_core::flowwarp::FlowError,
    fisr_core::loss::LossError,
    fisr_core::network::NetworkError,
    fisr_core::synthdata::SynthError,
    fisr_core::trainer::TrainError,
    fisr_core::baseline::BaselineError,
);

pub type CliResult<T> = Result<T, CliError>;
