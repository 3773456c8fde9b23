//! Experiment harness for wireless networked control scheduling: config
//! parsing, stability checks, cost validation, training, value iteration and
//! policy evaluation.

pub mod commands;
pub mod config;
pub mod eval;

pub use config::{load_config, parse_config, ConfigError, ExperimentConfig};
pub use eval::{evaluate, EvaluationReport, PolicySpec};

/// Process exit codes.
pub mod exit {
    pub const OK: u8 = 0;
    pub const FAILURE: u8 = 1;
    pub const NOT_STABILIZABLE: u8 = 2;
    pub const VALIDATION_FAILED: u8 = 3;
    pub const CONFIG_ERROR: u8 = 4;
}

/// Exit code for an error: configuration problems and model/config
/// mismatches are config errors, the rest are generic failures.
pub fn exit_code_for(err: &anyhow::Error) -> u8 {
    if err.downcast_ref::<ConfigError>().is_some() || err.downcast_ref::<eval::Mismatch>().is_some() {
        exit::CONFIG_ERROR
    } else {
        exit::FAILURE
    }
}
