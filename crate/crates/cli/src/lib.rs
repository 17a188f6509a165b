//! Experiment driver: runs seeded DTS-AG experiments, evaluates the regret
//! bounds and verifies the supporting inequalities.
//!
//! Exit codes are a stable contract: 0 success, 1 verification failure,
//! 2 configuration error, 3 numeric failure during a run.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod commands;
pub mod config;

use thiserror::Error;

pub const EXIT_OK: u8 = 0;
pub const EXIT_VERIFICATION: u8 = 1;
pub const EXIT_CONFIG: u8 = 2;
pub const EXIT_NUMERIC: u8 = 3;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("invalid configuration:\n  {}", .0.join("\n  "))]
    Config(Vec<String>),

    #[error("verification failed: {0}")]
    Verification(String),

    #[error("seed {seed}: {source}")]
    Numeric {
        seed: u64,
        #[source]
        source: dynreg_core::Error,
    },

    #[error(transparent)]
    Io(#[from] anyhow::Error),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Verification(_) => EXIT_VERIFICATION,
            CliError::Config(_) | CliError::Io(_) => EXIT_CONFIG,
            CliError::Numeric { .. } => EXIT_NUMERIC,
        }
    }
}
