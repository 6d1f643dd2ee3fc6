//! Command-line front end for the decentralized training simulator.
//!
//! Four subcommands: `run` trains under each configured aggregation rule and
//! writes per-round metrics plus a cross-seed summary, `budget` tabulates
//! privacy budgets per round, `attack` reconstructs a victim's batch from an
//! intercepted tracker message under each rule, and `sweep` scans noise
//! scales. All artifacts embed the effective config so they can seed an
//! identical re-run.

// Validation checks write `!(x > 0.0)` so NaN fails them too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod artifacts;
pub mod commands;
pub mod config;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("serialization failed: {0}")]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Topology(#[from] dfl_core::TopologyError),
    #[error(transparent)]
    Data(#[from] dfl_core::DataError),
    #[error(transparent)]
    Model(#[from] dfl_core::ModelError),
    #[error(transparent)]
    Protocol(#[from] dfl_core::ProtocolError),
    #[error(transparent)]
    Privacy(#[from] dfl_core::PrivacyError),
    #[error(transparent)]
    Attack(#[from] dfl_core::AttackError),
}

impl CliError {
    /// 1 for anything fixable in the config or input data, 3 for I/O.
    /// Exit code 2 is reserved for runs that diverge; that is reported
    /// through [`commands::RunOutcome`], not as an error.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Io(_) => 3,
            _ => 1,
        }
    }
}
