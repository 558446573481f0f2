//! Command-line front end: per-image runs, evaluation, multi-variant
//! benchmarks and synthetic data generation.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod args;
pub mod commands;
pub mod config;
pub mod report;

pub use commands::Status;
pub use config::{ConfigError, RunConfig, RunVariant};

/// Exit status for a finished command: 0 success, 1 runtime or partial
/// failure, 2 configuration error.
pub fn exit_code(result: &anyhow::Result<Status>) -> i32 {
    match result {
        Ok(Status::Success) => 0,
        Ok(Status::Partial) => 1,
        Err(e) if e.downcast_ref::<ConfigError>().is_some() => 2,
        Err(_) => 1,
    }
}
