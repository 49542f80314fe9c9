//! Batch driver for the EIT toolkit: configuration, pipeline stages and the
//! `eit` command verbs.

pub mod commands;
pub mod config;
pub mod error;
pub mod pipeline;

pub use config::{PipelineConfig, SolverKind};
pub use error::CliError;
