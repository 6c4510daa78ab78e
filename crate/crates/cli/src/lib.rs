//! Config-driven experiments around the `noisegain` compensators: signal
//! synthesis, offline identification, streaming compensation and THD sweeps,
//! all writing CSV.

pub mod commands;
pub mod config;
pub mod error;
pub mod io;

pub use config::ExperimentConfig;
pub use error::{CliError, Result};
