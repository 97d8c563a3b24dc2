//! Configuration-driven experiment runner for the `reslab` toolkit.

pub mod config;
pub mod dataset;
pub mod runner;
pub mod trials;

use thiserror::Error;

pub use config::{ExperimentConfig, ExperimentKind};
pub use dataset::{load_dataset, DataError};
pub use runner::{run, RunReport};

#[derive(Debug, Error)]
pub enum LabError {
    #[error("config line {line}: {message}")]
    Config { line: usize, message: String },
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Core(#[from] reslab::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
