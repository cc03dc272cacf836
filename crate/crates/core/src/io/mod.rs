//! File formats and experiment configuration.

pub mod config;
pub mod pgm;
pub mod tnsr;

pub use config::{ExperimentConfig, ReportFormat};
pub use pgm::Pgm;
pub use tnsr::Tensor;
