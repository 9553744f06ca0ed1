//! Command-line orchestration of the dataset pipeline: configuration,
//! stage runners, run manifests and exit-code mapping.

pub mod config;
pub mod error;
pub mod manifest;
pub mod stages;

pub use config::PipelineConfig;
pub use error::CliError;
pub use stages::Runner;
