//! Command-line pipeline around the latent-space models: configuration,
//! model files, orchestration and SVG/CSV/JSON outputs.

pub mod config;
pub mod error;
pub mod model_io;
pub mod pipeline;
pub mod render;

pub use config::RunConfig;
pub use error::CliError;
pub use pipeline::{run_pipeline, Report};
