use std::path::PathBuf;

use clvae_core::Error as CoreError;

/// Failures surfaced to the command line, each with an exit code.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("{stage}: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: CoreError,
    },
    #[error("{stage}: cannot write {path}: {source}")]
    Output {
        stage: &'static str,
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{0}")]
    ModelFile(String),
    #[error("cannot render a {dim}-D latent space as a scatter plot; only 2-D is supported")]
    UnsupportedRendering { dim: usize },
}

impl CliError {
    /// 2 configuration, 3 data, 4 numeric failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Stage { source, .. } => match source {
                CoreError::Config(_) => 2,
                CoreError::Io { .. } | CoreError::Format { .. } | CoreError::Parse { .. } | CoreError::UnseenCategory { .. } => 3,
                CoreError::NonFiniteLoss { .. } | CoreError::Numeric(_) | CoreError::Contract(_) => 4,
            },
            CliError::Output { .. } | CliError::ModelFile(_) => 3,
            CliError::UnsupportedRendering { .. } => 2,
        }
    }

    pub fn stage(stage: &'static str) -> impl FnOnce(CoreError) -> CliError {
        move |source| CliError::Stage { stage, source }
    }
}
