use std::path::PathBuf;

/// Errors from the IO/driver layer. Pipeline failures carry the stage name
/// so batch runs can report exactly where an image died.
#[derive(Debug, thiserror::Error)]
pub enum ToolsError {
    #[error("core: {0}")]
    Core(#[from] lapfuse_core::CoreError),

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("image codec error on {path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },

    #[error("dataset: {0}")]
    Dataset(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("config: {0}")]
    Config(String),

    #[error("stage '{stage}' failed for '{id}': {message}")]
    Pipeline {
        stage: &'static str,
        id: String,
        message: String,
    },

    #[error("training aborted: non-finite loss on pair '{pair_id}' at step {step}{}",
            .last_checkpoint.as_ref().map(|p| format!("; last good checkpoint at {}", p.display())).unwrap_or_default())]
    NonFiniteLoss {
        pair_id: String,
        step: u64,
        last_checkpoint: Option<PathBuf>,
    },
}

pub type Result<T> = std::result::Result<T, ToolsError>;

impl ToolsError {
    pub fn io(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> Self {
        let path = path.into();
        move |source| ToolsError::Io { path, source }
    }
}
