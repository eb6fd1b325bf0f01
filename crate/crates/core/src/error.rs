use std::path::PathBuf;

use sgo_diff::DiffError;

#[derive(Debug, thiserror::Error)]
pub enum CoreError {
    #[error("invalid configuration: {field}: {reason}")]
    Config { field: String, reason: String },
    #[error("shape mismatch in {what}: expected {expected:?}, got {got:?}")]
    Shape {
        what: &'static str,
        expected: Vec<usize>,
        got: Vec<usize>,
    },
    #[error("relative step {t} outside horizon 1..={horizon}")]
    Horizon { t: i32, horizon: usize },
    #[error("non-finite value in block {block}, module {module}: {source}")]
    BlockNonFinite {
        block: usize,
        module: &'static str,
        #[source]
        source: DiffError,
    },
    #[error("non-finite parameter for gaussian {index}")]
    NonFiniteGaussian { index: usize },
    #[error("{what} exceeds cap: {n} > {cap}")]
    CapExceeded { what: &'static str, n: usize, cap: usize },
    #[error("training diverged at step {step}: loss {loss}")]
    Diverged { step: usize, loss: f64 },
    #[error("dataset format: {0}")]
    Format(String),
    #[error("missing {0}")]
    Missing(String),
    #[error("no valid pixels for {0}")]
    NoValidPixels(&'static str),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Diff(#[from] DiffError),
}

pub type Result<T> = std::result::Result<T, CoreError>;

pub(crate) fn io_err(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> CoreError {
    let path = path.into();
    move |source| CoreError::Io { path, source }
}

pub(crate) fn config_err(field: &str, reason: impl Into<String>) -> CoreError {
    CoreError::Config {
        field: field.to_string(),
        reason: reason.into(),
    }
}
