use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Every failure the pipeline can report. The FFI layer maps each variant to
/// a stable integer code, so variants are only ever appended.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid phantom spec: {0}")]
    InvalidSpec(String),

    #[error("file not found: {}", .0.display())]
    FileNotFound(PathBuf),

    #[error("bad container format: {0}")]
    BadFormat(String),

    #[error("header declares {expected} values but payload holds {actual}")]
    PayloadMismatch { expected: usize, actual: usize },

    #[error("non-finite value at flat index {index}")]
    NonFinite { index: usize },

    #[error("dimension error: {0}")]
    Dimension(String),

    #[error("no admissible surface row: {0}")]
    Infeasible(String),

    #[error("instance too large for exhaustive search ({paths} candidate paths)")]
    TooLarge { paths: f64 },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("degenerate batch: {0}")]
    DegenerateBatch(String),

    #[error("kappa undefined: expected agreement is 1")]
    UndefinedKappa,

    #[error("checkpoint mismatch: {0}")]
    CheckpointMismatch(String),

    #[error("{stage}: {source}")]
    Stage {
        stage: String,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error("png: {0}")]
    Png(String),
}

impl Error {
    pub fn in_stage(self, stage: impl Into<String>) -> Self {
        Error::Stage {
            stage: stage.into(),
            source: Box::new(self),
        }
    }

    /// Innermost error, looking through stage context.
    pub fn root(&self) -> &Error {
        match self {
            Error::Stage { source, .. } => source.root(),
            other => other,
        }
    }
}

pub(crate) trait StageExt<T> {
    fn stage(self, stage: &str) -> Result<T>;
}

impl<T> StageExt<T> for Result<T> {
    fn stage(self, stage: &str) -> Result<T> {
        self.map_err(|e| e.in_stage(stage))
    }
}
