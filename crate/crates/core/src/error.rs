use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, MdaError>;

#[derive(Debug, Error)]
pub enum MdaError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv error: {0}")]
    Csv(String),

    #[error("row {row}, column {column}: {message}")]
    Cell {
        row: usize,
        column: String,
        message: String,
    },

    #[error("empty dataset")]
    EmptyDataset,

    #[error("invalid dataset: {0}")]
    InvalidDataset(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("need at least {required} {what}, found {found}")]
    TooFew {
        what: &'static str,
        required: usize,
        found: usize,
    },

    #[error("gram matrix is already centered")]
    AlreadyCentered,

    #[error("denominator matrix is not positive definite (min diagonal pivot {min_pivot:e})")]
    Factorization { min_pivot: f64 },

    #[error("no positive eigenvalue: no discriminative direction")]
    NoPositiveEigenvalue,

    #[error("zero denominator in trace ratio")]
    ZeroDenominator,

    #[error("dataset is unlabeled")]
    Unlabeled,

    #[error("model file: {0}")]
    ModelFormat(String),

    #[error("{stage}: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<MdaError>,
    },
}

impl MdaError {
    pub(crate) fn at(stage: &'static str) -> impl FnOnce(MdaError) -> MdaError {
        move |source| MdaError::Stage {
            stage,
            source: Box::new(source),
        }
    }

    /// Innermost error, skipping stage labels.
    pub fn root(&self) -> &MdaError {
        match self {
            MdaError::Stage { source, .. } => source.root(),
            other => other,
        }
    }
}
