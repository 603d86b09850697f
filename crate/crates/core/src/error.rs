use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed npy file {path}: {reason}")]
    MalformedNpy { path: PathBuf, reason: String },

    #[error("wrong dtype in {path}: expected {expected}, found {found}")]
    WrongDtype {
        path: PathBuf,
        expected: &'static str,
        found: String,
    },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("label {value} at ({y},{x}) is out of range for {num_classes} classes")]
    LabelOutOfRange {
        y: usize,
        x: usize,
        value: u8,
        num_classes: usize,
    },

    #[error("simplex violation at ({y},{x}): probabilities sum to {sum}")]
    SimplexViolation { y: usize, x: usize, sum: f64 },

    #[error("invalid probability {value} at class {class}, pixel ({y},{x})")]
    InvalidProbability {
        class: usize,
        y: usize,
        x: usize,
        value: f32,
    },

    #[error("invalid scalar value {value} at ({y},{x})")]
    InvalidScalar { y: usize, x: usize, value: f32 },

    #[error("invalid manifest: {0}")]
    Manifest(String),

    #[error("rater count mismatch: image {image} has {found} raters, expected {expected}")]
    RaterCountMismatch {
        image: String,
        expected: usize,
        found: usize,
    },

    #[error("missing file referenced by manifest: {0}")]
    MissingFile(PathBuf),

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("zero variance in {0}")]
    ZeroVariance(&'static str),

    #[error("design matrix is rank deficient (collinear predictors)")]
    RankDeficient,

    #[error("no misclassified voxels in the pooled set; recall is undefined")]
    NoMisclassified,

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("json error in {path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
