use thiserror::Error;

pub type Result<T> = std::result::Result<T, FaeError>;

#[derive(Debug, Error)]
pub enum FaeError {
    #[error("invalid basis configuration: {0}")]
    InvalidBasisConfig(String),
    #[error("regularized normal system is numerically singular (condition {condition:.3e})")]
    SingularSystem { condition: f64 },
    #[error("point {t} lies outside the domain [{lo}, {hi}]")]
    OutOfDomain { t: f64, lo: f64, hi: f64 },
    #[error("samples reference different basis systems")]
    BasisMismatch,
    #[error("invalid sample path for subject {subject_id}: {reason}")]
    InvalidSamplePath { subject_id: i64, reason: String },
    #[error("dataset error: {0}")]
    InvalidDataset(String),
    #[error("grid size {n} is below the minimum {min}")]
    GridTooSmall { n: usize, min: usize },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("non-finite activation in layer {layer}; lower the learning rate")]
    NonFiniteActivation { layer: String },
    #[error("forward cache does not match the current batch")]
    StaleCache,
    #[error("training diverged: loss {loss:.3e} exceeds {limit:.3e}")]
    DivergenceDetected { loss: f64, limit: f64 },
    #[error("no valid partition: {0}")]
    NoValidPartition(String),
    #[error("label vectors differ in length ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("invalid simulation spec: {0}")]
    InvalidSpec(String),
    #[error("could not build a monotone warp within the speed bound after {0} attempts")]
    InvalidWarp(usize),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("parse error: {0}")]
    Parse(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl FaeError {
    /// Errors caused by malformed input data rather than numerics or usage.
    pub fn is_data_error(&self) -> bool {
        matches!(
            self,
            FaeError::InvalidSamplePath { .. }
                | FaeError::InvalidDataset(_)
                | FaeError::OutOfDomain { .. }
                | FaeError::BasisMismatch
                | FaeError::LengthMismatch(..)
                | FaeError::Parse(_)
                | FaeError::Csv(_)
                | FaeError::Json(_)
                | FaeError::Io(_)
        )
    }

    /// Errors raised by numerical failure during fitting.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            FaeError::SingularSystem { .. }
                | FaeError::NonFiniteActivation { .. }
                | FaeError::DivergenceDetected { .. }
                | FaeError::NoValidPartition(_)
                | FaeError::InvalidWarp(_)
        )
    }
}
