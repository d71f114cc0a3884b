use std::path::PathBuf;

/// Errors produced anywhere in the laboratory.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid schedule: {0}")]
    InvalidSchedule(String),

    #[error("step index {t} out of range 1..={max}")]
    StepOutOfRange { t: usize, max: usize },

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("non-finite value produced at step {t} ({context})")]
    NonFinite { t: usize, context: &'static str },

    #[error("unknown condition label {0}")]
    UnknownCondition(u32),

    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("divergence at step {t}: residual {residual:.3e} exceeds guard {limit:.3e} (initial {initial:.3e})")]
    Diverged {
        t: usize,
        residual: f64,
        initial: f64,
        limit: f64,
    },

    #[error("singular fixed-point system at step {t}")]
    Singular { t: usize },

    #[error("trajectory mismatch: {0}")]
    TrajectoryMismatch(String),

    #[error("operation requires a Gaussian mixture predictor, got {0}")]
    NotGaussianMixture(&'static str),

    #[error("empty dataset")]
    EmptyDataset,

    #[error("format error in {field}: {message}")]
    Format { field: String, message: String },

    #[error("truncated blob: expected {expected} bytes, found {actual}")]
    Truncated { expected: usize, actual: usize },

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("method {method} failed on all {} trials (first error: {})", errors.len(), errors.first().map_or("none", String::as_str))]
    AllTrialsFailed { method: String, errors: Vec<String> },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Short machine-readable tag for the error variant.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::InvalidSchedule(_) => "invalid_schedule",
            Error::StepOutOfRange { .. } => "step_out_of_range",
            Error::DimensionMismatch { .. } => "dimension_mismatch",
            Error::NonFinite { .. } => "non_finite",
            Error::UnknownCondition(_) => "unknown_condition",
            Error::InvalidModel(_) => "invalid_model",
            Error::InvalidConfig(_) => "invalid_config",
            Error::Diverged { .. } => "diverged",
            Error::Singular { .. } => "singular",
            Error::TrajectoryMismatch(_) => "trajectory_mismatch",
            Error::NotGaussianMixture(_) => "not_gaussian_mixture",
            Error::EmptyDataset => "empty_dataset",
            Error::Format { .. } => "format",
            Error::Truncated { .. } => "truncated",
            Error::Io { .. } => "io",
            Error::AllTrialsFailed { .. } => "all_trials_failed",
            Error::Json(_) => "json",
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Format {
            field: field.into(),
            message: message.into(),
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
