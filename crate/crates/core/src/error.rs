use thiserror::Error;

/// Errors surfaced by the numeric core and the layers built on it.
#[derive(Debug, Clone, Error, PartialEq)]
pub enum PgtError {
    #[error("{op}: shape mismatch between {lhs:?} and {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("{op}: invalid shape {shape:?} ({detail})")]
    InvalidShape {
        op: &'static str,
        shape: Vec<usize>,
        detail: String,
    },

    #[error("{op}: domain error ({detail})")]
    Domain { op: &'static str, detail: String },

    #[error("softmax row {row} has no admissible attention targets (all entries masked)")]
    DegenerateSoftmaxRow { row: usize },

    #[error("backward root must be a scalar, got shape {shape:?}")]
    NonScalarRoot { shape: Vec<usize> },

    #[error("unsupported spatial dimension {dim} for {what}")]
    UnsupportedDimension { dim: usize, what: &'static str },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("non-finite gradient in parameter '{param}' at step {step}")]
    NanGradient { param: String, step: usize },

    #[error("training diverged at step {step}: total loss is {value}")]
    Diverged { step: usize, value: f64 },

    #[error("relative L2 undefined: reference field has zero norm")]
    ZeroReferenceNorm,

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("config error: {0}")]
    Config(String),
}

pub type Result<T> = std::result::Result<T, PgtError>;
