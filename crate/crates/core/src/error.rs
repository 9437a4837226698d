use thiserror::Error;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;

/// Everything that can go wrong across the numeric core and the experiment
/// pipeline. Variants are deliberately specific so callers (and tests) can
/// match on the failure mode rather than parse messages.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("sigma must be strictly positive, got {got}")]
    NonPositiveSigma { got: f64 },

    #[error("radius must be nonnegative, got {got}")]
    NegativeRadius { got: f64 },

    #[error("operation requires a nonempty batch")]
    EmptyBatch,

    #[error("label {label} out of range for {num_classes} classes")]
    LabelOutOfRange { label: usize, num_classes: usize },

    #[error("non-finite value encountered in {context}")]
    NonFinite { context: String },

    #[error("no centroid stored for class {class}")]
    MissingCentroid { class: usize },

    #[error("radius policy mismatch: operation requires the {required} variant")]
    WrongPolicy { required: &'static str },

    #[error("lambda must lie in [0, 1], got {got}")]
    InvalidLambda { got: f64 },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("configuration invalid:\n{}", .0.join("\n"))]
    Config(Vec<String>),

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("unsupported format version {found:?} (supported: {supported})")]
    UnsupportedVersion { found: String, supported: &'static str },

    #[error("integrity check failed: {0}")]
    Integrity(String),

    #[error(
        "training aborted: non-finite loss at epoch {epoch}, batch {batch} \
         (eps min {eps_min}, max {eps_max}; max |grad| {max_grad})"
    )]
    NanAbort {
        epoch: usize,
        batch: usize,
        eps_min: f64,
        eps_max: f64,
        max_grad: f64,
    },

    #[error("stage ordering violated: {0}")]
    StageOrder(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
