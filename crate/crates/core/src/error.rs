use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid grid shape {height}x{width}")]
    InvalidShape { height: usize, width: usize },

    #[error("data length {got} does not match expected {expected}")]
    LengthMismatch { expected: usize, got: usize },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("non-finite value at index {0}")]
    NonFinite(usize),

    #[error("label {label} out of range for k={k}")]
    LabelOutOfRange { label: u32, k: usize },

    #[error("empty grid")]
    EmptyGrid,

    /// A correlation residual exceeded the rounding headroom. Transform
    /// precision is insufficient for the grid size.
    #[error("numerical health check failed: residual {residual:.3e} at cell {index}")]
    NumericalHealth { residual: f64, index: usize },

    #[error("spectrum extent mismatch: {0}")]
    ExtentMismatch(String),

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("map has no valid displacement")]
    NoValidCell,

    #[error("fft and direct maps disagree at reference size {size}, k={k}")]
    ChecksumMismatch { size: usize, k: usize },

    #[error("malformed input: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
