use alloc::string::String;
use core::fmt;

/// Errors raised by the pure numeric layer.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum CoreError {
    /// An operation required a specific channel count.
    ChannelCount { expected: usize, got: usize },
    /// Two operands must share dimensions.
    ShapeMismatch {
        expected: (usize, usize),
        got: (usize, usize),
    },
    /// A dimension must be divisible by `multiple` (callers pad first).
    NotDivisible { dim: usize, multiple: usize },
    /// Input smaller than the minimum an operator supports.
    TooSmall { min: usize, got: usize },
    /// A pyramid's internal level shapes are inconsistent.
    InvalidPyramid(String),
    /// A configuration value is out of its legal range.
    InvalidConfig(String),
    /// Non-finite values appeared at the named pipeline stage.
    NonFinite { stage: &'static str },
}

impl fmt::Display for CoreError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CoreError::ChannelCount { expected, got } => {
                write!(f, "expected {expected}-channel image, got {got} channels")
            }
            CoreError::ShapeMismatch { expected, got } => write!(
                f,
                "shape mismatch: expected {}x{}, got {}x{}",
                expected.0, expected.1, got.0, got.1
            ),
            CoreError::NotDivisible { dim, multiple } => {
                write!(f, "dimension {dim} is not divisible by {multiple}")
            }
            CoreError::TooSmall { min, got } => {
                write!(f, "input too small: need at least {min}, got {got}")
            }
            CoreError::InvalidPyramid(msg) => write!(f, "invalid pyramid: {msg}"),
            CoreError::InvalidConfig(msg) => write!(f, "invalid config: {msg}"),
            CoreError::NonFinite { stage } => {
                write!(f, "non-finite values produced at stage '{stage}'")
            }
        }
    }
}

impl core::error::Error for CoreError {}
