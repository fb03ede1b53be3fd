use std::fmt;

use thiserror::Error;

/// A rule broken by a network configuration or an input resolution.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Violation {
    /// Four layers combined with stride two produce invalid feature map sizes.
    InvalidLayerStride { layers: usize, stride: usize },
    /// A configuration field is outside the supported value set.
    OutOfRange { field: &'static str, value: String },
    /// Input height is not a multiple of the total downsampling factor.
    HeightNotMultiple { height: usize, multiple: usize },
    /// Input width is not a multiple of the total downsampling factor.
    WidthNotMultiple { width: usize, multiple: usize },
    /// Image does not carry the expected number of input channels.
    InputChannels { expected: usize, found: usize },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::InvalidLayerStride { layers, stride } => write!(
                f,
                "invalid L/S combination: L={layers} with S={stride} yields invalid feature map sizes"
            ),
            Violation::OutOfRange { field, value } => {
                write!(f, "{field} = {value} is not a supported value")
            }
            Violation::HeightNotMultiple { height, multiple } => {
                write!(f, "H={height} is not a multiple of {multiple}")
            }
            Violation::WidthNotMultiple { width, multiple } => {
                write!(f, "W={width} is not a multiple of {multiple}")
            }
            Violation::InputChannels { expected, found } => {
                write!(f, "expected {expected} input channels, found {found}")
            }
        }
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("size error: {0}")]
    Size(String),
    #[error("shape error: {0}")]
    Shape(String),
    #[error("unsupported: {0}")]
    Unsupported(String),
    #[error("invalid argument: {0}")]
    Argument(String),
    #[error("validation error: {0}")]
    Validation(Violation),
    #[error("format error at byte {offset}: {message}")]
    Format { offset: u64, message: String },
    #[error("state error: {0}")]
    State(String),
    #[error("training diverged at epoch {epoch}, step {step}: loss = {loss}")]
    Divergence { epoch: usize, step: usize, loss: f64 },
    #[error("degenerate data: {0}")]
    DegenerateData(String),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn format(offset: u64, message: impl Into<String>) -> Self {
        Error::Format {
            offset,
            message: message.into(),
        }
    }
}

impl From<Violation> for Error {
    fn from(v: Violation) -> Self {
        Error::Validation(v)
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
