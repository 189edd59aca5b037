use thiserror::Error;

/// Errors raised by the toolkit. `name()` gives a stable identifier for
/// diagnostics.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("bin {bin} has zero mass; truncate or smooth the histogram first")]
    ZeroMass { bin: usize },
    #[error("histogram is empty")]
    Empty,
    #[error("value out of range: {0}")]
    OutOfRange(String),
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("input contains no usable records")]
    EmptyInput,
    #[error("i/o error: {0}")]
    Io(String),
    #[error("invalid parameter: {0}")]
    InvalidParam(String),
    #[error("sampled-flow probability d_{j} = {value:e} underflows; use a larger sampling rate or a smaller W")]
    Underflow { j: usize, value: f64 },
    #[error("result is not representable in double precision: {0}")]
    NonFinite(String),
    #[error("unsupported: {0}")]
    Unsupported(String),
    #[error("method {0} has no estimator of this kind")]
    UnsupportedMethod(String),
    #[error("infeasible: {0}")]
    Infeasible(String),
    #[error("no flow survived sampling")]
    AllEvaporated,
    #[error("resource cap saturated at 1: {0}")]
    CapSaturated(String),
    #[error("hypothesis not met: {0}")]
    HypothesisUnmet(String),
}

impl Error {
    pub fn name(&self) -> &'static str {
        match self {
            Error::ZeroMass { .. } => "ZeroMass",
            Error::Empty => "Empty",
            Error::OutOfRange(_) => "OutOfRange",
            Error::Parse { .. } => "ParseError",
            Error::EmptyInput => "EmptyInput",
            Error::Io(_) => "IoError",
            Error::InvalidParam(_) => "InvalidParam",
            Error::Underflow { .. } => "Underflow",
            Error::NonFinite(_) => "NonFinite",
            Error::Unsupported(_) => "Unsupported",
            Error::UnsupportedMethod(_) => "UnsupportedMethod",
            Error::Infeasible(_) => "Infeasible",
            Error::AllEvaporated => "AllEvaporated",
            Error::CapSaturated(_) => "CapSaturated",
            Error::HypothesisUnmet(_) => "HypothesisUnmet",
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
