use thiserror::Error;

/// Errors produced by the co-simulator.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// A scenario or type invariant does not hold. `path` names the offending key.
    #[error("{path}: {message}")]
    Validation { path: String, message: String },

    #[error("converter {converter}: {message}")]
    Constraint { converter: usize, message: String },

    #[error("converter {converter} is in CSC mode and cannot signal")]
    InvalidMode { converter: usize },

    #[error("steady-state solver did not converge after {iterations} iterations (residual {residual:.3e})")]
    NoSolution { iterations: usize, residual: f64 },

    #[error("voltage collapse at bus {bus}: {voltage:.4} V is below the collapse floor")]
    VoltageCollapse { bus: usize, voltage: f64 },

    #[error("voltage swing must be positive, got {0}")]
    InvalidSwing(f64),

    #[error("CRC mismatch: expected {expected:#04x}, received {received:#04x}")]
    CrcFailure { expected: u8, received: u8 },

    #[error("{what} exceeds the supported limit of {limit}")]
    SizeLimit { what: String, limit: usize },

    #[error("not implemented: {0}")]
    Unimplemented(String),

    #[error("protocol failure: {0}")]
    ProtocolFailure(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error("I/O error: {0}")]
    Io(String),
}

impl Error {
    pub(crate) fn validation(path: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Validation {
            path: path.into(),
            message: message.into(),
        }
    }

    /// Short machine-readable category, used by the CLI error line.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::InvalidParameter(_) => "invalid_parameter",
            Error::InvalidArgument(_) => "invalid_argument",
            Error::Validation { .. } => "validation",
            Error::Constraint { .. } => "constraint",
            Error::InvalidMode { .. } => "invalid_mode",
            Error::NoSolution { .. } => "no_solution",
            Error::VoltageCollapse { .. } => "voltage_collapse",
            Error::InvalidSwing(_) => "invalid_swing",
            Error::CrcFailure { .. } => "crc_failure",
            Error::SizeLimit { .. } => "size_limit",
            Error::Unimplemented(_) => "unimplemented",
            Error::ProtocolFailure(_) => "protocol_failure",
            Error::Parse(_) => "parse",
            Error::Io(_) => "io",
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
