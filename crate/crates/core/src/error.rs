use thiserror::Error;

/// Library-wide error type.
///
/// Each variant maps onto one of the stable process exit codes used by the
/// command-line front end (see [`Error::exit_code`]).
#[derive(Debug, Error)]
pub enum Error {
    #[error("operator is not Hermitian (relative deviation {deviation:.3e})")]
    NotHermitian { deviation: f64 },

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid state: {0}")]
    InvalidState(String),

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("trace drift {drift:.3e} exceeds tolerance; reduce the time step")]
    TraceDrift { drift: f64 },

    #[error("invalid pulse schedule: {0}")]
    Schedule(String),

    #[error("no avoided crossing found: {0}")]
    NoAvoidedCrossing(String),

    #[error("no oscillation detected in trace")]
    NoOscillation,

    #[error("insufficient samples: {0}")]
    InsufficientSamples(String),

    #[error("fit did not converge after {iterations} iterations (gradient norm {gradient_norm:.3e})")]
    NonConvergence { iterations: usize, gradient_norm: f64 },

    #[error("no bracket found: {0}")]
    NoBracket(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("unsupported format `{format}` for {payload} payload")]
    UnsupportedFormat { format: String, payload: &'static str },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("serialization error: {0}")]
    Serialization(String),
}

impl Error {
    /// Process exit code: 2 config/usage, 3 numeric failure, 4 I/O.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_)
            | Error::InvalidParameter { .. }
            | Error::Schedule(_)
            | Error::UnsupportedFormat { .. } => 2,
            Error::Io { .. } | Error::Serialization(_) => 4,
            _ => 3,
        }
    }

    /// Short machine-readable kind tag.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::NotHermitian { .. } => "not_hermitian",
            Error::Dimension(_) => "dimension",
            Error::InvalidState(_) => "invalid_state",
            Error::InvalidParameter { .. } => "invalid_parameter",
            Error::TraceDrift { .. } => "trace_drift",
            Error::Schedule(_) => "schedule",
            Error::NoAvoidedCrossing(_) => "no_avoided_crossing",
            Error::NoOscillation => "no_oscillation",
            Error::InsufficientSamples(_) => "insufficient_samples",
            Error::NonConvergence { .. } => "non_convergence",
            Error::NoBracket(_) => "no_bracket",
            Error::Config(_) => "config",
            Error::UnsupportedFormat { .. } => "unsupported_format",
            Error::Io { .. } => "io",
            Error::Serialization(_) => "serialization",
        }
    }

    pub(crate) fn param(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
