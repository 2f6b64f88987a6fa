use thiserror::Error;

/// Errors raised while building models, programs and schedules.
#[derive(Debug, Error)]
pub enum Error {
    /// The electrical model is malformed or numerically unusable.
    #[error("model error: {0}")]
    Model(String),

    /// An input violates a documented precondition.
    #[error("validation error: {0}")]
    Validation(String),

    /// A serialized document could not be read back.
    #[error("parse error at {locus}: {message}")]
    Parse { locus: String, message: String },

    /// The fixed-point power flow did not settle.
    #[error("power flow did not converge after {iterations} iterations (last residual {residual:.3e} pu)")]
    NonConvergence { iterations: usize, residual: f64 },

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn parse(locus: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Parse {
            locus: locus.into(),
            message: message.into(),
        }
    }
}
