use thiserror::Error;

/// Errors surfaced by construction, evaluation and simulation.
#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration: {0}")]
    Config(String),

    #[error("domain: {0}")]
    Domain(String),

    #[error("invalid robustness function: {0}")]
    InvalidRobustness(String),

    #[error("conjugate unbounded within search range: {0}")]
    UnboundedConjugate(String),

    #[error("inversion failed: {0}")]
    Inversion(String),

    /// The safety constraint admits no input at the queried state.
    #[error("safety constraint infeasible at state: {0}")]
    InfeasibleAtState(String),

    #[error("numeric blowup: {0}")]
    NumericBlowup(String),

    #[error("i/o on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
