use thiserror::Error;

/// Errors raised by the ensemble-testing library.
#[derive(Debug, Error)]
pub enum Error {
    /// An argument lies outside the mathematical domain of the operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// A configuration or specification is invalid.
    #[error("config error: {0}")]
    Config(String),

    /// The data are degenerate or malformed.
    #[error("data error: {0}")]
    Data(String),

    /// A weight direction has (numerically) zero variance under the model.
    #[error("degenerate direction: w'Σw = {0:e}")]
    DegenerateDirection(f64),

    /// A sampled index subset has an ill-conditioned correlation submatrix.
    #[error("degenerate subset: condition number {0:e}")]
    DegenerateSubset(f64),

    /// A numerical routine failed to converge.
    #[error("numerical error in {routine}: {diagnostics}")]
    Numerical {
        routine: &'static str,
        diagnostics: String,
    },

    /// A text input could not be parsed.
    #[error("{source_name}:{line}:{column}: {message}")]
    Parse {
        source_name: String,
        line: usize,
        column: usize,
        message: String,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn data(msg: impl Into<String>) -> Self {
        Error::Data(msg.into())
    }

    pub(crate) fn numerical(routine: &'static str, diagnostics: impl Into<String>) -> Self {
        Error::Numerical {
            routine,
            diagnostics: diagnostics.into(),
        }
    }

    /// True for errors caused by invalid configuration or arguments rather than
    /// by the data.
    pub fn is_config(&self) -> bool {
        matches!(self, Error::Domain(_) | Error::Config(_))
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
