use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// An argument lies outside the supported domain of an operation.
    #[error("domain error: {what} = {value} ({reason})")]
    Domain {
        what: &'static str,
        value: f64,
        reason: &'static str,
    },

    #[error("precondition violated: {0}")]
    Precondition(String),

    /// The quadrature grid cannot resolve the integrand.
    #[error("grid resolution error: step {step} exceeds the limit {limit} ({reason})")]
    Resolution {
        step: f64,
        limit: f64,
        reason: &'static str,
    },

    #[error("{what} did not converge: {detail}")]
    NonConvergence { what: &'static str, detail: String },

    /// Schema or range problem in a configuration document, tagged with its key path.
    #[error("config error at `{path}`: {message}")]
    Config { path: String, message: String },

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn domain(what: &'static str, value: f64, reason: &'static str) -> Self {
        Error::Domain {
            what,
            value,
            reason,
        }
    }

    pub(crate) fn config(path: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            path: path.into(),
            message: message.into(),
        }
    }
}
