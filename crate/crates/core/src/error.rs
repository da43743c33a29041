use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// A parameter or dimension is outside its documented domain.
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    /// A matrix that must be symmetric positive definite is not.
    #[error("matrix `{0}` is not symmetric positive definite")]
    NotPositiveDefinite(&'static str),

    #[error("matrix `{name}` is ill-conditioned (condition estimate {estimate:.3e}); consider regularization")]
    IllConditioned { name: &'static str, estimate: f64 },

    #[error("rank deficiency: {0}")]
    RankDeficient(String),

    #[error("numerical check failed: {0}")]
    Numerical(String),

    /// The analytic model is outside its region of validity.
    #[error("model invalid: {0}")]
    ModelInvalid(String),

    #[error("no closed-form statistics available: {0}")]
    NoClosedForm(String),

    #[error("every Monte Carlo run diverged ({0} runs)")]
    AllRunsDiverged(usize),

    #[error("config error: {0}")]
    Config(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }
}
