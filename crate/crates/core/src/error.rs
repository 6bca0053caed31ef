use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Model or run configuration is malformed.
    #[error("configuration error at `{key}`: {msg}")]
    Config { key: String, msg: String },

    /// A caller violated an operation's precondition.
    #[error("contract violation: {0}")]
    Contract(String),

    /// A covariance matrix failed Cholesky factorization.
    #[error("covariance is not positive definite at t = {t}{context}")]
    SingularCovariance { t: usize, context: String },

    /// A matrix that must be invertible is (numerically) singular.
    #[error("singular matrix: {0}")]
    Singular(String),

    /// Non-finite or otherwise unusable numbers.
    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub fn config(key: impl Into<String>, msg: impl Into<String>) -> Self {
        Error::Config { key: key.into(), msg: msg.into() }
    }

    pub(crate) fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }

    /// True for failures caused by the numbers rather than the inputs' shape.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::SingularCovariance { .. } | Error::Singular(_) | Error::Numerical(_)
        )
    }
}
