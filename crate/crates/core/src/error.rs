use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("contract violation: {0}")]
    Contract(String),

    /// A factorization or eigendecomposition could not be completed.
    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("fit failed: {0}")]
    Fit(String),

    #[error("data error: {0}")]
    Data(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn dim(msg: impl Into<String>) -> Self {
        Error::Dimension(msg.into())
    }

    pub(crate) fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }

    /// Same kind and message; io and json sources are flattened to text.
    pub fn duplicate(&self) -> Self {
        match self {
            Error::Dimension(m) => Error::Dimension(m.clone()),
            Error::Contract(m) => Error::Contract(m.clone()),
            Error::Numerical(m) => Error::Numerical(m.clone()),
            Error::Fit(m) => Error::Fit(m.clone()),
            Error::Data(m) => Error::Data(m.clone()),
            Error::Io(e) => Error::Io(std::io::Error::new(e.kind(), e.to_string())),
            Error::Json(e) => Error::Data(e.to_string()),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
