use thiserror::Error;

#[derive(Debug, Error)]
pub enum MvopError {
    /// An argument lies outside the domain of the operation.
    #[error("domain error: {0}")]
    Domain(String),
    /// A dataset, configuration or parameter set failed validation.
    #[error("validation error: {0}")]
    Validation(String),
    /// Linear algebra or floating point failure.
    #[error("numerical error: {0}")]
    Numerical(String),
    /// A statistical estimate could not be formed from the data.
    #[error("estimation error: {0}")]
    Estimation(String),
    #[error("convergence error: {message}")]
    Convergence { message: String, trace: Vec<f64> },
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl MvopError {
    pub fn domain(msg: impl Into<String>) -> Self {
        MvopError::Domain(msg.into())
    }

    pub fn validation(msg: impl Into<String>) -> Self {
        MvopError::Validation(msg.into())
    }

    pub fn numerical(msg: impl Into<String>) -> Self {
        MvopError::Numerical(msg.into())
    }

    pub fn estimation(msg: impl Into<String>) -> Self {
        MvopError::Estimation(msg.into())
    }
}

pub type Result<T> = std::result::Result<T, MvopError>;
