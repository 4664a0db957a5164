use thiserror::Error;

/// Errors surfaced by the CLI and the HTTP layer. The split decides the exit
/// code and the HTTP status.
#[derive(Debug, Error)]
pub enum ServiceError {
    #[error("{0}")]
    Validation(String),
    #[error("{0}")]
    NotFound(String),
    #[error("{0}")]
    Pipeline(String),
}

impl ServiceError {
    pub fn validation(msg: impl Into<String>) -> Self {
        ServiceError::Validation(msg.into())
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            ServiceError::Validation(_) | ServiceError::NotFound(_) => 2,
            ServiceError::Pipeline(_) => 3,
        }
    }
}

impl From<omnitext_core::Error> for ServiceError {
    fn from(e: omnitext_core::Error) -> Self {
        if e.is_validation() {
            ServiceError::Validation(e.to_string())
        } else {
            ServiceError::Pipeline(e.to_string())
        }
    }
}

impl From<std::io::Error> for ServiceError {
    fn from(e: std::io::Error) -> Self {
        ServiceError::Pipeline(e.to_string())
    }
}

impl From<serde_json::Error> for ServiceError {
    fn from(e: serde_json::Error) -> Self {
        ServiceError::Pipeline(e.to_string())
    }
}

pub type ServiceResult<T> = Result<T, ServiceError>;
