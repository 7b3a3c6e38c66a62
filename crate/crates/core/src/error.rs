use thiserror::Error;

#[derive(Debug, Error)]
pub enum PolylabError {
    #[error("domain error: {0}")]
    Domain(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("size limit exceeded: {0}")]
    Size(String),
    #[error("mass error: {0}")]
    Mass(String),
    #[error("norm error: {0}")]
    Norm(String),
    #[error("config error in `{field}`: {message}")]
    Config { field: String, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl PolylabError {
    pub fn config(field: impl Into<String>, message: impl Into<String>) -> Self {
        PolylabError::Config {
            field: field.into(),
            message: message.into(),
        }
    }

    /// Process exit code: 2 for configuration problems, 1 for everything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            PolylabError::Config { .. } => 2,
            _ => 1,
        }
    }
}

pub type Result<T> = std::result::Result<T, PolylabError>;
