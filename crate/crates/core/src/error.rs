use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MfError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("invalid density: {0}")]
    InvalidDensity(String),
    #[error("invalid policy: {0}")]
    InvalidPolicy(String),
    #[error("invalid model: {0}")]
    InvalidModel(String),
    #[error("index out of range: {0}")]
    Index(String),
    #[error("operation not supported for transition family `{0}`")]
    UnsupportedFamily(&'static str),
    #[error("numerical consistency violated: {0}")]
    Numerical(String),
    #[error("invalid parameter: {0}")]
    Parameter(String),
    #[error("class generation failed: {0}")]
    Generation(String),
    #[error("instance too large: {0}")]
    TooLarge(String),
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("serialization: {0}")]
    Serde(String),
}

pub type Result<T> = std::result::Result<T, MfError>;
