use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("tensor is not t-spd: {0}")]
    NotTSpd(String),

    #[error(
        "preset weight tensor {0} is rank deficient; build the preset in \
         semidefinite-tolerant mode to use pseudoinverse weights"
    )]
    PresetNotDefinite(&'static str),

    #[error("oracle budget exceeded: {0}")]
    OracleBudget(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("image error: {0}")]
    Image(String),
}
