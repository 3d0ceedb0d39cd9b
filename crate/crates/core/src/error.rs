use thiserror::Error;

/// Error type shared by every module in the crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape error: {0}")]
    Shape(String),
    #[error("input error: {0}")]
    Input(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("state error: {0}")]
    State(String),
    #[error("numeric error: {0}")]
    Numeric(String),
    #[error("ingestion error: missing modality `{modality}` for lesion `{lesion}`")]
    MissingModality { modality: String, lesion: String },
    #[error("format error: {0}")]
    Format(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Exit code the CLI maps this error to: 1 for bad input or
    /// configuration, 2 for numeric/state/internal failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Shape(_)
            | Error::Input(_)
            | Error::Config(_)
            | Error::MissingModality { .. }
            | Error::Format(_) => 1,
            Error::State(_) | Error::Numeric(_) | Error::Io(_) | Error::Json(_) => 2,
        }
    }
}
