use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("range error: {0}")]
    Range(String),
    #[error("construction error: {0}")]
    Construction(String),
    #[error("generation error: {0}")]
    Generation(String),
    #[error("degenerate input: {0}")]
    Degenerate(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("non-finite {term} at step {step}")]
    NonFinite { term: String, step: u64 },
    #[error("malformed {what}: {detail}")]
    Format { what: &'static str, detail: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn format(what: &'static str, detail: impl Into<String>) -> Self {
        Error::Format {
            what,
            detail: detail.into(),
        }
    }

    /// Whether the error stems from user-supplied configuration rather than a
    /// runtime failure. The CLI maps these to exit status 2.
    pub fn is_config(&self) -> bool {
        matches!(self, Error::Config(_) | Error::Shape(_))
    }
}

pub type Result<T> = std::result::Result<T, Error>;
