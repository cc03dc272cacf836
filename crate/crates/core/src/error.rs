use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Input violates an operation's domain (shapes, ranges, class indices).
    #[error("domain error: {0}")]
    Domain(String),

    /// Malformed file contents. `field` names the offending header field.
    #[error("format error: {field}: {reason}")]
    Format { field: &'static str, reason: String },

    /// Well-formed input in a variant this crate does not read (P2, 16-bit PGM, ...).
    #[error("unsupported format: {0}")]
    Unsupported(String),

    #[error("scene generation failed: {0}")]
    Generation(String),

    #[error("non-finite loss at iteration {iter}: {value}")]
    NonFinite { iter: usize, value: f64 },

    #[error("invalid config key `{key}`: {reason}")]
    Config { key: String, reason: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub(crate) fn format(field: &'static str, reason: impl Into<String>) -> Self {
        Error::Format { field, reason: reason.into() }
    }
}
