use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// A caller broke an operation's precondition (wrong map kind, overlapping
    /// regions, mismatched layouts).
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("empty mask: {0}")]
    EmptyMask(String),
    #[error("invalid input: {0}")]
    Invalid(String),
    #[error("degenerate style target: reference mask has no mass")]
    DegenerateTarget,
    #[error("{what} index {index} out of range (len {len})")]
    OutOfRange {
        what: &'static str,
        index: usize,
        len: usize,
    },
    #[error("backbone failure: {0}")]
    Backbone(String),
    #[error("external tool failure: {0}")]
    External(String),
    #[error("config error: {0}")]
    Config(String),
    #[error(transparent)]
    Tensor(#[from] candle_core::Error),
    #[error(transparent)]
    Image(#[from] image::ImageError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True for errors caused by bad user input rather than by the pipeline.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::Contract(_)
                | Error::Shape(_)
                | Error::EmptyMask(_)
                | Error::Invalid(_)
                | Error::DegenerateTarget
                | Error::OutOfRange { .. }
                | Error::Config(_)
        )
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
