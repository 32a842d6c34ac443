use thiserror::Error;

/// Unified error type for every fallible operation in this crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("unsupported format: {0}")]
    UnsupportedFormat(String),

    #[error("invalid scene: {0}")]
    InvalidScene(String),

    #[error("weight archive: bad magic")]
    BadMagic,

    #[error("weight archive: unsupported version {0}")]
    UnsupportedVersion(u32),

    #[error("weight archive: unsupported scale {0}")]
    UnsupportedScale(u32),

    #[error("weight archive: truncated file")]
    Truncated,

    #[error("weight archive: missing slot `{0}`")]
    MissingSlot(String),

    #[error("weight archive: unknown slot `{0}`")]
    UnknownSlot(String),

    #[error("weight archive: slot `{slot}` has dims {got:?}, expected {expected:?}")]
    SlotShape {
        slot: String,
        expected: Vec<usize>,
        got: Vec<usize>,
    },

    #[error("io: {0}")]
    Io(#[from] std::io::Error),

    #[error("png: {0}")]
    Png(#[from] image::ImageError),
}

pub type Result<T> = std::result::Result<T, Error>;
