//! Crate-wide error type.

/// Errors produced by tensor ops, model execution, data loading, and file formats.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimMismatch(String),
    #[error("layout error: {0}")]
    Layout(String),
    #[error("invalid padding: {0}")]
    Pad(String),
    #[error("window out of bounds: {0}")]
    Bounds(String),
    #[error("channel mismatch: {0}")]
    Channels(String),
    #[error("alignment error: {0}")]
    Alignment(String),
    #[error("invalid config: {0}")]
    Config(String),
    #[error("activation tape error: {0}")]
    Tape(String),
    #[error("tile plan error: {0}")]
    Tile(String),
    #[error("dataset error: {0}")]
    Data(String),
    #[error("file format error: {0}")]
    Format(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("image error: {0}")]
    Image(#[from] image::ImageError),
}

pub type Result<T> = std::result::Result<T, Error>;
