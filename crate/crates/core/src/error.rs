use std::path::PathBuf;

/// Errors raised by the analysis pipeline.
#[derive(thiserror::Error, Debug)]
pub enum Error {
    #[error("{path}: file not found ({reason})")]
    FileNotFound { path: PathBuf, reason: String },

    #[error("{path}: unsupported format ({reason})")]
    UnsupportedFormat { path: PathBuf, reason: String },

    #[error("{path}: corrupt image data ({reason})")]
    CorruptData { path: PathBuf, reason: String },

    /// Raw buffer length does not match `width * height`, or a value is out of range.
    #[error("invalid raster: {0}")]
    InvalidRaster(String),

    #[error("plane too small: {width}x{height}, need at least {min}")]
    TooSmall { width: usize, height: usize, min: usize },

    #[error("bad window size {size}: {reason}")]
    BadWindow { size: usize, reason: String },

    #[error("bad kernel: {0}")]
    BadKernel(String),

    #[error("spectrum is not square: {width}x{height}")]
    NotSquare { width: usize, height: usize },

    #[error("bad clone-detection geometry: {0}")]
    BadGeometry(String),

    #[error("enrollment needs at least one fingerprint")]
    EmptyEnrollment,

    #[error("length mismatch: expected {expected}, got {actual}")]
    LengthMismatch { expected: usize, actual: usize },

    #[error("no profiles to classify against")]
    NoProfiles,

    #[error("duplicate profile label {0:?}")]
    DuplicateLabel(String),

    #[error("bad parameter: {0}")]
    BadParameter(String),

    #[error("JPEG encoding failed: {0}")]
    Encoding(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
