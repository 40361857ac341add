use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("file not found: {0}")]
    MissingFile(PathBuf),
    #[error("{path}: unsupported bit depth ({bits} bits per sample); only 8-bit PNG is accepted")]
    UnsupportedDepth { path: PathBuf, bits: u16 },
    #[error("{path}: unsupported channel layout ({channels} channels); only RGB is accepted")]
    UnsupportedChannels { path: PathBuf, channels: u8 },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: image codec error: {message}")]
    Codec { path: PathBuf, message: String },
    #[error("dimension mismatch: {left_w}x{left_h} vs {right_w}x{right_h}")]
    DimensionMismatch {
        left_w: usize,
        left_h: usize,
        right_w: usize,
        right_h: usize,
    },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("image {width}x{height} too small: {requirement}")]
    TooSmall {
        width: usize,
        height: usize,
        requirement: String,
    },
    #[error("need at least 4 point pairs, got {0}")]
    NotEnoughPoints(usize),
    #[error("degenerate point configuration: {0}")]
    Degenerate(String),
    #[error("homography is not invertible")]
    Singular,
    #[error("input has zero intensity variance")]
    ZeroVariance,
    #[error("every pixel is invalid; nothing to fill from")]
    NoValidPixels,
    #[error("malformed {what}: {message}")]
    Parse { what: String, message: String },
    #[error("{stage} stage failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub(crate) fn mismatch(a: (usize, usize), b: (usize, usize)) -> Self {
        Error::DimensionMismatch {
            left_w: a.0,
            left_h: a.1,
            right_w: b.0,
            right_h: b.1,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn in_stage(self, stage: &'static str) -> Self {
        Error::Stage {
            stage,
            source: Box::new(self),
        }
    }
}
