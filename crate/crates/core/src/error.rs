use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("point is behind the camera (z = {z})")]
    BehindCamera { z: f64 },
    #[error("depth must be positive (got {0})")]
    InvalidDepth(f64),
    #[error("insufficient matches: need at least {need}, got {got}")]
    InsufficientMatches { need: usize, got: usize },
    #[error("optimizer diverged: non-finite cost")]
    Diverged,
    #[error("gauge is unfixed: no keyframe is held constant")]
    GaugeUnfixed,
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("render cache is stale: rendered at generation {rendered}, map is at {current}")]
    StaleCache { rendered: u64, current: u64 },
    #[error("no pixel has both valid depth and rendered coverage")]
    EmptyOverlap,
    #[error("missing index file {0}")]
    MissingIndexFile(PathBuf),
    #[error("timestamp association produced no frames")]
    NoPairs,
    #[error("insufficient associated pose pairs: need 3, got {0}")]
    InsufficientPairs(usize),
    #[error("no frames were processed")]
    NoFrames,
    #[error("no keyframe passed viewpoint selection")]
    NoReconstructionFrames,
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("parse error in {file}:{line}: {msg}")]
    Parse {
        file: String,
        line: usize,
        msg: String,
    },
    #[error("image error: {0}")]
    Image(#[from] image::ImageError),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Stable machine-readable identifier, used on the CLI's error line.
    pub fn code(&self) -> &'static str {
        match self {
            Error::BehindCamera { .. } => "behind-camera",
            Error::InvalidDepth(_) => "invalid-depth",
            Error::InsufficientMatches { .. } => "insufficient-matches",
            Error::Diverged => "diverged",
            Error::GaugeUnfixed => "gauge-unfixed",
            Error::Precondition(_) => "precondition",
            Error::StaleCache { .. } => "stale-cache",
            Error::EmptyOverlap => "empty-overlap",
            Error::MissingIndexFile(_) => "missing-index-file",
            Error::NoPairs => "no-pairs",
            Error::InsufficientPairs(_) => "insufficient-pairs",
            Error::NoFrames => "no-frames",
            Error::NoReconstructionFrames => "no-reconstruction-frames",
            Error::Config(_) => "config",
            Error::Parse { .. } => "parse",
            Error::Image(_) => "image",
            Error::Csv(_) => "csv",
            Error::Io(_) => "io",
        }
    }
}
