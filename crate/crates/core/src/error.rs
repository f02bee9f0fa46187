use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("translation is (numerically) zero, epipolar geometry is undefined")]
    DegenerateTranslation,
    #[error("point maps onto the epipole, epipolar line is undefined")]
    EpipoleDegenerate,
    #[error("query lies outside the camera model's valid domain")]
    OutOfDomain,
    #[error("point is behind the camera (z = {0})")]
    BehindCamera(f64),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("no feature matches to estimate from")]
    NoMatches,
    #[error("camera id {0} is not part of the rig")]
    UnknownCamera(u32),
    #[error("the GeoLine metric requires pinhole cameras (camera {0} is generic)")]
    MetricRequiresPinhole(u32),
    #[error("no scene point is visible at both frames")]
    NoVisiblePoints,
    #[error("no frame pair records")]
    NoRecords,
    #[error("trajectory is too short for any evaluation segment")]
    TrajectoryTooShort,
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("invalid calibration: {0}")]
    CalibrationInvalid(String),
    #[error("{}:{line}: {message}", path.display())]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("{}:{line}: frame indices are not strictly increasing", path.display())]
    NonMonotoneFrames { path: PathBuf, line: usize },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn parse(path: impl Into<PathBuf>, line: usize, message: impl Into<String>) -> Self {
        Error::Parse {
            path: path.into(),
            line,
            message: message.into(),
        }
    }
}
