//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("rotation angle within {0:.1e} of pi; se(3) logarithm is ill-conditioned")]
    AngleNearPi(f64),

    #[error("depth value {0} is not a valid measurement")]
    InvalidDepth(f64),

    #[error("point with z = {0} lies behind the camera")]
    BehindCamera(f64),

    #[error("no depth measurement at pixel ({0}, {1})")]
    MissingDepth(u32, u32),

    #[error("keypoint frame is empty")]
    EmptyFrame,

    #[error("descriptor lengths differ: {0} vs {1}")]
    DimensionMismatch(usize, usize),

    #[error("need at least 3 correspondences, got {0}")]
    TooFewPoints(usize),

    #[error("point set is degenerate (collinear or rank-deficient)")]
    DegenerateGeometry,

    #[error("solver did not converge within {iterations} iterations")]
    NotConverged { iterations: usize },

    #[error("graph edge {0} -> {1} is missing")]
    MissingEdge(usize, usize),

    #[error("normal equations are singular beyond the gauge freedom")]
    SingularSystem,

    #[error("camera frusta do not overlap")]
    NoOverlap,

    #[error("no pose available for camera {0}")]
    MissingPose(usize),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("malformed file {path}: {reason}")]
    Parse { path: String, reason: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
