// `!(x > 0.0)` is used on purpose: it rejects NaN as well
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod camera;
pub mod error;
pub mod estimator;
pub mod eval;
pub mod geometry;
pub mod io;
pub mod manifold;
pub mod metrics;
pub mod sequence;
pub mod sim;

pub use camera::{CameraModel, GenericCamera, PinholeIntrinsics};
pub use error::{Error, Result};
pub use estimator::{estimate, ConditionNote, EstimateResult, EstimatorOptions, JacobianMode};
pub use eval::{evaluate, EvalReport, TrajectoryRecord};
pub use geometry::{Bearing, EssentialMatrix, FundamentalMatrix, PixelPoint, Pose};
pub use manifold::{CameraRig, FreeMask, MotionParams, Param, RigCamera};
pub use metrics::{FeatureMatch, LossKind, MatchSet, MetricKind, RobustLoss};
pub use sequence::{run_sequence, FramePairRecord, ScaleSource, SequenceOptions, SequenceOutput};
