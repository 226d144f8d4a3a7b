//! Extrinsic calibration for panoramic RGB-D camera rings.
//!
//! The toolkit estimates the relative poses of N ring-mounted RGB-D cameras
//! with minimal pairwise field-of-view overlap. Matched keypoints are lifted
//! to 3D through depth maps, camera pairs are registered by least squares on
//! se(3), and the ring's loop-closure constraint distributes the accumulated
//! drift through pose graph optimization. A synthetic rig simulator and a
//! datagram capture simulator provide ground truth and throughput checks.

pub mod camera;
pub mod error;
pub mod graph;
pub mod lie;
pub mod matching;
pub mod netcap;
pub mod pairwise;
pub mod pipeline;
pub mod rigsim;

pub use error::{Error, Result};
pub use lie::{Pose, Twist};
