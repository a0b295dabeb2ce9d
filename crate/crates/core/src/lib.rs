//! Biomechanics-aware keypoint simulation: robust multi-view triangulation,
//! inverse and forward kinematics on an articulated spine skeleton, curvature
//! and range-of-motion analytics, and the pose-evaluation metric suite.
//!
//! All lengths are meters and all angles radians unless a name says otherwise.

// `!(x > 0.0)` style guards are deliberate: they also reject NaN
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analytics;
pub mod geometry;
pub mod ik;
pub mod io;
pub mod metrics;
pub mod numeric;
pub mod skeleton;
pub mod synth;
pub mod temporal;
pub mod triangulation;

pub use geometry::{CameraModel, SimilarityTransform};
pub use skeleton::{JointState, JointTrajectory, MarkerTrajectory, SkeletonDefinition};
pub use triangulation::{Observation2D, TriangulationConfig};
