//! Rolling-shutter motion compensation for dynamic objects in multi-LiDAR
//! point clouds.
//!
//! The pipeline runs per frame: ego-motion compensation, ground removal,
//! dynamic auto-labeling, scene-flow estimation and finally the per-point
//! correction `D(p) = F(p) / T · ΔT(p)`. A synthetic rolling-shutter scanner
//! supplies exact ground truth, and [`eval`] scores results with the Chamfer
//! distance error (CDE) and mean point error (MPE).

// `!(x > 0.0)` is how validation rejects NaN along with non-positive values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod autolabel;
pub mod cli;
pub mod comp;
pub mod error;
pub mod eval;
pub mod flow;
pub mod geometry;
pub mod ground;
pub mod io;
pub mod nn;
pub mod pipeline;
pub mod sim;

pub use comp::{
    delta_t, ego_compensate, ego_compensate_to, himo_compensate, himo_compensate_with,
    CompensationTarget, DistortionField, FlowField, HimoConfig,
};
pub use error::{HimoError, Result};
pub use geometry::{
    chamfer, chamfer_with, transform, ChamferMode, EgoTrajectory, Frame, GroundTruth, RigidMotion,
    TimedPoint, Vec3,
};
pub use ground::remove_ground;
pub use nn::{nn_distance, NnIndex};
