//! Geometric primitives: timed points, rigid motions, frames and Chamfer distance.

use nalgebra::{Matrix3, Rotation3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{HimoError, Result};
use crate::nn::NnIndex;

pub type Vec3 = Vector3<f64>;

/// One LiDAR return with its capture time relative to scan start.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TimedPoint {
    pub position: Vec3,
    /// Seconds since the start of the sweep, in `[0, T_sensor]`.
    pub t: f64,
    pub sensor_id: u8,
    pub ground: bool,
}

impl TimedPoint {
    pub fn new(position: Vec3, t: f64, sensor_id: u8) -> Self {
        TimedPoint {
            position,
            t,
            sensor_id,
            ground: false,
        }
    }
}

/// Proper rigid transform `p -> R p + t`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RigidMotion {
    pub rotation: Rotation3<f64>,
    pub translation: Vec3,
}

impl Default for RigidMotion {
    fn default() -> Self {
        Self::identity()
    }
}

impl RigidMotion {
    pub const ORTHONORMAL_TOL: f64 = 1e-9;

    pub fn identity() -> Self {
        RigidMotion {
            rotation: Rotation3::identity(),
            translation: Vec3::zeros(),
        }
    }

    /// Builds a motion from a raw 3x3 matrix, rejecting anything that is not
    /// a proper rotation to within [`RigidMotion::ORTHONORMAL_TOL`].
    pub fn new(rotation: Matrix3<f64>, translation: Vec3) -> Result<Self> {
        let m = RigidMotion {
            rotation: Rotation3::from_matrix_unchecked(rotation),
            translation,
        };
        if !m.is_proper() {
            return Err(HimoError::InvalidArgument(
                "rotation is not orthonormal with determinant +1".into(),
            ));
        }
        Ok(m)
    }

    pub fn from_translation(translation: Vec3) -> Self {
        RigidMotion {
            rotation: Rotation3::identity(),
            translation,
        }
    }

    pub fn from_yaw(yaw: f64, translation: Vec3) -> Self {
        RigidMotion {
            rotation: Rotation3::from_axis_angle(&Vector3::z_axis(), yaw),
            translation,
        }
    }

    pub fn is_proper(&self) -> bool {
        let r = self.rotation.matrix();
        let ortho = (r.transpose() * r - Matrix3::identity()).amax();
        ortho <= Self::ORTHONORMAL_TOL
            && (r.determinant() - 1.0).abs() <= Self::ORTHONORMAL_TOL
            && self.translation.iter().all(|v| v.is_finite())
    }

    #[inline]
    pub fn apply(&self, p: &Vec3) -> Vec3 {
        self.rotation * p + self.translation
    }

    #[inline]
    pub fn apply_vector(&self, v: &Vec3) -> Vec3 {
        self.rotation * v
    }

    pub fn inverse(&self) -> Self {
        let rinv = self.rotation.inverse();
        RigidMotion {
            rotation: rinv,
            translation: -(rinv * self.translation),
        }
    }

    /// `self ∘ other`: applies `other` first.
    pub fn compose(&self, other: &RigidMotion) -> Self {
        RigidMotion {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    /// Constant-velocity interpolation: linear in translation, geodesic in rotation.
    pub fn interpolate(&self, other: &RigidMotion, s: f64) -> Self {
        if self == other {
            return *self;
        }
        RigidMotion {
            rotation: self.rotation.slerp(&other.rotation, s),
            translation: self.translation.lerp(&other.translation, s),
        }
    }

    /// Row-major rotation followed by translation.
    pub fn to_array(&self) -> [f64; 12] {
        let r = self.rotation.matrix();
        let mut out = [0.0; 12];
        for i in 0..3 {
            for j in 0..3 {
                out[i * 3 + j] = r[(i, j)];
            }
            out[9 + i] = self.translation[i];
        }
        out
    }

    pub fn from_array(a: &[f64; 12]) -> Self {
        RigidMotion {
            rotation: Rotation3::from_matrix_unchecked(Matrix3::new(
                a[0], a[1], a[2], a[3], a[4], a[5], a[6], a[7], a[8],
            )),
            translation: Vec3::new(a[9], a[10], a[11]),
        }
    }

    pub fn yaw(&self) -> f64 {
        let r = self.rotation.matrix();
        r[(1, 0)].atan2(r[(0, 0)])
    }
}

/// Ego pose (world from ego) at scan start and scan end.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EgoTrajectory {
    pub start: RigidMotion,
    pub end: RigidMotion,
}

impl EgoTrajectory {
    pub fn stationary(pose: RigidMotion) -> Self {
        EgoTrajectory {
            start: pose,
            end: pose,
        }
    }

    /// Pose at sweep fraction `s` (0 = start, 1 = end).
    pub fn pose_at(&self, s: f64) -> RigidMotion {
        self.start.interpolate(&self.end, s)
    }

    /// Transform from the ego frame at fraction `s` to the ego frame at fraction `target`.
    pub fn relative(&self, s: f64, target: f64) -> RigidMotion {
        if self.start == self.end {
            return RigidMotion::identity();
        }
        self.pose_at(target).inverse().compose(&self.pose_at(s))
    }
}

/// Exact per-point ground truth attached to simulated frames.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct GroundTruth {
    /// Displacement taking each ego-compensated point to its scan-end position.
    pub correction: Vec<Vec3>,
    /// Displacement of each point over one full scan interval.
    pub flow: Vec<Vec3>,
    pub dynamic: Vec<bool>,
    /// `-1` for background.
    pub track_id: Vec<i32>,
}

impl GroundTruth {
    pub fn with_len(n: usize) -> Self {
        GroundTruth {
            correction: vec![Vec3::zeros(); n],
            flow: vec![Vec3::zeros(); n],
            dynamic: vec![false; n],
            track_id: vec![-1; n],
        }
    }

    pub fn len(&self) -> usize {
        self.correction.len()
    }

    pub fn is_empty(&self) -> bool {
        self.correction.is_empty()
    }

    fn is_consistent(&self) -> bool {
        let n = self.correction.len();
        self.flow.len() == n && self.dynamic.len() == n && self.track_id.len() == n
    }
}

/// One fused multi-LiDAR sweep.
#[derive(Clone, Debug, PartialEq)]
pub struct Frame {
    pub points: Vec<TimedPoint>,
    /// Sweep duration `T_sensor` in seconds.
    pub scan_duration: f64,
    pub ego: Option<EgoTrajectory>,
    pub frame_index: u64,
    pub gt: Option<GroundTruth>,
}

impl Frame {
    pub fn new(points: Vec<TimedPoint>, scan_duration: f64) -> Self {
        Frame {
            points,
            scan_duration,
            ego: None,
            frame_index: 0,
            gt: None,
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn positions(&self) -> Vec<Vec3> {
        self.points.iter().map(|p| p.position).collect()
    }

    pub fn non_ground_indices(&self) -> Vec<usize> {
        (0..self.points.len())
            .filter(|&i| !self.points[i].ground)
            .collect()
    }

    /// Latest capture time in the frame (zero for an empty frame).
    pub fn last_timestamp(&self) -> f64 {
        self.points.iter().map(|p| p.t).fold(0.0, f64::max)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.scan_duration > 0.0 && self.scan_duration.is_finite()) {
            return Err(HimoError::InvalidArgument(format!(
                "scan duration must be positive, got {}",
                self.scan_duration
            )));
        }
        for (i, p) in self.points.iter().enumerate() {
            if !(p.t >= 0.0 && p.t <= self.scan_duration) {
                return Err(HimoError::InvalidArgument(format!(
                    "point {i} timestamp {} outside [0, {}]",
                    p.t, self.scan_duration
                )));
            }
            if !p.position.iter().all(|v| v.is_finite()) {
                return Err(HimoError::InvalidArgument(format!(
                    "point {i} has a non-finite position"
                )));
            }
        }
        if let Some(gt) = &self.gt {
            if !gt.is_consistent() || gt.len() != self.points.len() {
                return Err(HimoError::InvalidArgument(
                    "ground truth length does not match point count".into(),
                ));
            }
        }
        Ok(())
    }

    /// Copy of this ego-compensated frame expressed in the scan-end ego frame
    /// of `reference`. Both frames must carry ego trajectories in a shared world.
    pub fn expressed_in(&self, reference: &Frame) -> Result<Frame> {
        let (Some(own), Some(target)) = (self.ego, reference.ego) else {
            return Err(HimoError::NotCoRegistered("missing ego trajectory".into()));
        };
        let m = if own.end == target.end {
            RigidMotion::identity()
        } else {
            target.end.inverse().compose(&own.end)
        };
        let mut out = self.clone();
        out.points = transform(&self.points, &m);
        if let Some(gt) = out.gt.as_mut() {
            for v in gt.correction.iter_mut().chain(gt.flow.iter_mut()) {
                *v = m.apply_vector(v);
            }
        }
        Ok(out)
    }
}

/// Applies `m` to every position; timestamps and flags are untouched.
pub fn transform(points: &[TimedPoint], m: &RigidMotion) -> Vec<TimedPoint> {
    points
        .iter()
        .map(|p| TimedPoint {
            position: m.apply(&p.position),
            ..*p
        })
        .collect()
}

/// Distance convention for [`chamfer_with`].
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ChamferMode {
    #[default]
    Euclidean,
    Squared,
}

/// Symmetric Chamfer distance with Euclidean nearest-neighbour distances.
pub fn chamfer(a: &[Vec3], b: &[Vec3]) -> Result<f64> {
    chamfer_with(a, b, ChamferMode::Euclidean)
}

pub fn chamfer_with(a: &[Vec3], b: &[Vec3], mode: ChamferMode) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(HimoError::EmptyPointSet);
    }
    let ia = NnIndex::new(a);
    let ib = NnIndex::new(b);
    Ok(mean_nn(a, &ib, mode) + mean_nn(b, &ia, mode))
}

/// Chamfer distance when an index over `b` already exists.
pub fn chamfer_indexed(
    a: &[Vec3],
    b: &[Vec3],
    b_index: &NnIndex,
    mode: ChamferMode,
) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(HimoError::EmptyPointSet);
    }
    let ia = NnIndex::new(a);
    Ok(mean_nn(a, b_index, mode) + mean_nn(b, &ia, mode))
}

/// Mean distance from each query point to its nearest neighbour in `index`.
pub(crate) fn mean_nn(queries: &[Vec3], index: &NnIndex, mode: ChamferMode) -> f64 {
    let sum: f64 = queries
        .iter()
        .map(|q| {
            let (d2, _) = index.nearest_squared(q).expect("nonempty index");
            match mode {
                ChamferMode::Euclidean => d2.sqrt(),
                ChamferMode::Squared => d2,
            }
        })
        .sum();
    sum / queries.len() as f64
}

pub fn centroid(points: &[Vec3]) -> Vec3 {
    if points.is_empty() {
        return Vec3::zeros();
    }
    points.iter().sum::<Vec3>() / points.len() as f64
}
