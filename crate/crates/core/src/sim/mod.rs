//! Synthetic rolling-shutter multi-LiDAR scanner with exact per-point ground truth.
//!
//! Each sensor sweeps one full revolution per scan interval, firing all of
//! its channels at once per azimuth column. A column fired at sweep fraction
//! `c / N` gets timestamp `c / N * T_sensor`; columns `0` and `N` point the
//! same way, so both sweep boundaries are sampled. Rays are intersected
//! analytically with every box at its pose at the column's capture time.
//! Points are returned in the ego frame at capture time, without any
//! motion compensation.

mod raycast;
pub mod scenarios;

use std::collections::HashSet;
use std::f64::consts::{FRAC_PI_2, TAU};

use nalgebra::Rotation3;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::comp::FlowField;
use crate::error::{HimoError, Result};
use crate::eval::{Category, TrackedBox};
use crate::geometry::{EgoTrajectory, Frame, GroundTruth, RigidMotion, TimedPoint, Vec3};

pub use raycast::{ray_aabb, ray_plane_z};

fn v3(a: [f64; 3]) -> Vec3 {
    Vec3::new(a[0], a[1], a[2])
}

/// A rigid box moving with constant linear velocity and yaw rate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObjectSpec {
    pub track_id: i32,
    /// Length (x), width (y), height (z) in the box frame.
    pub dims: [f64; 3],
    /// Box center at scene time zero, world frame.
    pub center: [f64; 3],
    #[serde(default)]
    pub yaw: f64,
    #[serde(default)]
    pub velocity: [f64; 3],
    #[serde(default)]
    pub yaw_rate: f64,
    #[serde(default)]
    pub category: Category,
}

impl ObjectSpec {
    pub fn initial_pose(&self) -> RigidMotion {
        RigidMotion::from_yaw(self.yaw, v3(self.center))
    }

    /// Pose (world from box) at absolute scene time `tau`.
    pub fn pose_at(&self, tau: f64) -> RigidMotion {
        RigidMotion::from_yaw(
            self.yaw + self.yaw_rate * tau,
            v3(self.center) + v3(self.velocity) * tau,
        )
    }

    /// Maps a point on the box surface at time `from` to where it is at time `to`.
    pub fn carry(&self, p: &Vec3, from: f64, to: f64) -> Vec3 {
        if self.yaw_rate == 0.0 {
            return p + v3(self.velocity) * (to - from);
        }
        let a = self.pose_at(from);
        let b = self.pose_at(to);
        b.apply(&a.inverse().apply(p))
    }

    pub fn is_moving(&self) -> bool {
        self.velocity.iter().any(|v| *v != 0.0) || self.yaw_rate != 0.0
    }

    pub fn half_extents(&self) -> Vec3 {
        v3(self.dims) * 0.5
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StaticBox {
    pub min: [f64; 3],
    pub max: [f64; 3],
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct StaticGeometry {
    #[serde(default)]
    pub boxes: Vec<StaticBox>,
    /// Height of the ground plane; `None` disables it.
    #[serde(default)]
    pub ground_z: Option<f64>,
}

/// Scripted scene: moving boxes, static geometry and a constant-velocity ego vehicle.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    #[serde(default)]
    pub objects: Vec<ObjectSpec>,
    #[serde(default)]
    pub static_geometry: StaticGeometry,
    /// Seconds of scripted motion.
    pub duration: f64,
    #[serde(default)]
    pub ego_velocity: [f64; 3],
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        let mut ids = HashSet::new();
        for o in &self.objects {
            if o.dims.iter().any(|d| !(*d > 0.0)) {
                return Err(HimoError::InvalidArgument(format!(
                    "object {} has non-positive dimensions",
                    o.track_id
                )));
            }
            if o.track_id < 0 || !ids.insert(o.track_id) {
                return Err(HimoError::InvalidArgument(format!(
                    "track id {} is negative or duplicated",
                    o.track_id
                )));
            }
        }
        for b in &self.static_geometry.boxes {
            if (0..3).any(|a| !(b.max[a] > b.min[a])) {
                return Err(HimoError::InvalidArgument(
                    "static box with empty extent".into(),
                ));
            }
        }
        if !(self.duration > 0.0) {
            return Err(HimoError::InvalidArgument(
                "scene duration must be positive".into(),
            ));
        }
        Ok(())
    }

    /// Ego pose (world from ego) at absolute time `tau`; the ego keeps its heading.
    pub fn ego_pose(&self, tau: f64) -> RigidMotion {
        RigidMotion::from_translation(v3(self.ego_velocity) * tau)
    }

    pub fn ego_trajectory(&self, frame: u64, scan_duration: f64) -> EgoTrajectory {
        let t0 = frame as f64 * scan_duration;
        EgoTrajectory {
            start: self.ego_pose(t0),
            end: self.ego_pose(t0 + scan_duration),
        }
    }

    /// Ground-truth boxes at the end of `frame`, in that frame's scan-end ego frame.
    pub fn tracks_at(&self, frame: u64, scan_duration: f64) -> Vec<TrackedBox> {
        let tau = (frame + 1) as f64 * scan_duration;
        let ego_inv = self.ego_pose(tau).inverse();
        self.objects
            .iter()
            .map(|o| {
                let pose = ego_inv.compose(&o.pose_at(tau));
                TrackedBox {
                    center: pose.translation,
                    dims: v3(o.dims),
                    yaw: pose.yaw(),
                    velocity: ego_inv.apply_vector(&v3(o.velocity)),
                    track_id: o.track_id,
                    category: o.category,
                }
            })
            .collect()
    }
}

/// Mount pose of a sensor in the ego frame.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MountSpec {
    pub translation: [f64; 3],
    #[serde(default)]
    pub roll: f64,
    #[serde(default)]
    pub pitch: f64,
    #[serde(default)]
    pub yaw: f64,
}

impl MountSpec {
    pub fn at(translation: [f64; 3]) -> Self {
        MountSpec {
            translation,
            roll: 0.0,
            pitch: 0.0,
            yaw: 0.0,
        }
    }

    pub fn pose(&self) -> RigidMotion {
        RigidMotion {
            rotation: Rotation3::from_euler_angles(self.roll, self.pitch, self.yaw),
            translation: v3(self.translation),
        }
    }
}

fn default_min_range() -> f64 {
    1.0
}

/// One spinning LiDAR.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SensorSpec {
    pub mount: MountSpec,
    /// Azimuth of the first column in the sensor frame, radians.
    pub start_azimuth: f64,
    /// `+1` counter-clockwise, `-1` clockwise (seen from above).
    pub spin: i8,
    /// Channel elevation angles, radians.
    pub channels: Vec<f64>,
    /// Radians between firing columns.
    pub azimuth_step: f64,
    pub max_range: f64,
    #[serde(default = "default_min_range")]
    pub min_range: f64,
}

impl SensorSpec {
    /// Number of column intervals in one sweep; columns `0..=N` are fired.
    pub fn columns(&self) -> usize {
        (TAU / self.azimuth_step).round().max(1.0) as usize
    }

    pub fn azimuth(&self, column: usize) -> f64 {
        self.start_azimuth + self.spin as f64 * TAU * column as f64 / self.columns() as f64
    }

    /// Sweep fraction at which the sensor points at azimuth `az` (sensor frame).
    pub fn sweep_fraction(&self, az: f64) -> f64 {
        ((self.spin as f64 * (az - self.start_azimuth)).rem_euclid(TAU)) / TAU
    }
}

/// A set of LiDARs sharing one sweep frequency.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LidarRig {
    pub sensors: Vec<SensorSpec>,
    /// Sweep frequency in Hz; `T_sensor = 1 / f_sensor`.
    pub f_sensor: f64,
    /// Isotropic Gaussian range noise, meters.
    #[serde(default)]
    pub noise_sigma: f64,
}

impl LidarRig {
    pub fn scan_duration(&self) -> f64 {
        1.0 / self.f_sensor
    }

    pub fn validate(&self) -> Result<()> {
        if self.sensors.is_empty() {
            return Err(HimoError::DegenerateRig("no sensors".into()));
        }
        if !(self.f_sensor > 0.0) {
            return Err(HimoError::DegenerateRig(
                "sweep frequency must be positive".into(),
            ));
        }
        for (i, s) in self.sensors.iter().enumerate() {
            if s.channels.is_empty() {
                return Err(HimoError::DegenerateRig(format!(
                    "sensor {i} has zero channels"
                )));
            }
            if !(s.azimuth_step > 0.0) || s.spin.abs() != 1 || !(s.max_range > s.min_range) {
                return Err(HimoError::DegenerateRig(format!(
                    "sensor {i} has invalid step, spin or range"
                )));
            }
        }
        if self.sensors.len() > u8::MAX as usize {
            return Err(HimoError::DegenerateRig("too many sensors".into()));
        }
        if !(self.noise_sigma >= 0.0) {
            return Err(HimoError::InvalidArgument(
                "noise sigma must be non-negative".into(),
            ));
        }
        Ok(())
    }

    /// Sensor origins in the ego frame, indexed by sensor id.
    pub fn sensor_origins(&self) -> Vec<Vec3> {
        self.sensors
            .iter()
            .map(|s| v3(s.mount.translation))
            .collect()
    }

    /// Named presets: `single-top` and `dual-180`. The dual rig starts its
    /// sweeps facing left and right, so traffic straight ahead or behind is
    /// captured mid-sweep by both sensors, half a period apart.
    pub fn preset(name: &str) -> Option<LidarRig> {
        let channels: Vec<f64> = (0..32)
            .map(|i| (-22.0 + 30.0 * i as f64 / 31.0f64).to_radians())
            .collect();
        let sensor = |mount: [f64; 3], start: f64| SensorSpec {
            mount: MountSpec::at(mount),
            start_azimuth: start,
            spin: 1,
            channels: channels.clone(),
            azimuth_step: 0.2f64.to_radians(),
            max_range: 100.0,
            min_range: 1.0,
        };
        let sensors = match name {
            "single-top" => vec![sensor([0.0, 0.0, 1.9], 0.0)],
            "dual-180" => vec![
                sensor([1.0, 0.0, 1.9], FRAC_PI_2),
                sensor([-1.0, 0.0, 1.9], -FRAC_PI_2),
            ],
            _ => return None,
        };
        Some(LidarRig {
            sensors,
            f_sensor: 10.0,
            noise_sigma: 0.0,
        })
    }
}

fn splitmix(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

/// Noise stream for one firing column; independent of evaluation order.
fn column_rng(seed: u64, frame: u64, sensor: usize, column: usize) -> ChaCha8Rng {
    let mut h = splitmix(seed);
    h = splitmix(h ^ frame);
    h = splitmix(h ^ sensor as u64);
    h = splitmix(h ^ column as u64);
    ChaCha8Rng::seed_from_u64(h)
}

enum Hit {
    Background,
    Object(usize),
}

struct ColumnSample {
    point: TimedPoint,
    correction: Vec3,
    flow: Vec3,
    dynamic: bool,
    track_id: i32,
}

struct FrameContext<'a> {
    scene: &'a SceneSpec,
    rig: &'a LidarRig,
    frame: u64,
    scan_duration: f64,
    seed: u64,
    ego_end_inv: RigidMotion,
}

impl FrameContext<'_> {
    fn cast(&self, origin: &Vec3, dir: &Vec3, tau: f64, sensor: &SensorSpec) -> Option<(f64, Hit)> {
        let mut best: Option<(f64, Hit)> = None;
        let mut consider = |s: f64, hit: Hit| {
            if s <= sensor.max_range && best.as_ref().is_none_or(|(b, _)| s < *b) {
                best = Some((s, hit));
            }
        };
        if let Some(h) = self.scene.static_geometry.ground_z {
            if let Some(s) = ray_plane_z(origin, dir, h, sensor.min_range) {
                consider(s, Hit::Background);
            }
        }
        for b in &self.scene.static_geometry.boxes {
            if let Some(s) = ray_aabb(origin, dir, &v3(b.min), &v3(b.max), sensor.min_range) {
                consider(s, Hit::Background);
            }
        }
        for (k, o) in self.scene.objects.iter().enumerate() {
            let pose = o.pose_at(tau);
            let inv = pose.rotation.inverse();
            let lo = inv * (origin - pose.translation);
            let ld = inv * dir;
            let h = o.half_extents();
            if let Some(s) = ray_aabb(&lo, &ld, &-h, &h, sensor.min_range) {
                consider(s, Hit::Object(k));
            }
        }
        best
    }

    fn column(&self, sensor_id: usize, column: usize) -> Vec<ColumnSample> {
        let sensor = &self.rig.sensors[sensor_id];
        let n = sensor.columns();
        let t = column as f64 / n as f64 * self.scan_duration;
        let frame_start = self.frame as f64 * self.scan_duration;
        let tau = frame_start + t;
        let ego = self.scene.ego_pose(tau);
        let ego_inv = ego.inverse();
        let sensor_pose = ego.compose(&sensor.mount.pose());
        let origin = sensor_pose.translation;
        let az = sensor.azimuth(column);
        let mut rng = column_rng(self.seed, self.frame, sensor_id, column);
        let sigma = self.rig.noise_sigma;
        let mut out = Vec::with_capacity(sensor.channels.len() / 2);
        for &el in &sensor.channels {
            let local = Vec3::new(el.cos() * az.cos(), el.cos() * az.sin(), el.sin());
            let dir = sensor_pose.rotation * local;
            let noise = if sigma > 0.0 {
                let x: f64 = StandardNormal.sample(&mut rng);
                let y: f64 = StandardNormal.sample(&mut rng);
                let z: f64 = StandardNormal.sample(&mut rng);
                Vec3::new(x, y, z) * sigma
            } else {
                Vec3::zeros()
            };
            let Some((s, hit)) = self.cast(&origin, &dir, tau, sensor) else {
                continue;
            };
            let world = origin + dir * s;
            let (correction, flow, dynamic, track_id) = match hit {
                Hit::Background => (Vec3::zeros(), Vec3::zeros(), false, -1),
                Hit::Object(k) => {
                    let o = &self.scene.objects[k];
                    let end = frame_start + self.scan_duration;
                    let corr = o.carry(&world, tau, end) - world;
                    let flow = o.carry(&world, tau, tau + self.scan_duration) - world;
                    (
                        self.ego_end_inv.apply_vector(&corr),
                        self.ego_end_inv.apply_vector(&flow),
                        o.is_moving(),
                        o.track_id,
                    )
                }
            };
            out.push(ColumnSample {
                point: TimedPoint::new(ego_inv.apply(&(world + noise)), t, sensor_id as u8),
                correction,
                flow,
                dynamic,
                track_id,
            });
        }
        out
    }
}

/// Simulates `n_frames` consecutive sweeps of `scene` with `rig`.
///
/// Frame `k` covers scene time `[k T, (k+1) T]`. Output is deterministic for a
/// given seed regardless of thread count.
pub fn scan(scene: &SceneSpec, rig: &LidarRig, n_frames: usize, seed: u64) -> Result<Vec<Frame>> {
    rig.validate()?;
    scene.validate()?;
    if n_frames < 2 {
        return Err(HimoError::InvalidArgument(
            "at least two frames are required".into(),
        ));
    }
    let scan_duration = rig.scan_duration();
    if scene.duration + 1e-9 < n_frames as f64 * scan_duration {
        return Err(HimoError::InvalidArgument(format!(
            "scene duration {} s is shorter than {} frames of {} s",
            scene.duration, n_frames, scan_duration
        )));
    }
    (0..n_frames as u64)
        .map(|k| scan_frame(scene, rig, k, seed))
        .collect()
}

/// Simulates a single sweep with index `frame`.
pub fn scan_frame(scene: &SceneSpec, rig: &LidarRig, frame: u64, seed: u64) -> Result<Frame> {
    rig.validate()?;
    let scan_duration = rig.scan_duration();
    let ego = scene.ego_trajectory(frame, scan_duration);
    let ctx = FrameContext {
        scene,
        rig,
        frame,
        scan_duration,
        seed,
        ego_end_inv: ego.end.inverse(),
    };
    // Interleave sensors column by column so timestamps never decrease.
    let max_cols = rig.sensors.iter().map(|s| s.columns()).max().unwrap_or(0);
    let slots: Vec<(usize, usize)> = (0..=max_cols)
        .flat_map(|c| (0..rig.sensors.len()).map(move |s| (s, c)))
        .filter(|&(s, c)| c <= rig.sensors[s].columns())
        .collect();
    let mut columns: Vec<(f64, usize, Vec<ColumnSample>)> = slots
        .par_iter()
        .map(|&(s, c)| {
            let t = c as f64 / rig.sensors[s].columns() as f64;
            (t, s, ctx.column(s, c))
        })
        .collect();
    columns.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));

    let total: usize = columns.iter().map(|c| c.2.len()).sum();
    let mut points = Vec::with_capacity(total);
    let mut gt = GroundTruth {
        correction: Vec::with_capacity(total),
        flow: Vec::with_capacity(total),
        dynamic: Vec::with_capacity(total),
        track_id: Vec::with_capacity(total),
    };
    for (_, _, samples) in columns {
        for s in samples {
            points.push(s.point);
            gt.correction.push(s.correction);
            gt.flow.push(s.flow);
            gt.dynamic.push(s.dynamic);
            gt.track_id.push(s.track_id);
        }
    }
    let mut out = Frame {
        points,
        scan_duration,
        ego: Some(ego),
        frame_index: frame,
        gt: Some(gt),
    };
    // Frames leave the scanner at the precision of the frame file.
    crate::io::quantize(&mut out);
    Ok(out)
}

/// The exact flow stored in a simulated frame, as an estimator output.
pub fn oracle_flow(frame: &Frame) -> Result<FlowField> {
    let gt = frame.gt.as_ref().ok_or(HimoError::NoGroundTruth)?;
    Ok(FlowField::from_vectors(gt.flow.clone()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one_box_scene(speed: f64) -> SceneSpec {
        SceneSpec {
            objects: vec![ObjectSpec {
                track_id: 1,
                dims: [4.0, 2.0, 1.5],
                center: [0.0, 10.0, 1.05],
                yaw: 0.0,
                velocity: [speed, 0.0, 0.0],
                yaw_rate: 0.0,
                category: Category::Car,
            }],
            static_geometry: StaticGeometry {
                boxes: vec![],
                ground_z: Some(0.0),
            },
            duration: 1.0,
            ego_velocity: [0.0, 0.0, 0.0],
        }
    }

    #[test]
    fn static_scene_has_zero_ground_truth() {
        let rig = LidarRig::preset("single-top").unwrap();
        let frames = scan(&one_box_scene(0.0), &rig, 2, 1).unwrap();
        for f in &frames {
            let gt = f.gt.as_ref().unwrap();
            assert!(gt.correction.iter().all(|c| *c == Vec3::zeros()));
            assert!(gt.flow.iter().all(|c| *c == Vec3::zeros()));
            assert!(gt.dynamic.iter().all(|d| !d));
        }
    }

    #[test]
    fn degenerate_rig_rejected() {
        let mut rig = LidarRig::preset("single-top").unwrap();
        rig.sensors[0].channels.clear();
        assert!(matches!(
            scan(&one_box_scene(1.0), &rig, 2, 0),
            Err(HimoError::DegenerateRig(_))
        ));
        rig.sensors.clear();
        assert!(matches!(
            scan(&one_box_scene(1.0), &rig, 2, 0),
            Err(HimoError::DegenerateRig(_))
        ));
    }

    #[test]
    fn timestamps_sorted_and_bounded() {
        let rig = LidarRig::preset("dual-180").unwrap();
        let f = scan_frame(&one_box_scene(10.0), &rig, 0, 0).unwrap();
        f.validate().unwrap();
        assert!(f.points.windows(2).all(|w| w[0].t <= w[1].t));
        // The last column is captured at the end of the sweep, up to f32 rounding.
        assert!(f.scan_duration - f.last_timestamp() < 1e-8);
        assert_eq!(f.points[0].t, 0.0);
    }

    #[test]
    fn correction_matches_velocity_times_remaining_time() {
        let rig = LidarRig::preset("single-top").unwrap();
        let f = scan_frame(&one_box_scene(20.0), &rig, 0, 0).unwrap();
        let gt = f.gt.as_ref().unwrap();
        let mut n = 0;
        for (i, p) in f.points.iter().enumerate() {
            if gt.track_id[i] == 1 {
                let want = Vec3::new(20.0 * (f.scan_duration - p.t), 0.0, 0.0);
                assert!((gt.correction[i] - want).norm() < 1e-6);
                assert!((gt.flow[i] - Vec3::new(2.0, 0.0, 0.0)).norm() < 1e-6);
                n += 1;
            }
        }
        assert!(n > 50);
    }

    #[test]
    fn oracle_flow_requires_ground_truth() {
        let mut f = Frame::new(vec![], 0.1);
        assert!(matches!(oracle_flow(&f), Err(HimoError::NoGroundTruth)));
        f.gt = Some(GroundTruth::default());
        assert_eq!(oracle_flow(&f).unwrap().len(), 0);
    }

    #[test]
    fn sweep_fraction_inverts_azimuth() {
        let rig = LidarRig::preset("dual-180").unwrap();
        for s in &rig.sensors {
            let n = s.columns();
            for c in [0, 1, n / 3, n / 2, n - 1] {
                let f = s.sweep_fraction(s.azimuth(c));
                assert!((f - c as f64 / n as f64).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn deterministic_with_noise() {
        let mut rig = LidarRig::preset("single-top").unwrap();
        rig.noise_sigma = 0.02;
        let a = scan_frame(&one_box_scene(5.0), &rig, 1, 42).unwrap();
        let b = scan_frame(&one_box_scene(5.0), &rig, 1, 42).unwrap();
        let c = scan_frame(&one_box_scene(5.0), &rig, 1, 43).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn scene_json_round_trip() {
        let s = one_box_scene(3.0);
        let text = serde_json::to_string(&s).unwrap();
        let back: SceneSpec = serde_json::from_str(&text).unwrap();
        assert_eq!(s, back);
    }
}
