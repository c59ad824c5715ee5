//! Ready-made scenes used by the tests, the acceptance suite and the CLI.

use std::f64::consts::FRAC_PI_2;

use crate::error::Result;
use crate::eval::Category;
use crate::geometry::Frame;
use crate::sim::{scan, LidarRig, ObjectSpec, SceneSpec, StaticBox, StaticGeometry};

/// Frames simulated for the standard scenario.
pub const STANDARD_FRAMES: usize = 10;

const CAR: [f64; 3] = [4.5, 1.9, 1.5];
const TRUCK: [f64; 3] = [9.0, 2.5, 3.2];
/// Vehicles float this far above the ground so that their bottoms are not
/// swallowed by ground removal.
const CLEARANCE: f64 = 0.3;

fn vehicle(
    track_id: i32,
    dims: [f64; 3],
    x: f64,
    y: f64,
    vx: f64,
    category: Category,
) -> ObjectSpec {
    ObjectSpec {
        track_id,
        dims,
        center: [x, y, CLEARANCE + dims[2] / 2.0],
        yaw: 0.0,
        velocity: [vx, 0.0, 0.0],
        yaw_rate: 0.0,
        category,
    }
}

fn building(x0: f64, x1: f64, y0: f64, y1: f64, height: f64) -> StaticBox {
    StaticBox {
        min: [x0, y0, 0.0],
        max: [x1, y1, height],
    }
}

/// Main street along x with building rows at |y| ∈ [14, 16], interrupted by an
/// open square at x ∈ [12, 40], and a wall closing the view at x = 70.
fn street() -> StaticGeometry {
    StaticGeometry {
        boxes: vec![
            building(-100.0, 12.0, 14.0, 16.0, 8.0),
            building(-100.0, 12.0, -16.0, -14.0, 8.0),
            building(40.0, 68.0, 14.0, 16.0, 8.0),
            building(40.0, 68.0, -16.0, -14.0, 8.0),
            building(70.0, 72.0, -60.0, 60.0, 10.0),
        ],
        ground_z: Some(0.0),
    }
}

/// Ego driving at 10 m/s towards an intersection. Behind it, a car at 5 m/s
/// falls back and a car at 15 m/s catches up, one lane to either side. A car
/// at 25 m/s and a truck (category `OTHERS`) at 35 m/s come the other way;
/// one car is parked at the curb.
pub fn standard_scene() -> SceneSpec {
    SceneSpec {
        objects: vec![
            vehicle(1, CAR, -35.0, -3.5, 5.0, Category::Car),
            vehicle(2, CAR, -40.0, 3.5, 15.0, Category::Car),
            vehicle(3, CAR, 45.0, 3.5, -25.0, Category::Car),
            vehicle(4, TRUCK, 52.0, -7.0, -35.0, Category::Others),
            vehicle(5, CAR, 18.0, 7.0, 0.0, Category::Car),
        ],
        static_geometry: street(),
        duration: STANDARD_FRAMES as f64 * 0.1,
        ego_velocity: [10.0, 0.0, 0.0],
    }
}

pub fn standard_rig(noise_sigma: f64) -> LidarRig {
    let mut rig = LidarRig::preset("dual-180").expect("preset exists");
    rig.noise_sigma = noise_sigma;
    rig
}

pub fn standard_scan(noise_sigma: f64, seed: u64) -> Result<Vec<Frame>> {
    scan(
        &standard_scene(),
        &standard_rig(noise_sigma),
        STANDARD_FRAMES,
        seed,
    )
}

/// Stationary ego and one car driving straight away from it along +y at
/// `speed`, so the object stays at a fixed azimuth for both sensors.
pub fn speed_sweep_scene(speed: f64, n_frames: usize) -> SceneSpec {
    SceneSpec {
        objects: vec![ObjectSpec {
            yaw: FRAC_PI_2,
            velocity: [0.0, speed, 0.0],
            ..vehicle(1, CAR, 0.0, 8.0, 0.0, Category::Car)
        }],
        static_geometry: StaticGeometry {
            boxes: Vec::new(),
            ground_z: Some(0.0),
        },
        duration: n_frames as f64 * 0.1,
        ego_velocity: [0.0; 3],
    }
}

/// Speeds of the [`speed_ladder_scene`] pairs, m/s.
pub const LADDER_SPEEDS: [f64; 4] = [5.0, 15.0, 25.0, 35.0];

/// Stationary ego and one pair of cars per speed in [`LADDER_SPEEDS`], all
/// driving along +x. The two cars of a pair mirror each other across the
/// ego's heading, so their azimuth-dependent capture delays average out and
/// every speed sees the same mean `ΔT`.
pub fn speed_ladder_scene() -> SceneSpec {
    // (start x, lane offset) per speed; slow pairs ahead, fast pairs behind.
    let layout = [(15.0, 4.0), (20.0, 10.0), (-60.0, 4.0), (-70.0, 10.0)];
    let mut objects = Vec::new();
    for (k, (&v, &(x, y))) in LADDER_SPEEDS.iter().zip(&layout).enumerate() {
        for (side, sign) in [1.0, -1.0].into_iter().enumerate() {
            objects.push(vehicle(
                (2 * k + side + 1) as i32,
                CAR,
                x,
                sign * y,
                v,
                Category::Car,
            ));
        }
    }
    SceneSpec {
        objects,
        static_geometry: StaticGeometry {
            boxes: Vec::new(),
            ground_z: Some(0.0),
        },
        duration: STANDARD_FRAMES as f64 * 0.1,
        ego_velocity: [0.0; 3],
    }
}

/// Expected `ΔT` of the points of `track_id` in `frame`, predicted from sweep
/// timing alone: for every sensor that sees the object, the capture time at
/// which its beam faces the box center, weighted by the sensor's hit count.
pub fn analytic_mean_delta_t(
    scene: &SceneSpec,
    rig: &LidarRig,
    frame: &Frame,
    track_id: i32,
) -> Option<f64> {
    let gt = frame.gt.as_ref()?;
    let object = scene.objects.iter().find(|o| o.track_id == track_id)?;
    let period = rig.scan_duration();
    let start = frame.frame_index as f64 * period;
    let mut hits = vec![0usize; rig.sensors.len()];
    for (p, &id) in frame.points.iter().zip(&gt.track_id) {
        if id == track_id {
            hits[p.sensor_id as usize] += 1;
        }
    }
    let total: usize = hits.iter().sum();
    if total == 0 {
        return None;
    }
    let mut acc = 0.0;
    for (s, sensor) in rig.sensors.iter().enumerate() {
        if hits[s] == 0 {
            continue;
        }
        let mut t = 0.5 * period;
        for _ in 0..20 {
            let tau = start + t;
            let pose = scene.ego_pose(tau).compose(&sensor.mount.pose());
            let local = pose.inverse().apply(&object.pose_at(tau).translation);
            t = sensor.sweep_fraction(local.y.atan2(local.x)) * period;
        }
        acc += hits[s] as f64 * (period - t);
    }
    Some(acc / total as f64)
}
