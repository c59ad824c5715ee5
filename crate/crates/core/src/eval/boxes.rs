use log::info;
use nalgebra::Rotation3;
use serde::{Deserialize, Serialize};

use crate::comp::CompensationTarget;
use crate::geometry::{Frame, Vec3};

/// Object class used to split the metrics.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Category {
    #[default]
    #[serde(rename = "CAR")]
    Car,
    /// Trucks, buses and other large vehicles.
    #[serde(rename = "OTHERS")]
    Others,
}

impl Category {
    pub fn as_str(self) -> &'static str {
        match self {
            Category::Car => "CAR",
            Category::Others => "OTHERS",
        }
    }
}

/// Oriented box with a track id and a velocity, in the frame it annotates.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrackedBox {
    pub center: Vec3,
    /// Length, width, height along the box axes.
    pub dims: Vec3,
    pub yaw: f64,
    /// m/s, same frame as `center`.
    pub velocity: Vec3,
    pub track_id: i32,
    #[serde(default)]
    pub category: Category,
}

impl TrackedBox {
    fn rotation(&self) -> Rotation3<f64> {
        Rotation3::from_axis_angle(&Vec3::z_axis(), self.yaw)
    }

    /// Position of `p` in the box frame.
    pub fn to_local(&self, p: &Vec3) -> Vec3 {
        self.rotation().inverse() * (p - self.center)
    }

    /// Closed containment test.
    pub fn contains(&self, p: &Vec3) -> bool {
        let l = self.to_local(p);
        (0..3).all(|a| l[a].abs() <= 0.5 * self.dims[a])
    }

    pub fn speed(&self) -> f64 {
        self.velocity.norm()
    }
}

/// Margin added on every side of a box before velocity expansion, meters.
pub const BOX_MARGIN: f64 = 0.2;

pub fn expand_boxes(tracks: &[TrackedBox], scan_duration: f64) -> Vec<TrackedBox> {
    expand_boxes_with(tracks, scan_duration, BOX_MARGIN)
}

/// Grows each box backwards along its motion by `‖v‖ T` so that every copy of
/// the object captured during the sweep lies inside, plus `margin` on all sides.
/// Boxes are assumed to sit at their scan-end pose.
pub fn expand_boxes_with(
    tracks: &[TrackedBox],
    scan_duration: f64,
    margin: f64,
) -> Vec<TrackedBox> {
    tracks
        .iter()
        .map(|b| {
            let sweep = b.velocity * scan_duration;
            let local = b.rotation().inverse() * sweep;
            TrackedBox {
                center: b.center - sweep * 0.5,
                dims: b.dims + local.abs() + Vec3::repeat(2.0 * margin),
                ..b.clone()
            }
        })
        .collect()
}

/// Points of one object, as delimited by its expanded box.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricCluster {
    pub track_id: i32,
    pub category: Category,
    /// ‖v‖ of the owning track, m/s.
    pub speed: f64,
    pub members: Vec<usize>,
}

/// Assigns each non-ground point of `frame` to the box containing it. A point
/// inside several boxes goes to the box with the nearest center. Returns one
/// entry per box, in track order (possibly with no members).
pub fn assign_to_boxes(frame: &Frame, boxes: &[TrackedBox]) -> Vec<Vec<usize>> {
    let mut members = vec![Vec::new(); boxes.len()];
    let mut conflicts = 0usize;
    for (i, p) in frame.points.iter().enumerate() {
        if p.ground {
            continue;
        }
        let mut best: Option<(f64, usize)> = None;
        let mut hits = 0;
        for (k, b) in boxes.iter().enumerate() {
            if b.contains(&p.position) {
                hits += 1;
                let d = (p.position - b.center).norm_squared();
                if best.is_none_or(|(bd, _)| d < bd) {
                    best = Some((d, k));
                }
            }
        }
        if hits > 1 {
            conflicts += 1;
        }
        if let Some((_, k)) = best {
            members[k].push(i);
        }
    }
    if conflicts > 0 {
        info!(
            "frame {}: {conflicts} points inside several boxes, assigned to the nearest center",
            frame.frame_index
        );
    }
    members
}

/// Metric clusters of `frame` from its scan-end tracks. Boxes are expanded
/// with the frame's scan duration; tracks that capture no points are dropped.
pub fn clusters_from_tracks(frame: &Frame, tracks: &[TrackedBox]) -> Vec<MetricCluster> {
    let expanded = expand_boxes(tracks, frame.scan_duration);
    assign_to_boxes(frame, &expanded)
        .into_iter()
        .zip(tracks)
        .filter(|(m, _)| !m.is_empty())
        .map(|(members, b)| MetricCluster {
            track_id: b.track_id,
            category: b.category,
            speed: b.speed(),
            members,
        })
        .collect()
}

/// Ground-truth undistorted frame: every point inside an expanded track box
/// is moved by `v_box · ΔT(p)`. `frame` must be ego-compensated.
pub fn make_gt(frame: &Frame, tracks: &[TrackedBox]) -> Frame {
    make_gt_to(frame, tracks, CompensationTarget::ScanEnd)
}

/// [`make_gt`] for an arbitrary compensation target; `frame` must be
/// ego-compensated to the same target.
pub fn make_gt_to(frame: &Frame, tracks: &[TrackedBox], target: CompensationTarget) -> Frame {
    let expanded = expand_boxes(tracks, frame.scan_duration);
    let members = assign_to_boxes(frame, &expanded);
    let t_last = match target {
        CompensationTarget::ScanEnd => frame.last_timestamp(),
        CompensationTarget::MidScan => 0.5 * frame.scan_duration,
    };
    let mut out = frame.clone();
    for (k, idx) in members.iter().enumerate() {
        let v = tracks[k].velocity;
        for &i in idx {
            let p = &mut out.points[i];
            p.position += v * (t_last - p.t);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::TimedPoint;

    fn car(center: Vec3, velocity: Vec3, yaw: f64) -> TrackedBox {
        TrackedBox {
            center,
            dims: Vec3::new(4.0, 2.0, 1.5),
            yaw,
            velocity,
            track_id: 1,
            category: Category::Car,
        }
    }

    #[test]
    fn static_box_gets_margin_only() {
        let e = &expand_boxes(&[car(Vec3::zeros(), Vec3::zeros(), 0.3)], 0.1)[0];
        assert!((e.dims - Vec3::new(4.4, 2.4, 1.9)).norm() < 1e-12);
        assert_eq!(e.center, Vec3::zeros());
    }

    #[test]
    fn moving_box_grows_by_sweep_length_behind() {
        let b = car(Vec3::new(10.0, 0.0, 1.0), Vec3::new(30.0, 0.0, 0.0), 0.0);
        let e = &expand_boxes(&[b], 0.1)[0];
        assert!((e.dims.x - (4.0 + 3.0 + 0.4)).abs() < 1e-12);
        assert!(e.contains(&Vec3::new(10.0 - 2.0 - 3.0 + 0.01, 0.0, 1.0)));
        assert!(!e.contains(&Vec3::new(10.0 + 2.0 + 0.25, 0.0, 1.0)));
    }

    #[test]
    fn rotated_box_expands_along_its_heading() {
        let yaw = std::f64::consts::FRAC_PI_2;
        let b = car(Vec3::zeros(), Vec3::new(0.0, 20.0, 0.0), yaw);
        let e = &expand_boxes(&[b], 0.1)[0];
        assert!((e.dims.x - (4.0 + 2.0 + 0.4)).abs() < 1e-9);
        assert!((e.dims.y - 2.4).abs() < 1e-9);
        assert!(e.contains(&Vec3::new(0.0, -3.9, 0.0)));
    }

    #[test]
    fn make_gt_moves_only_box_points() {
        let pts = vec![
            TimedPoint::new(Vec3::new(0.0, 0.0, 0.5), 0.0, 0),
            TimedPoint::new(Vec3::new(50.0, 0.0, 0.5), 0.05, 0),
            TimedPoint::new(Vec3::new(0.5, 0.0, 0.5), 0.1, 0),
        ];
        let f = Frame::new(pts, 0.1);
        let out = make_gt(
            &f,
            &[car(
                Vec3::new(0.5, 0.0, 0.5),
                Vec3::new(10.0, 0.0, 0.0),
                0.0,
            )],
        );
        assert!((out.points[0].position.x - 1.0).abs() < 1e-12);
        assert_eq!(out.points[1], f.points[1]);
        assert_eq!(out.points[2], f.points[2]);
    }

    #[test]
    fn zero_velocity_tracks_leave_frame_unchanged() {
        let f = Frame::new(
            vec![TimedPoint::new(Vec3::new(0.1, 0.0, 0.2), 0.02, 0)],
            0.1,
        );
        assert_eq!(make_gt(&f, &[car(Vec3::zeros(), Vec3::zeros(), 0.0)]), f);
    }

    #[test]
    fn overlapping_boxes_pick_nearest_center() {
        let a = TrackedBox {
            track_id: 1,
            ..car(Vec3::zeros(), Vec3::zeros(), 0.0)
        };
        let b = TrackedBox {
            track_id: 2,
            ..car(Vec3::new(3.0, 0.0, 0.0), Vec3::zeros(), 0.0)
        };
        let f = Frame::new(vec![TimedPoint::new(Vec3::new(1.8, 0.0, 0.0), 0.0, 0)], 0.1);
        let m = assign_to_boxes(&f, &[a, b]);
        assert!(m[0].is_empty());
        assert_eq!(m[1], vec![0]);
    }

    #[test]
    fn category_serializes_uppercase() {
        assert_eq!(
            serde_json::to_string(&Category::Others).unwrap(),
            "\"OTHERS\""
        );
        let c: Category = serde_json::from_str("\"CAR\"").unwrap();
        assert_eq!(c, Category::Car);
    }
}
