//! Single-plane ground segmentation.

use log::warn;
use nalgebra::{Matrix3, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::geometry::{Frame, Vec3};

#[derive(Clone, Debug)]
pub struct GroundConfig {
    /// Inlier distance to the fitted plane, meters.
    pub tolerance: f64,
    /// Only points below this height are used to fit the plane.
    pub candidate_max_z: f64,
    /// Reject hypotheses whose normal tilts more than this from vertical (radians).
    pub max_slope: f64,
    pub iterations: usize,
    pub seed: u64,
}

impl Default for GroundConfig {
    fn default() -> Self {
        GroundConfig {
            tolerance: 0.2,
            candidate_max_z: 0.5,
            max_slope: 20f64.to_radians(),
            iterations: 100,
            seed: 0x5eed_9a0d,
        }
    }
}

/// Plane `n · p = d` with unit normal pointing up.
#[derive(Clone, Copy, Debug)]
pub struct Plane {
    pub normal: Vec3,
    pub offset: f64,
}

impl Plane {
    pub fn distance(&self, p: &Vec3) -> f64 {
        self.normal.dot(p) - self.offset
    }

    fn through(a: &Vec3, b: &Vec3, c: &Vec3) -> Option<Plane> {
        let n = (b - a).cross(&(c - a));
        let len = n.norm();
        if len < 1e-9 {
            return None;
        }
        let mut normal = n / len;
        if normal.z < 0.0 {
            normal = -normal;
        }
        Some(Plane {
            normal,
            offset: normal.dot(a),
        })
    }

    fn least_squares(points: &[Vec3]) -> Option<Plane> {
        if points.len() < 3 {
            return None;
        }
        let c = points.iter().sum::<Vec3>() / points.len() as f64;
        let mut cov = Matrix3::zeros();
        for p in points {
            let d = p - c;
            cov += d * d.transpose();
        }
        let eig = SymmetricEigen::new(cov);
        let k = eig.eigenvalues.imin();
        let mut normal: Vec3 = eig.eigenvectors.column(k).into_owned();
        if normal.z < 0.0 {
            normal = -normal;
        }
        Some(Plane {
            normal,
            offset: normal.dot(&c),
        })
    }
}

pub fn remove_ground(frame: &Frame) -> Frame {
    remove_ground_with(frame, &GroundConfig::default())
}

/// Flags points within `tolerance` of a RANSAC-fitted ground plane. No
/// points are removed; existing flags are overwritten.
pub fn remove_ground_with(frame: &Frame, cfg: &GroundConfig) -> Frame {
    let mut out = frame.clone();
    for p in out.points.iter_mut() {
        p.ground = false;
    }
    let Some(plane) = fit_ground(frame, cfg) else {
        return out;
    };
    for p in out.points.iter_mut() {
        p.ground = plane.distance(&p.position).abs() <= cfg.tolerance;
    }
    out
}

/// Fits the ground plane, or `None` when too few candidates exist.
pub fn fit_ground(frame: &Frame, cfg: &GroundConfig) -> Option<Plane> {
    let candidates: Vec<Vec3> = frame
        .points
        .iter()
        .map(|p| p.position)
        .filter(|p| p.z < cfg.candidate_max_z)
        .collect();
    if candidates.len() < 3 {
        warn!(
            "ground removal: only {} candidate points below z={}, no ground flagged",
            candidates.len(),
            cfg.candidate_max_z
        );
        return None;
    }
    let min_nz = cfg.max_slope.cos();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut best: Option<(usize, Plane)> = None;
    let n = candidates.len();
    for _ in 0..cfg.iterations {
        let i = rng.random_range(0..n);
        let j = rng.random_range(0..n);
        let k = rng.random_range(0..n);
        let Some(plane) = Plane::through(&candidates[i], &candidates[j], &candidates[k]) else {
            continue;
        };
        if plane.normal.z < min_nz {
            continue;
        }
        let inliers = candidates
            .iter()
            .filter(|p| plane.distance(p).abs() <= cfg.tolerance)
            .count();
        if best.is_none_or(|(b, _)| inliers > b) {
            best = Some((inliers, plane));
        }
    }
    let (_, plane) = best?;
    let inliers: Vec<Vec3> = candidates
        .into_iter()
        .filter(|p| plane.distance(p).abs() <= cfg.tolerance)
        .collect();
    let refined = Plane::least_squares(&inliers).unwrap_or(plane);
    if refined.normal.z < min_nz {
        return Some(plane);
    }
    Some(refined)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::TimedPoint;

    fn frame_of(points: Vec<Vec3>) -> Frame {
        Frame::new(
            points
                .into_iter()
                .map(|p| TimedPoint::new(p, 0.0, 0))
                .collect(),
            0.1,
        )
    }

    fn box_points() -> Vec<Vec3> {
        let mut out = Vec::new();
        for i in 0..10 {
            for k in 0..16 {
                let z = 0.5 + 1.5 * k as f64 / 15.0;
                out.push(Vec3::new(5.0 + 0.2 * i as f64, 3.0, z));
                out.push(Vec3::new(5.0, 3.0 + 0.2 * i as f64, z));
            }
        }
        out
    }

    #[test]
    fn flags_exactly_the_flat_plane() {
        let mut pts = Vec::new();
        for i in -40..40 {
            for j in -40..40 {
                pts.push(Vec3::new(i as f64 * 0.25, j as f64 * 0.25, 0.0));
            }
        }
        let n_plane = pts.len();
        pts.extend(box_points());
        let out = remove_ground(&frame_of(pts));
        for (i, p) in out.points.iter().enumerate() {
            assert_eq!(p.ground, i < n_plane, "point {i}");
        }
    }

    #[test]
    fn nothing_below_threshold_flags_nothing() {
        let out = remove_ground(&frame_of(box_points()));
        assert!(out.points.iter().all(|p| !p.ground));
    }

    #[test]
    fn tilted_plane_is_recovered() {
        let pitch = 5f64.to_radians();
        let mut pts = Vec::new();
        for i in -40..40 {
            for j in -40..40 {
                let x = i as f64 * 0.25;
                pts.push(Vec3::new(x, j as f64 * 0.25, x * pitch.tan()));
            }
        }
        let n_plane = pts.len();
        pts.extend(
            box_points()
                .into_iter()
                .map(|p| p + Vec3::new(0.0, 0.0, 1.0)),
        );
        let out = remove_ground(&frame_of(pts));
        let flagged = out.points[..n_plane].iter().filter(|p| p.ground).count();
        assert!(
            flagged as f64 >= 0.99 * n_plane as f64,
            "{flagged}/{n_plane}"
        );
        assert!(out.points[n_plane..].iter().all(|p| !p.ground));
    }
}
