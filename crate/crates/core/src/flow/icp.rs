use log::{debug, warn};
use nalgebra::{Matrix3, Rotation3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{estimate_upper_bound, FlowInput};
use crate::comp::FlowField;
use crate::error::Result;
use crate::geometry::{centroid, RigidMotion, Vec3};
use crate::nn::NnIndex;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IcpConfig {
    pub max_iterations: usize,
    /// Stop once the translation estimate moves less than this (m).
    pub tolerance: f64,
    /// Correspondences longer than this are dropped (m).
    pub max_correspondence: f64,
    /// Largest centroid distance for cluster association (m).
    pub association_gate: f64,
    /// Estimate a full rotation instead of yaw only.
    pub full_se3: bool,
}

impl Default for IcpConfig {
    fn default() -> Self {
        IcpConfig {
            max_iterations: 30,
            tolerance: 1e-3,
            max_correspondence: 2.0,
            association_gate: 5.0,
            full_se3: false,
        }
    }
}

pub fn estimate_cluster_icp(input: &FlowInput) -> Result<FlowField> {
    estimate_cluster_icp_with(input, &IcpConfig::default())
}

/// Per dynamic cluster: associate with the next frame's dynamic cluster by
/// mutual-nearest centroids, align with point-to-point ICP and emit
/// `T(p) - p`. Clusters without a partner, or whose ICP finds no
/// correspondences, take the upper-bound flow.
pub fn estimate_cluster_icp_with(input: &FlowInput, cfg: &IcpConfig) -> Result<FlowField> {
    input.validate()?;
    let cur = input.cur.frame;
    let next = input.next.frame;
    let n = cur.len();
    let clusters = input.dynamic_clusters();
    if clusters.is_empty() {
        return Ok(FlowField::zeros(n));
    }
    if input.next.dynamic_points().0.is_empty() {
        warn!(
            "frame {}: next frame has no dynamic points, flow left at zero",
            cur.frame_index
        );
        return Ok(FlowField::zeros(n));
    }

    let targets: Vec<Vec<Vec3>> = input
        .next
        .labels
        .dynamic_clusters()
        .into_iter()
        .map(|(_, m)| {
            m.into_iter()
                .filter(|&i| !next.points[i].ground)
                .map(|i| next.points[i].position)
                .collect::<Vec<_>>()
        })
        .filter(|m| !m.is_empty())
        .collect();
    let sources: Vec<Vec<Vec3>> = clusters
        .iter()
        .map(|(_, m)| m.iter().map(|&i| cur.points[i].position).collect())
        .collect();
    let pairs = mutual_nearest(
        &sources.iter().map(|s| centroid(s)).collect::<Vec<_>>(),
        &targets.iter().map(|t| centroid(t)).collect::<Vec<_>>(),
        cfg.association_gate,
    );

    let aligned: Vec<Option<RigidMotion>> = sources
        .par_iter()
        .zip(&pairs)
        .map(|(src, pair)| pair.and_then(|j| icp_align(src, &targets[j], cfg)))
        .collect();

    let mut flow = FlowField::zeros(n);
    let mut fallback = None;
    for (((c, members), src), motion) in clusters.iter().zip(&sources).zip(&aligned) {
        match motion {
            Some(m) => {
                for (&i, p) in members.iter().zip(src) {
                    flow.vectors[i] = m.apply(p) - p;
                }
            }
            None => {
                debug!("cluster {c}: no ICP partner, using upper-bound flow");
                if fallback.is_none() {
                    fallback = Some(estimate_upper_bound(input)?.0);
                }
                let ub = fallback.as_ref().expect("just set");
                for &i in members {
                    flow.vectors[i] = ub.vectors[i];
                }
            }
        }
    }
    Ok(flow)
}

/// For each source centroid, the target centroid that is its nearest and
/// whose nearest source is it, within `gate`.
fn mutual_nearest(src: &[Vec3], dst: &[Vec3], gate: f64) -> Vec<Option<usize>> {
    let nearest = |p: &Vec3, set: &[Vec3]| -> Option<(usize, f64)> {
        set.iter()
            .enumerate()
            .map(|(j, q)| (j, (p - q).norm()))
            .fold(None, |best, (j, d)| match best {
                Some((_, bd)) if bd <= d => best,
                _ => Some((j, d)),
            })
    };
    src.iter()
        .enumerate()
        .map(|(i, p)| {
            let (j, d) = nearest(p, dst)?;
            let (back, _) = nearest(&dst[j], src)?;
            (d <= gate && back == i).then_some(j)
        })
        .collect()
}

/// Rigid motion taking `source` onto `target`, starting from the centroid
/// offset. `None` when an iteration finds no correspondence within range.
pub fn icp_align(source: &[Vec3], target: &[Vec3], cfg: &IcpConfig) -> Option<RigidMotion> {
    if source.is_empty() || target.is_empty() {
        return None;
    }
    let index = NnIndex::new(target);
    let mut m = RigidMotion::from_translation(centroid(target) - centroid(source));
    let max2 = cfg.max_correspondence * cfg.max_correspondence;
    let mut pairs: Vec<(Vec3, Vec3)> = Vec::with_capacity(source.len());
    for _ in 0..cfg.max_iterations {
        pairs.clear();
        for p in source {
            let q = m.apply(p);
            let (d2, j) = index.nearest_squared(&q).expect("nonempty");
            if d2 <= max2 {
                pairs.push((*p, target[j]));
            }
        }
        if pairs.is_empty() {
            return None;
        }
        let next = if cfg.full_se3 {
            fit_se3(&pairs)
        } else {
            fit_yaw(&pairs)
        };
        let step = (next.translation - m.translation).norm();
        m = next;
        if step < cfg.tolerance {
            break;
        }
    }
    Some(m)
}

fn centroids(pairs: &[(Vec3, Vec3)]) -> (Vec3, Vec3) {
    let n = pairs.len() as f64;
    let (a, b) = pairs
        .iter()
        .fold((Vec3::zeros(), Vec3::zeros()), |(a, b), (p, q)| {
            (a + p, b + q)
        });
    (a / n, b / n)
}

/// Least-squares rotation about z plus translation.
fn fit_yaw(pairs: &[(Vec3, Vec3)]) -> RigidMotion {
    let (cs, ct) = centroids(pairs);
    let (mut sin, mut cos) = (0.0, 0.0);
    for (p, q) in pairs {
        let (a, b) = (p - cs, q - ct);
        sin += a.x * b.y - a.y * b.x;
        cos += a.x * b.x + a.y * b.y;
    }
    let yaw = if sin == 0.0 && cos == 0.0 {
        0.0
    } else {
        sin.atan2(cos)
    };
    let r = Rotation3::from_axis_angle(&Vec3::z_axis(), yaw);
    RigidMotion {
        rotation: r,
        translation: ct - r * cs,
    }
}

/// Least-squares rotation and translation (Kabsch).
fn fit_se3(pairs: &[(Vec3, Vec3)]) -> RigidMotion {
    let (cs, ct) = centroids(pairs);
    let mut h = Matrix3::zeros();
    for (p, q) in pairs {
        h += (p - cs) * (q - ct).transpose();
    }
    let svd = h.svd(true, true);
    let (u, v_t) = (svd.u.expect("requested"), svd.v_t.expect("requested"));
    let mut d = Matrix3::identity();
    if (v_t.transpose() * u.transpose()).determinant() < 0.0 {
        d[(2, 2)] = -1.0;
    }
    let r = Rotation3::from_matrix_unchecked(v_t.transpose() * d * u.transpose());
    RigidMotion {
        rotation: r,
        translation: ct - r * cs,
    }
}

#[cfg(test)]
mod tests {
    use super::super::test_util::*;
    use super::super::LabeledFrame;
    use super::*;
    use proptest::prelude::*;

    fn run_with(cur: &[Vec3], cl: &[i32], next: &[Vec3], nl: &[i32], cfg: &IcpConfig) -> FlowField {
        let (fc, lc, fnx, ln) = (frame(cur), labels(cl), frame(next), labels(nl));
        estimate_cluster_icp_with(
            &FlowInput::new(
                None,
                LabeledFrame::new(&fc, &lc),
                LabeledFrame::new(&fnx, &ln),
            ),
            cfg,
        )
        .unwrap()
    }

    fn run(cur: &[Vec3], cl: &[i32], next: &[Vec3], nl: &[i32]) -> FlowField {
        run_with(cur, cl, next, nl, &IcpConfig::default())
    }

    #[test]
    fn isolated_translation() {
        let cur = blob(Vec3::new(10.0, 2.0, 1.0), 200, 1);
        let t = Vec3::new(2.0, 0.0, 0.0);
        let next: Vec<Vec3> = cur.iter().map(|p| p + t).collect();
        let f = run(&cur, &[0; 200], &next, &[0; 200]);
        for v in &f.vectors {
            assert!((v - t).norm() < 1e-3, "{v:?}");
        }
    }

    #[test]
    fn recovers_yaw() {
        let cur = blob(Vec3::new(10.0, 2.0, 1.0), 300, 2);
        let m = RigidMotion::from_yaw(0.1, Vec3::new(1.0, 0.5, 0.0));
        let next: Vec<Vec3> = cur.iter().map(|p| m.apply(p)).collect();
        let f = run(&cur, &[0; 300], &next, &[0; 300]);
        for (p, v) in cur.iter().zip(&f.vectors) {
            assert!((p + v - m.apply(p)).norm() < 1e-3);
        }
    }

    #[test]
    fn full_se3_recovers_roll() {
        let cur = blob(Vec3::new(10.0, 2.0, 1.0), 300, 3);
        let r = Rotation3::from_euler_angles(0.05, -0.03, 0.08);
        let m = RigidMotion {
            rotation: r,
            translation: Vec3::new(0.5, 0.2, 0.1),
        };
        let next: Vec<Vec3> = cur.iter().map(|p| m.apply(p)).collect();
        let cfg = IcpConfig {
            full_se3: true,
            ..IcpConfig::default()
        };
        let f = run_with(&cur, &[0; 300], &next, &[0; 300], &cfg);
        for (p, v) in cur.iter().zip(&f.vectors) {
            assert!((p + v - m.apply(p)).norm() < 1e-3);
        }
    }

    #[test]
    fn static_scene_gives_zero_flow() {
        let cur = blob(Vec3::zeros(), 50, 4);
        let f = run(&cur, &[-1; 50], &cur, &[-1; 50]);
        assert_eq!(f, FlowField::zeros(50));
    }

    #[test]
    fn empty_next_dynamic_set_gives_zero_flow() {
        let cur = blob(Vec3::zeros(), 50, 5);
        let f = run(&cur, &[0; 50], &cur, &[-1; 50]);
        assert_eq!(f, FlowField::zeros(50));
    }

    #[test]
    fn ungated_cluster_falls_back_to_upper_bound() {
        let cur = blob(Vec3::zeros(), 40, 6);
        let t = Vec3::new(8.0, 0.0, 0.0);
        let next: Vec<Vec3> = cur.iter().map(|p| p + t).collect();
        let f = run(&cur, &[0; 40], &next, &[0; 40]);
        let ub = {
            let (fc, lc, fnx, ln) = (
                frame(&cur),
                labels(&[0; 40]),
                frame(&next),
                labels(&[0; 40]),
            );
            estimate_upper_bound(&FlowInput::new(
                None,
                LabeledFrame::new(&fc, &lc),
                LabeledFrame::new(&fnx, &ln),
            ))
            .unwrap()
            .0
        };
        assert_eq!(f, ub);
    }

    #[test]
    fn two_clusters_associate_mutually() {
        let mut cur = blob(Vec3::new(0.0, 0.0, 1.0), 100, 7);
        cur.extend(blob(Vec3::new(0.0, 20.0, 1.0), 100, 8));
        let ta = Vec3::new(1.5, 0.0, 0.0);
        let tb = Vec3::new(0.0, -2.5, 0.0);
        let next: Vec<Vec3> = cur
            .iter()
            .enumerate()
            .map(|(i, p)| if i < 100 { p + ta } else { p + tb })
            .collect();
        let cl: Vec<i32> = (0..200).map(|i| (i >= 100) as i32).collect();
        let f = run(&cur, &cl, &next, &cl);
        assert!((f.vectors[0] - ta).norm() < 1e-3);
        assert!((f.vectors[150] - tb).norm() < 1e-3);
    }

    #[test]
    fn mutual_nearest_rejects_one_sided_pairs() {
        let src = [Vec3::zeros(), Vec3::new(1.0, 0.0, 0.0)];
        let dst = [Vec3::new(1.2, 0.0, 0.0)];
        assert_eq!(mutual_nearest(&src, &dst, 5.0), vec![None, Some(0)]);
        assert_eq!(mutual_nearest(&src, &dst, 0.1), vec![None, None]);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn equivariant_under_global_motion(
            seed in 0u64..500,
            yaw in -3.0..3.0f64,
            gx in -50.0..50.0f64,
            gy in -50.0..50.0f64,
            tx in -1.5..1.5f64,
            dyaw in -0.1..0.1f64,
        ) {
            let cur = blob(Vec3::new(10.0, 2.0, 1.0), 150, seed);
            let m = RigidMotion::from_yaw(dyaw, Vec3::new(tx, 0.3, 0.0));
            let next: Vec<Vec3> = cur.iter().map(|p| m.apply(p)).collect();
            let g = RigidMotion::from_yaw(yaw, Vec3::new(gx, gy, 0.7));
            let gc: Vec<Vec3> = cur.iter().map(|p| g.apply(p)).collect();
            let gn: Vec<Vec3> = next.iter().map(|p| g.apply(p)).collect();
            let a = run(&cur, &[0; 150], &next, &[0; 150]);
            let b = run(&gc, &[0; 150], &gn, &[0; 150]);
            for (va, vb) in a.vectors.iter().zip(&b.vectors) {
                prop_assert!((g.apply_vector(va) - vb).norm() < 1e-6);
            }
        }
    }
}
