use std::io::Write;

use log::debug;
use serde::{Deserialize, Serialize};

use super::{estimate_upper_bound, FlowInput, LabeledFrame};
use crate::comp::FlowField;
use crate::error::{HimoError, Result};
use crate::geometry::{chamfer, Vec3};

/// The four self-supervised loss terms of a flow field and their sum.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    /// Symmetric Chamfer over all non-ground points (m).
    pub l_cham: f64,
    /// Same, restricted to dynamic points (m).
    pub l_dcham: f64,
    /// Mean squared flow of static points (m²).
    pub l_static: f64,
    /// Mean squared deviation of dynamic flow from the cluster's anchor flow (m²).
    pub l_dcls: f64,
    pub total: f64,
}

impl LossReport {
    fn new(l_cham: f64, l_dcham: f64, l_static: f64, l_dcls: f64) -> Self {
        LossReport {
            l_cham,
            l_dcham,
            l_static,
            l_dcls,
            total: l_cham + l_dcham + l_static + l_dcls,
        }
    }
}

/// Chamfer distance, or zero when either side is empty.
fn chamfer_or_zero(a: &[Vec3], b: &[Vec3], what: &str) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        debug!("{what}: empty point set, term set to 0");
        return Ok(0.0);
    }
    chamfer(a, b)
}

/// Non-ground points of `f`, optionally only the dynamic ones.
fn points(f: &LabeledFrame, dynamic_only: bool) -> Vec<Vec3> {
    f.frame
        .points
        .iter()
        .zip(&f.labels.dynamic)
        .filter(|(p, &d)| !p.ground && (d || !dynamic_only))
        .map(|(p, _)| p.position)
        .collect()
}

/// Scores `flow` on the current frame against co-registered previous and
/// next frames. Ground points are ignored throughout.
pub fn loss_report(input: &FlowInput, flow: &FlowField) -> Result<LossReport> {
    input.validate()?;
    let cur = input.cur;
    if flow.len() != cur.frame.len() || flow.valid.len() != flow.len() {
        return Err(HimoError::FlowFrameMismatch {
            flow: flow.len(),
            frame: cur.frame.len(),
        });
    }
    let prev = input
        .prev
        .ok_or_else(|| HimoError::InsufficientContext("loss needs a previous frame".into()))?;

    let warp = |dynamic_only: bool, sign: f64| -> Vec<Vec3> {
        (0..cur.frame.len())
            .filter(|&i| !cur.frame.points[i].ground && (cur.labels.dynamic[i] || !dynamic_only))
            .map(|i| cur.frame.points[i].position + sign * flow.effective(i))
            .collect()
    };
    let l_cham =
        chamfer_or_zero(
            &warp(false, 1.0),
            &points(&input.next, false),
            "l_cham forward",
        )? + chamfer_or_zero(&warp(false, -1.0), &points(&prev, false), "l_cham backward")?;
    let l_dcham =
        chamfer_or_zero(
            &warp(true, 1.0),
            &points(&input.next, true),
            "l_dcham forward",
        )? + chamfer_or_zero(&warp(true, -1.0), &points(&prev, true), "l_dcham backward")?;

    let (mut s_sum, mut s_n) = (0.0, 0usize);
    for i in 0..cur.frame.len() {
        if !cur.frame.points[i].ground && !cur.labels.dynamic[i] {
            s_sum += flow.effective(i).norm_squared();
            s_n += 1;
        }
    }
    let l_static = if s_n > 0 { s_sum / s_n as f64 } else { 0.0 };

    let l_dcls = match estimate_upper_bound(input) {
        Ok((anchor_flow, _)) => {
            let (idx, _) = cur.dynamic_points();
            if idx.is_empty() {
                debug!("l_dcls: no dynamic points, term set to 0");
                0.0
            } else {
                idx.iter()
                    .map(|&i| (flow.effective(i) - anchor_flow.vectors[i]).norm_squared())
                    .sum::<f64>()
                    / idx.len() as f64
            }
        }
        Err(HimoError::NoDynamicTarget) => {
            debug!("l_dcls: next frame has no dynamic points, term set to 0");
            0.0
        }
        Err(e) => return Err(e),
    };
    Ok(LossReport::new(l_cham, l_dcham, l_static, l_dcls))
}

/// Writes one `frame,l_cham,l_dcham,l_static,l_dcls,total` row per report.
pub fn write_loss_csv<W: Write>(out: W, rows: &[(u64, LossReport)]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.serialize(("frame", "l_cham", "l_dcham", "l_static", "l_dcls", "total"))
        .map_err(|e| HimoError::Format(e.to_string()))?;
    for &(frame, r) in rows {
        w.serialize((frame, r.l_cham, r.l_dcham, r.l_static, r.l_dcls, r.total))
            .map_err(|e| HimoError::Format(e.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::super::test_util::*;
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};

    fn brute_cd(a: &[Vec3], b: &[Vec3]) -> f64 {
        if a.is_empty() || b.is_empty() {
            return 0.0;
        }
        let one = |x: &[Vec3], y: &[Vec3]| {
            x.iter()
                .map(|p| {
                    y.iter()
                        .map(|q| (p - q).norm())
                        .fold(f64::INFINITY, f64::min)
                })
                .sum::<f64>()
                / x.len() as f64
        };
        one(a, b) + one(b, a)
    }

    struct Case {
        frames: [Vec<Vec3>; 3],
        ground: [Vec<bool>; 3],
        labels: [Vec<i32>; 3],
        flow: Vec<Vec3>,
    }

    fn random_case(seed: u64) -> Case {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mk = |rng: &mut rand_chacha::ChaCha8Rng| {
            let n = rng.random_range(1..40);
            let pts: Vec<Vec3> = (0..n)
                .map(|_| {
                    Vec3::new(
                        rng.random_range(-5.0..5.0),
                        rng.random_range(-5.0..5.0),
                        rng.random_range(0.0..2.0),
                    )
                })
                .collect();
            let ground: Vec<bool> = (0..n).map(|_| rng.random_bool(0.15)).collect();
            let labels: Vec<i32> = (0..n)
                .map(|_| {
                    if rng.random_bool(0.5) {
                        rng.random_range(0..3)
                    } else {
                        -1
                    }
                })
                .collect();
            (pts, ground, labels)
        };
        let (p0, g0, l0) = mk(&mut rng);
        let (p1, g1, l1) = mk(&mut rng);
        let (p2, g2, l2) = mk(&mut rng);
        let flow = (0..p1.len())
            .map(|_| {
                Vec3::new(
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-0.2..0.2),
                )
            })
            .collect();
        Case {
            frames: [p0, p1, p2],
            ground: [g0, g1, g2],
            labels: [l0, l1, l2],
            flow,
        }
    }

    /// Every term evaluated by exhaustive search, with the anchor flow
    /// recomputed from its definition.
    fn brute(c: &Case) -> LossReport {
        let keep = |k: usize, dyn_only: bool| -> Vec<usize> {
            (0..c.frames[k].len())
                .filter(|&i| !c.ground[k][i] && (!dyn_only || c.labels[k][i] >= 0))
                .collect()
        };
        let pts = |k: usize, dyn_only: bool| -> Vec<Vec3> {
            keep(k, dyn_only).iter().map(|&i| c.frames[k][i]).collect()
        };
        let warped = |dyn_only: bool, s: f64| -> Vec<Vec3> {
            keep(1, dyn_only)
                .iter()
                .map(|&i| c.frames[1][i] + s * c.flow[i])
                .collect()
        };
        let l_cham = brute_cd(&warped(false, 1.0), &pts(2, false))
            + brute_cd(&warped(false, -1.0), &pts(0, false));
        let l_dcham = brute_cd(&warped(true, 1.0), &pts(2, true))
            + brute_cd(&warped(true, -1.0), &pts(0, true));
        let stat: Vec<usize> = (0..c.frames[1].len())
            .filter(|&i| !c.ground[1][i] && c.labels[1][i] < 0)
            .collect();
        let l_static = if stat.is_empty() {
            0.0
        } else {
            stat.iter().map(|&i| c.flow[i].norm_squared()).sum::<f64>() / stat.len() as f64
        };
        let dynamic = keep(1, true);
        let targets = pts(2, true);
        let l_dcls = if dynamic.is_empty() || targets.is_empty() {
            0.0
        } else {
            let mut sum = 0.0;
            for &i in &dynamic {
                let cluster: Vec<usize> = dynamic
                    .iter()
                    .copied()
                    .filter(|&j| c.labels[1][j] == c.labels[1][i])
                    .collect();
                let (mut best, mut anchor_flow) = (f64::NEG_INFINITY, Vec3::zeros());
                for &j in &cluster {
                    let p = c.frames[1][j];
                    let (mut d, mut q_best) = (f64::INFINITY, Vec3::zeros());
                    for q in &targets {
                        if (p - q).norm() < d {
                            d = (p - q).norm();
                            q_best = *q;
                        }
                    }
                    if d > best {
                        best = d;
                        anchor_flow = q_best - p;
                    }
                }
                sum += (c.flow[i] - anchor_flow).norm_squared();
            }
            sum / dynamic.len() as f64
        };
        LossReport::new(l_cham, l_dcham, l_static, l_dcls)
    }

    fn fast(c: &Case) -> LossReport {
        let frames: Vec<crate::geometry::Frame> = (0..3)
            .map(|k| {
                let mut f = frame(&c.frames[k]);
                for (p, &g) in f.points.iter_mut().zip(&c.ground[k]) {
                    p.ground = g;
                }
                f
            })
            .collect();
        let labels: Vec<_> = c.labels.iter().map(|l| labels(l)).collect();
        let input = FlowInput::new(
            Some(LabeledFrame::new(&frames[0], &labels[0])),
            LabeledFrame::new(&frames[1], &labels[1]),
            LabeledFrame::new(&frames[2], &labels[2]),
        );
        loss_report(&input, &FlowField::from_vectors(c.flow.clone())).unwrap()
    }

    proptest! {
        #[test]
        fn matches_brute_force(seed in any::<u64>()) {
            let c = random_case(seed);
            let (a, b) = (fast(&c), brute(&c));
            for (x, y) in [(a.l_cham, b.l_cham), (a.l_dcham, b.l_dcham), (a.l_static, b.l_static), (a.l_dcls, b.l_dcls), (a.total, b.total)] {
                prop_assert!((x - y).abs() <= 1e-9, "{a:?} vs {b:?}");
            }
            prop_assert_eq!(a.total, a.l_cham + a.l_dcham + a.l_static + a.l_dcls);
        }
    }

    #[test]
    fn static_identical_frames_zero_flow() {
        let pts = blob(Vec3::zeros(), 30, 1);
        let c = Case {
            frames: [pts.clone(), pts.clone(), pts.clone()],
            ground: [vec![false; 30], vec![false; 30], vec![false; 30]],
            labels: [vec![-1; 30], vec![-1; 30], vec![-1; 30]],
            flow: vec![Vec3::zeros(); 30],
        };
        assert_eq!(fast(&c), LossReport::default());
    }

    #[test]
    fn uniform_anchor_flow_has_zero_dcls() {
        let mut c = random_case(7);
        let n = c.frames[1].len();
        c.labels[2] = vec![0; c.frames[2].len()];
        c.ground[2] = vec![false; c.frames[2].len()];
        // Replace the flow with the anchor flow itself.
        c.flow = vec![Vec3::zeros(); n];
        let frames = [frame(&c.frames[1]), frame(&c.frames[2])];
        let l = [labels(&c.labels[1]), labels(&c.labels[2])];
        let (anchor, _) = estimate_upper_bound(&FlowInput::new(
            None,
            LabeledFrame::new(&frames[0], &l[0]),
            LabeledFrame::new(&frames[1], &l[1]),
        ))
        .unwrap();
        c.ground[1] = vec![false; n];
        c.flow = anchor.vectors;
        assert_eq!(fast(&c).l_dcls, 0.0);
    }

    #[test]
    fn csv_row() {
        let mut buf = Vec::new();
        write_loss_csv(&mut buf, &[(3, LossReport::new(1.0, 0.5, 0.25, 0.0))]).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "frame,l_cham,l_dcham,l_static,l_dcls,total\n3,1.0,0.5,0.25,0.0,1.75\n"
        );
    }
}
