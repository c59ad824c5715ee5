use log::{debug, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::FlowInput;
use crate::comp::FlowField;
use crate::error::{HimoError, Result};
use crate::geometry::Vec3;
use crate::nn::NnIndex;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RefineConfig {
    /// Half-width of the coarse grid over the correction (m).
    pub grid_extent: f64,
    pub grid_step: f64,
    /// Coordinate descent stops after this step size (m).
    pub final_step: f64,
    /// Neighbouring-frame dynamic points farther than this from the warped
    /// cluster are ignored (m).
    pub selection_radius: f64,
    /// Number of best grid cells coordinate descent is started from.
    #[serde(default = "default_descent_starts")]
    pub descent_starts: usize,
}

fn default_descent_starts() -> usize {
    8
}

impl Default for RefineConfig {
    fn default() -> Self {
        RefineConfig {
            grid_extent: 1.0,
            grid_step: 0.1,
            final_step: 0.01,
            selection_radius: 2.0,
            descent_starts: default_descent_starts(),
        }
    }
}

/// Optimization record of one cluster.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RefineTrace {
    pub cluster: i32,
    pub delta: Vec3,
    /// Objective after each accepted step, starting with the initial value.
    pub history: Vec<f64>,
}

pub fn refine_symmetric_chamfer(input: &FlowInput, init: &FlowField) -> Result<FlowField> {
    refine_symmetric_chamfer_with(input, init, &RefineConfig::default())
}

pub fn refine_symmetric_chamfer_with(
    input: &FlowInput,
    init: &FlowField,
    cfg: &RefineConfig,
) -> Result<FlowField> {
    refine_traced(input, init, cfg).map(|(f, _)| f)
}

/// Adds to each dynamic cluster's flow the translation `δ` minimizing
/// `CD(C + F + δ, next) + CD(C - F - δ, prev)`, searched on a coarse grid in
/// the ground plane and then by coordinate descent in 3D from the best few
/// grid cells. The solution only ever changes to one with a lower objective.
pub fn refine_traced(
    input: &FlowInput,
    init: &FlowField,
    cfg: &RefineConfig,
) -> Result<(FlowField, Vec<RefineTrace>)> {
    input.validate()?;
    let cur = input.cur.frame;
    if init.len() != cur.len() {
        return Err(HimoError::FlowFrameMismatch {
            flow: init.len(),
            frame: cur.len(),
        });
    }
    let Some(prev) = input.prev else {
        warn!(
            "frame {}: no previous frame, refinement skipped",
            cur.frame_index
        );
        return Ok((init.clone(), Vec::new()));
    };
    let clusters = input.dynamic_clusters();
    let (_, next_pts) = input.next.dynamic_points();
    let (_, prev_pts) = prev.dynamic_points();
    if clusters.is_empty() || next_pts.is_empty() || prev_pts.is_empty() {
        debug!(
            "frame {}: empty dynamic set, refinement skipped",
            cur.frame_index
        );
        return Ok((init.clone(), Vec::new()));
    }

    let traces: Vec<Option<RefineTrace>> = clusters
        .par_iter()
        .map(|(c, members)| {
            let fwd: Vec<Vec3> = members
                .iter()
                .map(|&i| cur.points[i].position + init.effective(i))
                .collect();
            let bwd: Vec<Vec3> = members
                .iter()
                .map(|&i| cur.points[i].position - init.effective(i))
                .collect();
            let near_next = select(&next_pts, &fwd, cfg.selection_radius);
            let near_prev = select(&prev_pts, &bwd, cfg.selection_radius);
            let obj = Objective::new(fwd, bwd, near_next, near_prev)?;
            let (delta, history) = obj.minimize(cfg);
            Some(RefineTrace {
                cluster: *c,
                delta,
                history,
            })
        })
        .collect();

    let mut out = init.clone();
    let mut kept = Vec::new();
    for ((c, members), trace) in clusters.iter().zip(traces) {
        match trace {
            Some(t) => {
                for &i in members {
                    out.vectors[i] = init.effective(i) + t.delta;
                    out.valid[i] = true;
                }
                kept.push(t);
            }
            None => debug!("cluster {c}: nothing near it in a neighbouring frame"),
        }
    }
    Ok((out, kept))
}

/// Points of `pts` within `radius` of `warped`.
fn select(pts: &[Vec3], warped: &[Vec3], radius: f64) -> Vec<Vec3> {
    let index = NnIndex::new(warped);
    let r2 = radius * radius;
    pts.iter()
        .filter(|p| index.nearest_squared(p).is_some_and(|(d2, _)| d2 <= r2))
        .copied()
        .collect()
}

/// Symmetric Chamfer objective of one cluster as a function of `δ`.
struct Objective {
    fwd: Vec<Vec3>,
    bwd: Vec<Vec3>,
    fwd_index: NnIndex,
    bwd_index: NnIndex,
    next: Vec<Vec3>,
    prev: Vec<Vec3>,
    next_index: NnIndex,
    prev_index: NnIndex,
}

impl Objective {
    fn new(fwd: Vec<Vec3>, bwd: Vec<Vec3>, next: Vec<Vec3>, prev: Vec<Vec3>) -> Option<Self> {
        if next.is_empty() || prev.is_empty() || fwd.is_empty() {
            return None;
        }
        Some(Objective {
            fwd_index: NnIndex::new(&fwd),
            bwd_index: NnIndex::new(&bwd),
            next_index: NnIndex::new(&next),
            prev_index: NnIndex::new(&prev),
            fwd,
            bwd,
            next,
            prev,
        })
    }

    /// `CD(fwd + δ, next) + CD(bwd - δ, prev)`; shifting the query instead of
    /// the indexed set keeps every index fixed.
    fn eval(&self, d: &Vec3) -> f64 {
        self.eval_below(d, f64::INFINITY).expect("unbounded")
    }

    /// [`Objective::eval`] if it is below `bound`, else `None`. Gives up as
    /// soon as the partial sum proves the value cannot get below `bound`.
    fn eval_below(&self, d: &Vec3, bound: f64) -> Option<f64> {
        // Slack so that rounding never rejects a value `eval` would accept.
        let cutoff = bound * (1.0 + 1e-12);
        let terms: [(&[Vec3], Vec3, &NnIndex); 4] = [
            (&self.fwd, *d, &self.next_index),
            (&self.next, -d, &self.fwd_index),
            (&self.bwd, -d, &self.prev_index),
            (&self.prev, *d, &self.bwd_index),
        ];
        let mut total = 0.0;
        for (qs, shift, index) in terms {
            let n = qs.len() as f64;
            let mut sum = 0.0;
            for (k, q) in qs.iter().enumerate() {
                sum += index
                    .nearest_squared(&(q + shift))
                    .expect("nonempty")
                    .0
                    .sqrt();
                if k % 32 == 31 && total + sum / n > cutoff {
                    return None;
                }
            }
            total += sum / n;
        }
        (total < bound).then_some(total)
    }

    fn minimize(&self, cfg: &RefineConfig) -> (Vec3, Vec<f64>) {
        let mut best = Vec3::zeros();
        let mut best_j = self.eval(&best);
        let mut history = vec![best_j];

        // Lowest grid values, ascending.
        let keep = cfg.descent_starts.max(1);
        let mut starts: Vec<(f64, Vec3)> = Vec::with_capacity(keep + 1);
        let k = (cfg.grid_extent / cfg.grid_step).round() as i64;
        for ix in -k..=k {
            for iy in -k..=k {
                let d = Vec3::new(ix as f64 * cfg.grid_step, iy as f64 * cfg.grid_step, 0.0);
                let bound = if starts.len() < keep {
                    f64::INFINITY
                } else {
                    starts[keep - 1].0
                };
                if let Some(j) = self.eval_below(&d, bound) {
                    let at = starts.partition_point(|s| s.0 <= j);
                    starts.insert(at, (j, d));
                    starts.truncate(keep);
                }
            }
        }

        for (j, d) in starts {
            let (d, path) = self.descend(d, j, cfg);
            for j in path {
                if j < best_j {
                    (best_j, best) = (j, d);
                    history.push(best_j);
                }
            }
        }
        (best, history)
    }

    /// Coordinate descent from `d` with halving steps. Returns the end point
    /// and the objective after each accepted step, starting with `j`.
    fn descend(&self, mut d: Vec3, mut j: f64, cfg: &RefineConfig) -> (Vec3, Vec<f64>) {
        let mut path = vec![j];
        let mut step = cfg.grid_step / 2.0;
        loop {
            let mut improved = true;
            while improved {
                improved = false;
                for axis in 0..3 {
                    for sign in [1.0, -1.0] {
                        let mut c = d;
                        c[axis] += sign * step;
                        if let Some(jc) = self.eval_below(&c, j) {
                            (j, d) = (jc, c);
                            path.push(j);
                            improved = true;
                        }
                    }
                }
            }
            if step <= cfg.final_step * (1.0 + 1e-9) {
                break;
            }
            step = (step / 2.0).max(cfg.final_step);
        }
        (d, path)
    }
}

#[cfg(test)]
mod tests {
    use super::super::test_util::*;
    use super::super::LabeledFrame;
    use super::*;

    struct Scene {
        prev: Vec<Vec3>,
        cur: Vec<Vec3>,
        next: Vec<Vec3>,
        labels: Vec<i32>,
    }

    /// Two clusters moving at constant velocity through three frames.
    fn scene() -> (Scene, Vec<Vec3>) {
        let a = blob(Vec3::new(10.0, 0.0, 1.0), 150, 11);
        let b = blob(Vec3::new(0.0, 15.0, 1.0), 150, 12);
        let va = Vec3::new(1.5, 0.0, 0.0);
        let vb = Vec3::new(0.0, -2.0, 0.0);
        let shift = |s: f64| -> Vec<Vec3> {
            a.iter()
                .map(|p| p + s * va)
                .chain(b.iter().map(|p| p + s * vb))
                .collect()
        };
        let flow = (0..300).map(|i| if i < 150 { va } else { vb }).collect();
        let labels = (0..300).map(|i| (i >= 150) as i32).collect();
        (
            Scene {
                prev: shift(-1.0),
                cur: shift(0.0),
                next: shift(1.0),
                labels,
            },
            flow,
        )
    }

    fn refine(s: &Scene, init: &FlowField, with_prev: bool) -> (FlowField, Vec<RefineTrace>) {
        let (fp, fc, fnx, l) = (
            frame(&s.prev),
            frame(&s.cur),
            frame(&s.next),
            labels(&s.labels),
        );
        let prev = with_prev.then(|| LabeledFrame::new(&fp, &l));
        let input = FlowInput::new(
            prev,
            LabeledFrame::new(&fc, &l),
            LabeledFrame::new(&fnx, &l),
        );
        refine_traced(&input, init, &RefineConfig::default()).unwrap()
    }

    #[test]
    fn recovers_injected_bias() {
        let (s, truth) = scene();
        let mut init = truth.clone();
        for v in init.iter_mut().take(150) {
            *v += Vec3::new(0.5, 0.0, 0.0);
        }
        let (out, traces) = refine(&s, &FlowField::from_vectors(init), true);
        for (v, t) in out.vectors.iter().zip(&truth) {
            assert!((v - t).norm() <= 0.05, "{v:?} vs {t:?}");
        }
        for t in &traces {
            assert!(t.history.windows(2).all(|w| w[1] <= w[0]));
        }
    }

    #[test]
    fn oracle_is_a_fixed_point() {
        let (s, truth) = scene();
        let (out, traces) = refine(&s, &FlowField::from_vectors(truth.clone()), true);
        assert_eq!(out.vectors, truth);
        for t in &traces {
            assert!(t.history[0] - t.history.last().unwrap() <= 1e-6);
        }
    }

    #[test]
    fn missing_prev_returns_init() {
        let (s, truth) = scene();
        let mut init = truth;
        init[0] += Vec3::x();
        let init = FlowField::from_vectors(init);
        let (out, traces) = refine(&s, &init, false);
        assert_eq!(out, init);
        assert!(traces.is_empty());
    }

    #[test]
    fn static_scene_returns_init() {
        let (mut s, _) = scene();
        s.labels = vec![-1; 300];
        let init = FlowField::zeros(300);
        assert_eq!(refine(&s, &init, true).0, init);
    }
}
