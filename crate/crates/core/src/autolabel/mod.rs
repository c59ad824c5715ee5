//! Unsupervised dynamic labeling. Two classifiers vote per point: free-space
//! carving over a window of frames, and a nearest-neighbour distance test
//! against the next frame. Votes are fused per cluster, so each cluster is
//! labeled as a whole.

mod cluster;
mod freespace;

use std::collections::HashSet;
use std::io::Write;
use std::ops::Range;

use log::debug;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{HimoError, Result};
use crate::geometry::{Frame, Vec3};
use crate::nn::NnIndex;

pub use cluster::{cluster, cluster_with, dbscan, ClusterConfig, ClusterSet};
pub use freespace::{
    dynamic_freespace, dynamic_freespace_batch, window_range, FreeSpaceConfig, FreeSpaceGrid,
    VoxelKey, MAX_SCANS,
};

/// Per-point dynamic labels; constant within every cluster.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct DynamicLabels {
    pub dynamic: Vec<bool>,
    pub cluster: Vec<i32>,
    /// `(r1, r2)` per cluster: free-space and nearest-neighbour vote fractions.
    pub ratios: Vec<(f64, f64)>,
}

impl DynamicLabels {
    /// All points static and unclustered.
    pub fn all_static(n: usize) -> Self {
        DynamicLabels {
            dynamic: vec![false; n],
            cluster: vec![-1; n],
            ratios: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.dynamic.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dynamic.is_empty()
    }

    pub fn dynamic_indices(&self) -> Vec<usize> {
        (0..self.dynamic.len())
            .filter(|&i| self.dynamic[i])
            .collect()
    }

    /// Member lists of the clusters labeled dynamic, by cluster id.
    pub fn dynamic_clusters(&self) -> Vec<(i32, Vec<usize>)> {
        let n = self.ratios.len();
        let mut members = vec![Vec::new(); n];
        for (i, &c) in self.cluster.iter().enumerate() {
            if c >= 0 && self.dynamic[i] {
                members[c as usize].push(i);
            }
        }
        members
            .into_iter()
            .enumerate()
            .filter(|(_, m)| !m.is_empty())
            .map(|(c, m)| (c as i32, m))
            .collect()
    }

    /// Writes `index,dynamic,cluster` rows.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["index", "dynamic", "cluster"])
            .map_err(|e| HimoError::Format(e.to_string()))?;
        for (i, (&d, &c)) in self.dynamic.iter().zip(&self.cluster).enumerate() {
            w.write_record([i.to_string(), (d as u8).to_string(), c.to_string()])
                .map_err(|e| HimoError::Format(e.to_string()))?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Non-ground points of `frame_t` farther than `tau_d` from every non-ground
/// point of `frame_t1`. Both frames must be expressed in one coordinate frame.
pub fn dynamic_nn(frame_t: &Frame, frame_t1: &Frame, tau_d: f64) -> Result<Vec<usize>> {
    let targets: Vec<Vec3> = frame_t1
        .points
        .iter()
        .filter(|p| !p.ground)
        .map(|p| p.position)
        .collect();
    if targets.is_empty() {
        return Err(HimoError::EmptyPointSet);
    }
    let index = NnIndex::new(&targets);
    let tau2 = tau_d * tau_d;
    Ok(frame_t
        .non_ground_indices()
        .into_par_iter()
        .filter(|&i| {
            let (d2, _) = index
                .nearest_squared(&frame_t.points[i].position)
                .expect("nonempty");
            d2 > tau2
        })
        .collect())
}

/// Cluster-wise fusion: a cluster is dynamic iff `min(r1, r2) ≥ tau1` and
/// `max(r1, r2) ≥ tau2`, where `r1`, `r2` are the fractions of its members in
/// `p_dufo` and `p_nnd`. Unclustered points are static.
pub fn reassign(
    clusters: &ClusterSet,
    p_dufo: &[usize],
    p_nnd: &[usize],
    tau1: f64,
    tau2: f64,
) -> DynamicLabels {
    let dufo: HashSet<usize> = p_dufo.iter().copied().collect();
    let nnd: HashSet<usize> = p_nnd.iter().copied().collect();
    let mut labels = DynamicLabels {
        dynamic: vec![false; clusters.assignment.len()],
        cluster: clusters.assignment.clone(),
        ratios: Vec::with_capacity(clusters.len()),
    };
    for members in &clusters.clusters {
        let n = members.len().max(1) as f64;
        let r1 = members.iter().filter(|i| dufo.contains(i)).count() as f64 / n;
        let r2 = members.iter().filter(|i| nnd.contains(i)).count() as f64 / n;
        labels.ratios.push((r1, r2));
        if is_dynamic(r1, r2, tau1, tau2) {
            for &i in members {
                labels.dynamic[i] = true;
            }
        }
    }
    let orphans = dufo
        .union(&nnd)
        .filter(|&&i| clusters.assignment.get(i).is_some_and(|&c| c < 0))
        .count();
    if orphans > 0 {
        debug!("{orphans} unclustered points voted dynamic, labeled static");
    }
    labels
}

#[inline]
pub fn is_dynamic(r1: f64, r2: f64, tau1: f64, tau2: f64) -> bool {
    r1.min(r2) >= tau1 && r1.max(r2) >= tau2
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AutoLabelConfig {
    pub tau_d: f64,
    pub tau1: f64,
    pub tau2: f64,
    pub cluster: ClusterConfig,
    pub freespace: FreeSpaceConfig,
}

impl Default for AutoLabelConfig {
    fn default() -> Self {
        AutoLabelConfig {
            tau_d: 0.25,
            tau1: 0.3,
            tau2: 0.8,
            cluster: ClusterConfig::default(),
            freespace: FreeSpaceConfig::default(),
        }
    }
}

impl AutoLabelConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.tau_d > 0.0
            && 0.0 <= self.tau1
            && self.tau1 <= self.tau2
            && self.tau2 <= 1.0
            && self.freespace.voxel_size > 0.0
            && self.freespace.window >= 2
            && self.cluster.radius > 0.0;
        if ok {
            Ok(())
        } else {
            Err(HimoError::InvalidArgument(format!(
                "auto-label thresholds out of range: {self:?}"
            )))
        }
    }
}

/// Labels `frames[target]`. Frames must be ego-compensated and ground-flagged.
/// The nearest-neighbour test compares against the next frame, or the
/// previous one for the last frame of the sequence.
pub fn label_frame(
    frames: &[Frame],
    target: usize,
    cfg: &AutoLabelConfig,
) -> Result<DynamicLabels> {
    let mut out = label_frames(frames, &[target], cfg)?;
    Ok(out.pop().expect("one target"))
}

/// [`label_frame`] for each of `targets`; free-space carving of frames shared
/// by several windows is done once.
pub fn label_frames(
    frames: &[Frame],
    targets: &[usize],
    cfg: &AutoLabelConfig,
) -> Result<Vec<DynamicLabels>> {
    if frames.len() < 2 {
        return Err(HimoError::InsufficientContext(
            "labeling needs at least two frames".into(),
        ));
    }
    if let Some(t) = targets.iter().find(|&&t| t >= frames.len()) {
        return Err(HimoError::InvalidArgument(format!(
            "target {t} outside sequence of {}",
            frames.len()
        )));
    }
    let mut groups: Vec<Vec<(usize, Range<usize>)>> = Vec::new();
    for &t in targets {
        let w = window_range(frames.len(), t, cfg.freespace.window);
        match groups.last_mut() {
            Some(g)
                if g.iter()
                    .all(|(_, x)| w.end.max(x.end) - w.start.min(x.start) <= MAX_SCANS) =>
            {
                g.push((t, w))
            }
            _ => groups.push(vec![(t, w)]),
        }
    }
    let mut p_dufo = Vec::with_capacity(targets.len());
    for g in &groups {
        p_dufo.extend(dynamic_freespace_batch(frames, g, &cfg.freespace)?);
    }
    targets
        .par_iter()
        .zip(p_dufo)
        .map(|(&target, p_dufo)| {
            let cur = &frames[target];
            let clusters = cluster_with(cur, &cfg.cluster);
            let other = if target + 1 < frames.len() {
                target + 1
            } else {
                target - 1
            };
            let other = frames[other].expressed_in(cur)?;
            let p_nnd = match dynamic_nn(cur, &other, cfg.tau_d) {
                Ok(p) => p,
                Err(HimoError::EmptyPointSet) => Vec::new(),
                Err(e) => return Err(e),
            };
            Ok(reassign(&clusters, &p_dufo, &p_nnd, cfg.tau1, cfg.tau2))
        })
        .collect()
}

/// Labels every frame of a sequence.
pub fn label_sequence(frames: &[Frame], cfg: &AutoLabelConfig) -> Result<Vec<DynamicLabels>> {
    cfg.validate()?;
    let all: Vec<usize> = (0..frames.len()).collect();
    label_frames(frames, &all, cfg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::TimedPoint;

    fn set(assign: &[i32]) -> ClusterSet {
        ClusterSet::from_assignment(assign.to_vec())
    }

    #[test]
    fn fusion_rule() {
        assert!(is_dynamic(0.9, 0.5, 0.3, 0.8));
        assert!(!is_dynamic(0.2, 0.9, 0.3, 0.8));
        assert!(!is_dynamic(0.0, 0.0, 0.1, 0.1));
    }

    #[test]
    fn reassign_labels_whole_clusters() {
        // Cluster 0: 10 members, 9 in dufo and 5 in nnd.
        let mut assign = vec![0; 10];
        assign.extend(vec![1; 10]);
        assign.push(-1);
        let cs = set(&assign);
        let dufo: Vec<usize> = (0..9).chain(10..12).chain([20]).collect();
        let nnd: Vec<usize> = (0..5).chain([20]).collect();
        let l = reassign(&cs, &dufo, &nnd, 0.3, 0.8);
        assert!(l.dynamic[..10].iter().all(|&d| d));
        assert!(l.dynamic[10..].iter().all(|&d| !d));
        assert_eq!(l.ratios[0], (0.9, 0.5));
        assert_eq!(l.ratios[1], (0.2, 0.0));
    }

    #[test]
    fn empty_votes_are_static() {
        let l = reassign(&set(&[0, 0, 0]), &[], &[], 0.0, 0.0);
        // With zero thresholds an empty vote still passes min ≥ 0, max ≥ 0.
        assert!(l.dynamic.iter().all(|&d| d));
        let l = reassign(&set(&[0, 0, 0]), &[], &[], 0.3, 0.8);
        assert!(l.dynamic.iter().all(|&d| !d));
    }

    fn frame(points: &[Vec3]) -> Frame {
        Frame::new(
            points.iter().map(|p| TimedPoint::new(*p, 0.0, 0)).collect(),
            0.1,
        )
    }

    #[test]
    fn nn_identical_frames_vote_nothing() {
        let f = frame(&[Vec3::zeros(), Vec3::new(1.0, 0.0, 0.0)]);
        assert!(dynamic_nn(&f, &f, 0.1).unwrap().is_empty());
    }

    #[test]
    fn nn_displaced_point() {
        let a = frame(&[Vec3::zeros(), Vec3::new(5.0, 0.0, 0.0)]);
        let b = frame(&[Vec3::zeros(), Vec3::new(5.5, 0.0, 0.0)]);
        assert_eq!(dynamic_nn(&a, &b, 0.3).unwrap(), vec![1]);
    }

    #[test]
    fn nn_empty_next_frame_errors() {
        let a = frame(&[Vec3::zeros()]);
        assert!(matches!(
            dynamic_nn(&a, &frame(&[]), 0.3),
            Err(HimoError::EmptyPointSet)
        ));
    }

    #[test]
    fn labels_csv() {
        let l = reassign(&set(&[0, -1]), &[0], &[0], 0.3, 0.8);
        let mut buf = Vec::new();
        l.write_csv(&mut buf).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "index,dynamic,cluster\n0,1,0\n1,0,-1\n"
        );
    }

    #[test]
    fn batched_labels_match_single_frames() {
        use crate::comp::ego_compensate;
        use crate::ground::remove_ground;
        use crate::sim::{scan, scenarios::speed_sweep_scene, LidarRig};
        let rig = LidarRig::preset("dual-180").unwrap();
        let frames: Vec<Frame> = scan(&speed_sweep_scene(15.0, 7), &rig, 7, 0)
            .unwrap()
            .iter()
            .map(|f| remove_ground(&ego_compensate(f)))
            .collect();
        let mut cfg = AutoLabelConfig::default();
        cfg.freespace.sensor_origins = rig.sensor_origins();
        cfg.freespace.window = 3;
        let all = label_sequence(&frames, &cfg).unwrap();
        assert!(all.iter().any(|l| l.dynamic.iter().any(|&d| d)));
        for (k, l) in all.iter().enumerate() {
            assert_eq!(&label_frame(&frames, k, &cfg).unwrap(), l, "frame {k}");
        }
        let picked = label_frames(&frames, &[6, 2, 3], &cfg).unwrap();
        assert_eq!(picked, vec![all[6].clone(), all[2].clone(), all[3].clone()]);
    }
}
