//! End-to-end runs over frame sequences: preprocessing, labeling, flow
//! estimation, compensation and evaluation.

use log::{info, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autolabel::{label_frames, label_sequence, AutoLabelConfig, DynamicLabels};
use crate::comp::{
    ego_compensate_to, himo_compensate_with, CompensationTarget, DistortionField, FlowField,
    HimoConfig,
};
use crate::error::{HimoError, Result};
use crate::eval::{
    aggregate, clusters_from_tracks, evaluate, make_gt_to, MetricCluster, MetricsResult,
    Normalization, TrackedBox,
};
use crate::flow::{EstimatorKind, FlowEstimator, FlowInput, LabeledFrame};
use crate::geometry::Frame;
use crate::ground::remove_ground;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub estimator: EstimatorKind,
    pub autolabel: AutoLabelConfig,
    pub target: CompensationTarget,
}

/// Ego-compensates every frame to `target` and flags its ground points.
pub fn preprocess(raw: &[Frame], target: CompensationTarget) -> Vec<Frame> {
    raw.par_iter()
        .map(|f| remove_ground(&ego_compensate_to(f, target)))
        .collect()
}

/// One compensated frame and everything that went into it.
#[derive(Clone, Debug, PartialEq)]
pub struct CompensatedFrame {
    pub frame: Frame,
    pub distortion: DistortionField,
    pub flow: FlowField,
    pub labels: DynamicLabels,
    /// Time spanned by `flow` (s).
    pub flow_interval: f64,
}

/// Time between the scan ends of two frames, from their indices.
fn inter_frame_time(a: &Frame, b: &Frame) -> f64 {
    let steps = b.frame_index.abs_diff(a.frame_index).max(1);
    steps as f64 * a.scan_duration
}

/// Flow of `frames[k]` over the interval to the next frame. The last frame
/// has no successor, so its flow is estimated towards the previous frame
/// and negated.
pub fn estimate_frame_flow(
    frames: &[Frame],
    labels: &[DynamicLabels],
    k: usize,
    kind: EstimatorKind,
    estimator: &dyn FlowEstimator,
) -> Result<(FlowField, f64)> {
    let cur = &frames[k];
    if !kind.needs_context() {
        let input = FlowInput::new(
            None,
            LabeledFrame::new(cur, &labels[k]),
            LabeledFrame::new(cur, &labels[k]),
        );
        return Ok((estimator.estimate(&input)?, cur.scan_duration));
    }
    if frames.len() < 2 {
        return Err(HimoError::InsufficientContext(format!(
            "estimator {} needs at least two frames",
            kind.as_str()
        )));
    }
    let moved = |j: usize| frames[j].expressed_in(cur);
    if k + 1 < frames.len() {
        let next = moved(k + 1)?;
        let prev = if k > 0 { Some(moved(k - 1)?) } else { None };
        let input = FlowInput::new(
            prev.as_ref()
                .zip(k.checked_sub(1))
                .map(|(f, j)| LabeledFrame::new(f, &labels[j])),
            LabeledFrame::new(cur, &labels[k]),
            LabeledFrame::new(&next, &labels[k + 1]),
        );
        Ok((
            estimator.estimate(&input)?,
            inter_frame_time(cur, &frames[k + 1]),
        ))
    } else {
        let before = moved(k - 1)?;
        let input = FlowInput::new(
            None,
            LabeledFrame::new(cur, &labels[k]),
            LabeledFrame::new(&before, &labels[k - 1]),
        );
        let back = estimator.estimate(&input)?;
        Ok((back.negated(), inter_frame_time(&frames[k - 1], cur)))
    }
}

fn compensate_one(
    frames: &[Frame],
    labels: &[DynamicLabels],
    k: usize,
    cfg: &PipelineConfig,
    estimator: &dyn FlowEstimator,
) -> Result<CompensatedFrame> {
    let (flow, interval) = estimate_frame_flow(frames, labels, k, cfg.estimator, estimator)?;
    let himo = HimoConfig {
        target: cfg.target,
        flow_interval: Some(interval),
    };
    let (mut frame, distortion) = himo_compensate_with(&frames[k], &flow, &himo)?;
    frame.gt = None;
    Ok(CompensatedFrame {
        frame,
        distortion,
        flow,
        labels: labels[k].clone(),
        flow_interval: interval,
    })
}

fn labels_for(frames: &[Frame], cfg: &PipelineConfig) -> Result<Vec<DynamicLabels>> {
    if !cfg.estimator.needs_context() {
        return Ok(frames
            .iter()
            .map(|f| DynamicLabels::all_static(f.len()))
            .collect());
    }
    if frames.len() < 2 {
        return Err(HimoError::InsufficientContext(format!(
            "estimator {} needs at least two frames",
            cfg.estimator.as_str()
        )));
    }
    label_sequence(frames, &cfg.autolabel)
}

/// Runs the full pipeline on raw frames.
pub fn compensate_sequence(raw: &[Frame], cfg: &PipelineConfig) -> Result<Vec<CompensatedFrame>> {
    if raw.is_empty() {
        return Err(HimoError::EmptyPointSet);
    }
    let frames = preprocess(raw, cfg.target);
    let labels = labels_for(&frames, cfg)?;
    let estimator = cfg.estimator.build();
    (0..frames.len())
        .map(|k| compensate_one(&frames, &labels, k, cfg, estimator.as_ref()))
        .collect()
}

/// Compensates a single frame of an already preprocessed sequence, labeling
/// only what that frame needs.
pub fn compensate_frame(
    frames: &[Frame],
    k: usize,
    cfg: &PipelineConfig,
) -> Result<CompensatedFrame> {
    if k >= frames.len() {
        return Err(HimoError::InvalidArgument(format!(
            "frame {k} out of range"
        )));
    }
    let estimator = cfg.estimator.build();
    let mut labels: Vec<DynamicLabels> = frames
        .iter()
        .map(|f| DynamicLabels::all_static(f.len()))
        .collect();
    if cfg.estimator.needs_context() {
        if frames.len() < 2 {
            return Err(HimoError::InsufficientContext(
                "need at least two frames".into(),
            ));
        }
        cfg.autolabel.validate()?;
        let other = if k + 1 < frames.len() { k + 1 } else { k - 1 };
        // Only refinement looks at the previous frame's labels.
        let prev = if cfg.estimator == EstimatorKind::IcpRefine {
            k.checked_sub(1)
        } else {
            None
        };
        let mut needed: Vec<usize> = [prev, Some(k), Some(other)].into_iter().flatten().collect();
        needed.sort_unstable();
        needed.dedup();
        for (j, l) in needed
            .iter()
            .zip(label_frames(frames, &needed, &cfg.autolabel)?)
        {
            labels[*j] = l;
        }
    }
    compensate_one(frames, &labels, k, cfg, estimator.as_ref())
}

/// Reference frame and metric clusters for one raw simulated frame.
pub fn reference_frame(
    raw: &Frame,
    tracks: &[TrackedBox],
    target: CompensationTarget,
) -> (Frame, Vec<MetricCluster>) {
    let comp = remove_ground(&ego_compensate_to(raw, target));
    let clusters = clusters_from_tracks(&comp, tracks);
    (make_gt_to(&comp, tracks, target), clusters)
}

/// Per-frame metrics and their mean over the sequence.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SequenceMetrics {
    pub frames: Vec<(u64, MetricsResult)>,
    pub summary: MetricsResult,
}

/// Scores estimated frames against ground truth derived from raw frames and
/// their scan-end tracks. Frames without any tracked object are skipped.
pub fn evaluate_sequence(
    est: &[Frame],
    gt_raw: &[Frame],
    tracks: &[Vec<TrackedBox>],
    target: CompensationTarget,
    norm: Normalization,
) -> Result<SequenceMetrics> {
    if est.len() != gt_raw.len() || tracks.len() != gt_raw.len() {
        return Err(HimoError::CorrespondenceBroken(format!(
            "{} estimated frames, {} ground-truth frames, {} track lists",
            est.len(),
            gt_raw.len(),
            tracks.len()
        )));
    }
    let results: Vec<Option<(u64, MetricsResult)>> = est
        .par_iter()
        .zip(gt_raw)
        .zip(tracks)
        .map(|((e, g), t)| {
            let (reference, clusters) = reference_frame(g, t, target);
            match evaluate(e, &reference, &clusters, norm) {
                Ok(r) => Ok(Some((g.frame_index, r))),
                Err(HimoError::NothingToEvaluate) => {
                    info!("frame {}: no tracked object, skipped", g.frame_index);
                    Ok(None)
                }
                Err(err) => Err(err),
            }
        })
        .collect::<Result<_>>()?;
    let frames: Vec<(u64, MetricsResult)> = results.into_iter().flatten().collect();
    if frames.is_empty() {
        warn!("no frame contains a tracked object");
    }
    let summary = aggregate(&frames.iter().map(|(_, r)| r.clone()).collect::<Vec<_>>())?;
    Ok(SequenceMetrics { frames, summary })
}

/// Relative reduction of `after` with respect to `before`, in percent.
pub fn reduction_percent(before: f64, after: f64) -> f64 {
    if before == 0.0 {
        0.0
    } else {
        100.0 * (before - after) / before
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::{scan, LidarRig, SceneSpec};

    fn scene(speed: f64) -> SceneSpec {
        let mut s = crate::sim::scenarios::speed_sweep_scene(speed, 3);
        s.objects[0].center[1] = 12.0;
        s
    }

    #[test]
    fn oracle_pipeline_matches_ground_truth() {
        let rig = LidarRig::preset("dual-180").unwrap();
        let raw = scan(&scene(20.0), &rig, 3, 0).unwrap();
        let cfg = PipelineConfig {
            estimator: EstimatorKind::Oracle,
            ..PipelineConfig::default()
        };
        let out = compensate_sequence(&raw, &cfg).unwrap();
        for (o, r) in out.iter().zip(&raw) {
            let tracks = scene(20.0).tracks_at(r.frame_index, r.scan_duration);
            let (reference, _) = reference_frame(r, &tracks, CompensationTarget::ScanEnd);
            for (a, b) in o.frame.points.iter().zip(&reference.points) {
                assert!((a.position - b.position).norm() < 1e-6);
            }
            assert!(o.frame.gt.is_none());
        }
    }

    #[test]
    fn zero_estimator_is_ego_only() {
        let rig = LidarRig::preset("single-top").unwrap();
        let raw = scan(&scene(10.0), &rig, 2, 0).unwrap();
        let cfg = PipelineConfig {
            estimator: EstimatorKind::Zero,
            ..PipelineConfig::default()
        };
        let out = compensate_sequence(&raw, &cfg).unwrap();
        let pre = preprocess(&raw, CompensationTarget::ScanEnd);
        for (o, p) in out.iter().zip(&pre) {
            assert_eq!(o.frame.points, p.points);
        }
    }

    #[test]
    fn single_frame_needs_context() {
        let rig = LidarRig::preset("single-top").unwrap();
        let raw = scan(&scene(10.0), &rig, 2, 0).unwrap();
        let cfg = PipelineConfig::default();
        assert!(matches!(
            compensate_sequence(&raw[..1], &cfg),
            Err(HimoError::InsufficientContext(_))
        ));
        let oracle = PipelineConfig {
            estimator: EstimatorKind::Oracle,
            ..cfg
        };
        assert_eq!(compensate_sequence(&raw[..1], &oracle).unwrap().len(), 1);
    }

    #[test]
    fn dropped_frames_stretch_the_flow_interval() {
        let mut a = Frame::new(vec![], 0.1);
        let mut b = a.clone();
        a.frame_index = 3;
        b.frame_index = 5;
        assert!((inter_frame_time(&a, &b) - 0.2).abs() < 1e-15);
    }

    #[test]
    fn evaluation_length_mismatch() {
        let f = Frame::new(vec![], 0.1);
        let r = evaluate_sequence(
            std::slice::from_ref(&f),
            &[],
            &[],
            CompensationTarget::ScanEnd,
            Normalization::Literal,
        );
        assert!(matches!(r, Err(HimoError::CorrespondenceBroken(_))));
    }
}
