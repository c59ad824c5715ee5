//! Ego-motion compensation and flow-driven compensation of moving objects.
//!
//! Ego compensation moves every point into the ego frame at the target time,
//! which removes the smear of the static world. Moving objects stay
//! distorted. [`himo_compensate`] removes that residual: each point's flow
//! over one scan interval gives its velocity `V = F / T`, and the point is
//! pushed forward by `D = V * ΔT`, where `ΔT` is the time left until the
//! latest capture in the frame.

use log::warn;
use serde::{Deserialize, Serialize};

use crate::error::{HimoError, Result};
use crate::geometry::{Frame, TimedPoint, Vec3};

/// Per-point displacement to the next frame, index-aligned with a frame.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct FlowField {
    pub vectors: Vec<Vec3>,
    /// `false` where the estimator abstained; such entries act as zero flow.
    pub valid: Vec<bool>,
}

impl FlowField {
    pub fn zeros(n: usize) -> Self {
        FlowField {
            vectors: vec![Vec3::zeros(); n],
            valid: vec![true; n],
        }
    }

    pub fn from_vectors(vectors: Vec<Vec3>) -> Self {
        let valid = vec![true; vectors.len()];
        FlowField { vectors, valid }
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    /// Flow of point `i`, zero when invalid.
    #[inline]
    pub fn effective(&self, i: usize) -> Vec3 {
        if self.valid[i] {
            self.vectors[i]
        } else {
            Vec3::zeros()
        }
    }

    pub fn negated(&self) -> Self {
        FlowField {
            vectors: self.vectors.iter().map(|v| -v).collect(),
            valid: self.valid.clone(),
        }
    }
}

/// Per-point correction `D(p)` that was (or will be) added to each position.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct DistortionField {
    pub vectors: Vec<Vec3>,
}

/// Time the compensated frame refers to.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CompensationTarget {
    /// Latest capture in the frame.
    #[default]
    ScanEnd,
    /// Half a scan interval after scan start.
    MidScan,
}

impl CompensationTarget {
    fn sweep_fraction(self) -> f64 {
        match self {
            CompensationTarget::ScanEnd => 1.0,
            CompensationTarget::MidScan => 0.5,
        }
    }
}

impl std::str::FromStr for CompensationTarget {
    type Err = HimoError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "scan-end" => Ok(Self::ScanEnd),
            "mid-scan" => Ok(Self::MidScan),
            other => Err(HimoError::InvalidArgument(format!(
                "unknown compensation target {other:?}"
            ))),
        }
    }
}

pub fn ego_compensate(frame: &Frame) -> Frame {
    ego_compensate_to(frame, CompensationTarget::ScanEnd)
}

/// Moves each point from the ego pose at its capture time into the ego
/// frame at the target time. Timestamps are preserved.
pub fn ego_compensate_to(frame: &Frame, target: CompensationTarget) -> Frame {
    let Some(ego) = frame.ego else {
        warn!(
            "frame {} has no ego trajectory; left uncompensated",
            frame.frame_index
        );
        return frame.clone();
    };
    let mut out = frame.clone();
    if ego.start == ego.end {
        return out;
    }
    let to = target.sweep_fraction();
    for p in out.points.iter_mut() {
        let m = ego.relative(p.t / frame.scan_duration, to);
        p.position = m.apply(&p.position);
    }
    out
}

/// Time from the capture of `point` to the latest capture in `frame`.
pub fn delta_t(point: &TimedPoint, frame: &Frame) -> f64 {
    frame.last_timestamp() - point.t
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct HimoConfig {
    pub target: CompensationTarget,
    /// Time spanned by the flow; defaults to the frame's scan duration.
    pub flow_interval: Option<f64>,
}

pub fn himo_compensate(frame: &Frame, flow: &FlowField) -> Result<(Frame, DistortionField)> {
    himo_compensate_with(frame, flow, &HimoConfig::default())
}

/// Adds `D(p) = F(p) / interval * ΔT(p)` to every point of an ego-compensated frame.
pub fn himo_compensate_with(
    frame: &Frame,
    flow: &FlowField,
    cfg: &HimoConfig,
) -> Result<(Frame, DistortionField)> {
    if flow.len() != frame.len() || flow.valid.len() != flow.len() {
        return Err(HimoError::FlowFrameMismatch {
            flow: flow.len(),
            frame: frame.len(),
        });
    }
    let interval = cfg.flow_interval.unwrap_or(frame.scan_duration);
    if !(interval > 0.0) {
        return Err(HimoError::InvalidArgument(format!(
            "flow interval must be positive, got {interval}"
        )));
    }
    let target_time = match cfg.target {
        CompensationTarget::ScanEnd => frame.last_timestamp(),
        CompensationTarget::MidScan => 0.5 * frame.scan_duration,
    };
    let mut out = frame.clone();
    let mut field = Vec::with_capacity(frame.len());
    for (i, p) in out.points.iter_mut().enumerate() {
        let dt = target_time - p.t;
        let d = if flow.valid[i] && dt != 0.0 {
            flow.vectors[i] / interval * dt
        } else {
            Vec3::zeros()
        };
        p.position += d;
        field.push(d);
    }
    Ok((out, DistortionField { vectors: field }))
}
