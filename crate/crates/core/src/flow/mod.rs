//! Scene-flow estimators behind one interface, plus the self-supervised loss
//! terms used to score a flow field.
//!
//! All estimators work on co-registered frames: the previous and next frames
//! must already be expressed in the coordinates of the current frame (see
//! [`Frame::expressed_in`]). Flow is reported for the current frame only.

mod icp;
mod loss;
mod refine;
mod upper_bound;

use serde::{Deserialize, Serialize};

use crate::autolabel::DynamicLabels;
use crate::comp::FlowField;
use crate::error::{HimoError, Result};
use crate::geometry::{Frame, Vec3};

pub use icp::{estimate_cluster_icp, estimate_cluster_icp_with, icp_align, IcpConfig};
pub use loss::{loss_report, write_loss_csv, LossReport};
pub use refine::{
    refine_symmetric_chamfer, refine_symmetric_chamfer_with, refine_traced, RefineConfig,
    RefineTrace,
};
pub use upper_bound::{estimate_upper_bound, AnchorFlow, ClusterFlowSummary};

/// A frame together with its dynamic labels.
#[derive(Clone, Copy, Debug)]
pub struct LabeledFrame<'a> {
    pub frame: &'a Frame,
    pub labels: &'a DynamicLabels,
}

impl<'a> LabeledFrame<'a> {
    pub fn new(frame: &'a Frame, labels: &'a DynamicLabels) -> Self {
        LabeledFrame { frame, labels }
    }

    fn check(&self) -> Result<()> {
        if self.labels.len() != self.frame.len() || self.labels.cluster.len() != self.frame.len() {
            return Err(HimoError::CorrespondenceBroken(format!(
                "frame {} has {} points but {} labels",
                self.frame.frame_index,
                self.frame.len(),
                self.labels.len()
            )));
        }
        Ok(())
    }

    /// Positions of the non-ground points labeled dynamic, with their indices.
    pub fn dynamic_points(&self) -> (Vec<usize>, Vec<Vec3>) {
        let idx: Vec<usize> = (0..self.frame.len())
            .filter(|&i| self.labels.dynamic[i] && !self.frame.points[i].ground)
            .collect();
        let pts = idx.iter().map(|&i| self.frame.points[i].position).collect();
        (idx, pts)
    }
}

/// Three-frame context for flow estimation, co-registered to `cur`.
#[derive(Clone, Copy, Debug)]
pub struct FlowInput<'a> {
    pub prev: Option<LabeledFrame<'a>>,
    pub cur: LabeledFrame<'a>,
    pub next: LabeledFrame<'a>,
}

impl<'a> FlowInput<'a> {
    pub fn new(
        prev: Option<LabeledFrame<'a>>,
        cur: LabeledFrame<'a>,
        next: LabeledFrame<'a>,
    ) -> Self {
        FlowInput { prev, cur, next }
    }

    pub fn validate(&self) -> Result<()> {
        self.cur.check()?;
        self.next.check()?;
        if let Some(p) = &self.prev {
            p.check()?;
        }
        Ok(())
    }

    /// Dynamic clusters of the current frame with ground points removed.
    pub(crate) fn dynamic_clusters(&self) -> Vec<(i32, Vec<usize>)> {
        self.cur
            .labels
            .dynamic_clusters()
            .into_iter()
            .map(|(c, m)| {
                let m: Vec<usize> = m
                    .into_iter()
                    .filter(|&i| !self.cur.frame.points[i].ground)
                    .collect();
                (c, m)
            })
            .filter(|(_, m)| !m.is_empty())
            .collect()
    }
}

/// Maps a labeled frame triple to a flow field for the current frame.
/// Points labeled static receive exactly zero flow.
pub trait FlowEstimator: Send + Sync {
    fn name(&self) -> &'static str;
    fn estimate(&self, input: &FlowInput) -> Result<FlowField>;
}

/// Zero flow everywhere, which reduces compensation to ego motion only.
#[derive(Clone, Copy, Debug, Default)]
pub struct ZeroFlow;

impl FlowEstimator for ZeroFlow {
    fn name(&self) -> &'static str {
        "zero"
    }

    fn estimate(&self, input: &FlowInput) -> Result<FlowField> {
        Ok(FlowField::zeros(input.cur.frame.len()))
    }
}

/// Ground-truth flow of simulated frames. Labels are ignored.
#[derive(Clone, Copy, Debug, Default)]
pub struct OracleFlow;

impl FlowEstimator for OracleFlow {
    fn name(&self) -> &'static str {
        "oracle"
    }

    fn estimate(&self, input: &FlowInput) -> Result<FlowField> {
        let gt = input
            .cur
            .frame
            .gt
            .as_ref()
            .ok_or(HimoError::NoGroundTruth)?;
        Ok(FlowField::from_vectors(gt.flow.clone()))
    }
}

#[derive(Clone, Copy, Debug, Default)]
pub struct UpperBoundFlow;

impl FlowEstimator for UpperBoundFlow {
    fn name(&self) -> &'static str {
        "upper-bound"
    }

    fn estimate(&self, input: &FlowInput) -> Result<FlowField> {
        estimate_upper_bound(input).map(|(f, _)| f)
    }
}

/// Cluster ICP, optionally followed by symmetric-Chamfer refinement.
#[derive(Clone, Debug, Default)]
pub struct ClusterIcpFlow {
    pub icp: IcpConfig,
    pub refine: Option<RefineConfig>,
}

impl FlowEstimator for ClusterIcpFlow {
    fn name(&self) -> &'static str {
        if self.refine.is_some() {
            "icp+refine"
        } else {
            "icp"
        }
    }

    fn estimate(&self, input: &FlowInput) -> Result<FlowField> {
        let flow = estimate_cluster_icp_with(input, &self.icp)?;
        match &self.refine {
            Some(cfg) => refine_symmetric_chamfer_with(input, &flow, cfg),
            None => Ok(flow),
        }
    }
}

/// Estimator names accepted by [`estimator_by_name`].
pub const ESTIMATOR_NAMES: [&str; 5] = ["oracle", "icp", "upper-bound", "icp+refine", "zero"];

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EstimatorKind {
    Oracle,
    #[default]
    Icp,
    UpperBound,
    #[serde(rename = "icp+refine")]
    IcpRefine,
    Zero,
}

impl EstimatorKind {
    pub fn as_str(self) -> &'static str {
        match self {
            EstimatorKind::Oracle => "oracle",
            EstimatorKind::Icp => "icp",
            EstimatorKind::UpperBound => "upper-bound",
            EstimatorKind::IcpRefine => "icp+refine",
            EstimatorKind::Zero => "zero",
        }
    }

    /// Whether the estimator needs a neighbouring frame.
    pub fn needs_context(self) -> bool {
        !matches!(self, EstimatorKind::Oracle | EstimatorKind::Zero)
    }

    pub fn build(self) -> Box<dyn FlowEstimator> {
        match self {
            EstimatorKind::Oracle => Box::new(OracleFlow),
            EstimatorKind::Icp => Box::new(ClusterIcpFlow::default()),
            EstimatorKind::UpperBound => Box::new(UpperBoundFlow),
            EstimatorKind::IcpRefine => Box::new(ClusterIcpFlow {
                icp: IcpConfig::default(),
                refine: Some(RefineConfig::default()),
            }),
            EstimatorKind::Zero => Box::new(ZeroFlow),
        }
    }
}

impl std::str::FromStr for EstimatorKind {
    type Err = HimoError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "oracle" => Ok(Self::Oracle),
            "icp" => Ok(Self::Icp),
            "upper-bound" => Ok(Self::UpperBound),
            "icp+refine" => Ok(Self::IcpRefine),
            "zero" => Ok(Self::Zero),
            other => Err(HimoError::InvalidArgument(format!(
                "unknown estimator {other:?}, expected one of {ESTIMATOR_NAMES:?}"
            ))),
        }
    }
}

pub fn estimator_by_name(name: &str) -> Result<Box<dyn FlowEstimator>> {
    Ok(name.parse::<EstimatorKind>()?.build())
}
