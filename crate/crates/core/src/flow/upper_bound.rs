use log::debug;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::FlowInput;
use crate::comp::FlowField;
use crate::error::{HimoError, Result};
use crate::geometry::Vec3;
use crate::nn::NnIndex;

/// Representative flow of one dynamic cluster, taken from its anchor point:
/// the member farthest from the next frame's dynamic points.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnchorFlow {
    pub cluster: i32,
    pub flow: Vec3,
    /// Index of the anchor in the current frame.
    pub anchor: usize,
    /// Index of the anchor's nearest dynamic neighbour in the next frame.
    pub anchor_nn: usize,
    pub anchor_distance: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ClusterFlowSummary {
    pub clusters: Vec<AnchorFlow>,
}

impl ClusterFlowSummary {
    pub fn get(&self, cluster: i32) -> Option<&AnchorFlow> {
        self.clusters.iter().find(|a| a.cluster == cluster)
    }
}

/// Gives every point of a dynamic cluster the displacement from the
/// cluster's anchor to the anchor's nearest dynamic neighbour in the next
/// frame. Ties for the anchor go to the lowest point index.
pub fn estimate_upper_bound(input: &FlowInput) -> Result<(FlowField, ClusterFlowSummary)> {
    input.validate()?;
    let (next_idx, next_pts) = input.next.dynamic_points();
    if next_pts.is_empty() {
        return Err(HimoError::NoDynamicTarget);
    }
    let index = NnIndex::new(&next_pts);
    let clusters = input.dynamic_clusters();
    let frame = input.cur.frame;
    let anchors: Vec<AnchorFlow> = clusters
        .par_iter()
        .map(|(c, members)| {
            let mut best = (f64::NEG_INFINITY, 0usize, 0usize);
            for &i in members {
                let (d2, j) = index
                    .nearest_squared(&frame.points[i].position)
                    .expect("nonempty");
                if d2 > best.0 {
                    best = (d2, i, j);
                }
            }
            let (d2, anchor, j) = best;
            debug!(
                "cluster {c}: anchor {anchor} nearest dynamic neighbour at {:.3} m",
                d2.sqrt()
            );
            AnchorFlow {
                cluster: *c,
                flow: next_pts[j] - frame.points[anchor].position,
                anchor,
                anchor_nn: next_idx[j],
                anchor_distance: d2.sqrt(),
            }
        })
        .collect();
    let mut flow = FlowField::zeros(frame.len());
    for ((_, members), a) in clusters.iter().zip(&anchors) {
        for &i in members {
            flow.vectors[i] = a.flow;
        }
    }
    Ok((flow, ClusterFlowSummary { clusters: anchors }))
}
