//! Compensation quality metrics and ground-truth generation from tracked boxes.

mod boxes;
mod metrics;

pub use boxes::{
    assign_to_boxes, clusters_from_tracks, expand_boxes, expand_boxes_with, make_gt, make_gt_to,
    Category, MetricCluster, TrackedBox, BOX_MARGIN,
};
pub use metrics::{
    aggregate, cde, cde_with, evaluate, mpe, mpe_with, read_frame_metrics_csv, velocity_bins,
    write_metrics_csv, BinMetrics, MetricsResult, MetricsRow, Normalization, BIN_WIDTH,
};
