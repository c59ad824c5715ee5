use std::io::{Read, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{HimoError, Result};
use crate::eval::boxes::{Category, MetricCluster};
use crate::geometry::{chamfer, Frame, Vec3};

/// How cluster contributions are normalized in CDE and MPE.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Normalization {
    /// Size-weighted sum over clusters, additionally divided by the cluster count.
    #[default]
    Literal,
    /// Size-weighted mean over clusters (no extra division).
    WeightedMean,
}

impl Normalization {
    pub fn as_str(self) -> &'static str {
        match self {
            Normalization::Literal => "literal",
            Normalization::WeightedMean => "weighted-mean",
        }
    }
}

impl std::str::FromStr for Normalization {
    type Err = HimoError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "literal" => Ok(Self::Literal),
            "weighted-mean" => Ok(Self::WeightedMean),
            other => Err(HimoError::InvalidArgument(format!(
                "unknown normalization {other:?}"
            ))),
        }
    }
}

fn check_aligned(est: &Frame, gt: &Frame, clusters: &[MetricCluster]) -> Result<usize> {
    if est.len() != gt.len() {
        return Err(HimoError::CorrespondenceBroken(format!(
            "estimate has {} points, ground truth has {}",
            est.len(),
            gt.len()
        )));
    }
    let mut total = 0;
    for c in clusters {
        if let Some(&i) = c.members.iter().find(|&&i| i >= est.len()) {
            return Err(HimoError::CorrespondenceBroken(format!(
                "cluster {} references point {i} of {}",
                c.track_id,
                est.len()
            )));
        }
        total += c.members.len();
    }
    if clusters.is_empty() || total == 0 {
        return Err(HimoError::NothingToEvaluate);
    }
    Ok(total)
}

fn gather(frame: &Frame, members: &[usize]) -> Vec<Vec3> {
    members.iter().map(|&i| frame.points[i].position).collect()
}

fn prefactor(norm: Normalization, clusters: usize) -> f64 {
    match norm {
        Normalization::Literal => 1.0 / clusters as f64,
        Normalization::WeightedMean => 1.0,
    }
}

pub fn cde(est: &Frame, gt: &Frame, clusters: &[MetricCluster]) -> Result<f64> {
    cde_with(est, gt, clusters, Normalization::Literal)
}

/// Chamfer distance error: `k · Σ_c (|P_c| / |P_C|) · CD(est_c, gt_c)` with
/// `k = 1 / |C|` (literal) or `1` (weighted mean). Empty clusters are skipped.
pub fn cde_with(
    est: &Frame,
    gt: &Frame,
    clusters: &[MetricCluster],
    norm: Normalization,
) -> Result<f64> {
    let total = check_aligned(est, gt, clusters)?;
    let clusters: Vec<&MetricCluster> = clusters.iter().filter(|c| !c.members.is_empty()).collect();
    let sum = clusters
        .par_iter()
        .map(|c| {
            let cd = chamfer(&gather(est, &c.members), &gather(gt, &c.members))?;
            Ok(c.members.len() as f64 / total as f64 * cd)
        })
        .collect::<Result<Vec<f64>>>()?
        .into_iter()
        .sum::<f64>();
    Ok(prefactor(norm, clusters.len()) * sum)
}

pub fn mpe(est: &Frame, gt: &Frame, clusters: &[MetricCluster]) -> Result<f64> {
    mpe_with(est, gt, clusters, Normalization::Literal)
}

/// Mean point error: `k · Σ_c Σ_p ‖p_est − p_gt‖ / |P_C|` with the same `k` as [`cde_with`].
pub fn mpe_with(
    est: &Frame,
    gt: &Frame,
    clusters: &[MetricCluster],
    norm: Normalization,
) -> Result<f64> {
    let total = check_aligned(est, gt, clusters)?;
    let n_clusters = clusters.iter().filter(|c| !c.members.is_empty()).count();
    let sum: f64 = clusters
        .iter()
        .flat_map(|c| c.members.iter())
        .map(|&i| (est.points[i].position - gt.points[i].position).norm())
        .sum();
    Ok(prefactor(norm, n_clusters) * sum / total as f64)
}

/// Metrics of one velocity interval `[lo, hi)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BinMetrics {
    pub lo: f64,
    pub hi: f64,
    /// Number of clusters in the bin.
    pub count: usize,
    pub cde: Option<f64>,
    pub mpe: Option<f64>,
}

/// CDE and MPE overall, per category and per velocity bin.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsResult {
    pub cde_total: f64,
    pub cde_car: Option<f64>,
    pub cde_others: Option<f64>,
    pub mpe_total: f64,
    pub mpe_car: Option<f64>,
    pub mpe_others: Option<f64>,
    pub bins: Vec<BinMetrics>,
    pub literal_normalization: bool,
}

fn subset(clusters: &[MetricCluster], keep: impl Fn(&MetricCluster) -> bool) -> Vec<MetricCluster> {
    clusters
        .iter()
        .filter(|c| keep(c) && !c.members.is_empty())
        .cloned()
        .collect()
}

fn optional_pair(
    est: &Frame,
    gt: &Frame,
    clusters: &[MetricCluster],
    norm: Normalization,
) -> Result<(Option<f64>, Option<f64>)> {
    if clusters.is_empty() {
        return Ok((None, None));
    }
    Ok((
        Some(cde_with(est, gt, clusters, norm)?),
        Some(mpe_with(est, gt, clusters, norm)?),
    ))
}

/// Groups clusters by speed into `[0, w), [w, 2w), …` up to the fastest one and
/// evaluates each bin on its own. Empty bins are reported with `count = 0`.
pub fn velocity_bins(
    est: &Frame,
    gt: &Frame,
    clusters: &[MetricCluster],
    bin_width: f64,
    norm: Normalization,
) -> Result<Vec<BinMetrics>> {
    if !(bin_width > 0.0) {
        return Err(HimoError::InvalidArgument(
            "bin width must be positive".into(),
        ));
    }
    let bin_of = |c: &MetricCluster| (c.speed / bin_width).floor() as usize;
    let n_bins = clusters.iter().map(|c| bin_of(c) + 1).max().unwrap_or(1);
    (0..n_bins)
        .map(|b| {
            let members = subset(clusters, |c| bin_of(c) == b);
            let (cde, mpe) = optional_pair(est, gt, &members, norm)?;
            Ok(BinMetrics {
                lo: b as f64 * bin_width,
                hi: (b + 1) as f64 * bin_width,
                count: members.len(),
                cde,
                mpe,
            })
        })
        .collect()
}

/// Default width of velocity bins, m/s.
pub const BIN_WIDTH: f64 = 10.0;

pub fn evaluate(
    est: &Frame,
    gt: &Frame,
    clusters: &[MetricCluster],
    norm: Normalization,
) -> Result<MetricsResult> {
    let cars = subset(clusters, |c| c.category == Category::Car);
    let others = subset(clusters, |c| c.category == Category::Others);
    let (cde_car, mpe_car) = optional_pair(est, gt, &cars, norm)?;
    let (cde_others, mpe_others) = optional_pair(est, gt, &others, norm)?;
    Ok(MetricsResult {
        cde_total: cde_with(est, gt, clusters, norm)?,
        cde_car,
        cde_others,
        mpe_total: mpe_with(est, gt, clusters, norm)?,
        mpe_car,
        mpe_others,
        bins: velocity_bins(est, gt, clusters, BIN_WIDTH, norm)?,
        literal_normalization: norm == Normalization::Literal,
    })
}

fn mean_of(values: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let (sum, n) = values
        .flatten()
        .fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

/// Averages per-frame results; optional fields and bins average over the
/// frames where they are present, bin counts are summed.
pub fn aggregate(frames: &[MetricsResult]) -> Result<MetricsResult> {
    let first = frames.first().ok_or(HimoError::NothingToEvaluate)?;
    let n_bins = frames.iter().map(|f| f.bins.len()).max().unwrap_or(0);
    let width = first.bins.first().map_or(BIN_WIDTH, |b| b.hi - b.lo);
    let bins = (0..n_bins)
        .map(|b| BinMetrics {
            lo: b as f64 * width,
            hi: (b + 1) as f64 * width,
            count: frames
                .iter()
                .filter_map(|f| f.bins.get(b))
                .map(|x| x.count)
                .sum(),
            cde: mean_of(frames.iter().map(|f| f.bins.get(b).and_then(|x| x.cde))),
            mpe: mean_of(frames.iter().map(|f| f.bins.get(b).and_then(|x| x.mpe))),
        })
        .collect();
    Ok(MetricsResult {
        cde_total: mean_of(frames.iter().map(|f| Some(f.cde_total))).unwrap_or(0.0),
        cde_car: mean_of(frames.iter().map(|f| f.cde_car)),
        cde_others: mean_of(frames.iter().map(|f| f.cde_others)),
        mpe_total: mean_of(frames.iter().map(|f| Some(f.mpe_total))).unwrap_or(0.0),
        mpe_car: mean_of(frames.iter().map(|f| f.mpe_car)),
        mpe_others: mean_of(frames.iter().map(|f| f.mpe_others)),
        bins,
        literal_normalization: first.literal_normalization,
    })
}

/// One CSV line of a metrics report. `scope` is `frame`, `bin` or `summary`;
/// bin rows belong to the frame in `frame`, or to the summary when it is empty.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub scope: String,
    pub frame: Option<u64>,
    pub bin_lo: Option<f64>,
    pub bin_hi: Option<f64>,
    pub clusters: Option<usize>,
    pub cde: Option<f64>,
    pub mpe: Option<f64>,
    pub cde_car: Option<f64>,
    pub mpe_car: Option<f64>,
    pub cde_others: Option<f64>,
    pub mpe_others: Option<f64>,
    pub normalization: String,
}

fn norm_name(r: &MetricsResult) -> String {
    if r.literal_normalization {
        "literal"
    } else {
        "weighted-mean"
    }
    .to_string()
}

fn rows_for(scope: &str, frame: Option<u64>, r: &MetricsResult) -> Vec<MetricsRow> {
    let mut rows = vec![MetricsRow {
        scope: scope.to_string(),
        frame,
        bin_lo: None,
        bin_hi: None,
        clusters: None,
        cde: Some(r.cde_total),
        mpe: Some(r.mpe_total),
        cde_car: r.cde_car,
        mpe_car: r.mpe_car,
        cde_others: r.cde_others,
        mpe_others: r.mpe_others,
        normalization: norm_name(r),
    }];
    rows.extend(r.bins.iter().map(|b| MetricsRow {
        scope: "bin".to_string(),
        frame,
        bin_lo: Some(b.lo),
        bin_hi: Some(b.hi),
        clusters: Some(b.count),
        cde: b.cde,
        mpe: b.mpe,
        cde_car: None,
        mpe_car: None,
        cde_others: None,
        mpe_others: None,
        normalization: norm_name(r),
    }));
    rows
}

/// Writes per-frame rows (each followed by its bins), then the summary and its bins.
pub fn write_metrics_csv<W: Write>(
    out: W,
    frames: &[(u64, MetricsResult)],
    summary: &MetricsResult,
) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for (idx, r) in frames {
        for row in rows_for("frame", Some(*idx), r) {
            w.serialize(row).map_err(csv_error)?;
        }
    }
    for row in rows_for("summary", None, summary) {
        w.serialize(row).map_err(csv_error)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads back the per-frame results written by [`write_metrics_csv`].
pub fn read_frame_metrics_csv<R: Read>(input: R) -> Result<Vec<(u64, MetricsResult)>> {
    let mut out: Vec<(u64, MetricsResult)> = Vec::new();
    for row in csv::Reader::from_reader(input).deserialize::<MetricsRow>() {
        let row = row.map_err(csv_error)?;
        match (row.scope.as_str(), row.frame) {
            ("frame", Some(idx)) => out.push((
                idx,
                MetricsResult {
                    cde_total: row.cde.unwrap_or(0.0),
                    cde_car: row.cde_car,
                    cde_others: row.cde_others,
                    mpe_total: row.mpe.unwrap_or(0.0),
                    mpe_car: row.mpe_car,
                    mpe_others: row.mpe_others,
                    bins: Vec::new(),
                    literal_normalization: row.normalization == "literal",
                },
            )),
            ("bin", Some(idx)) => {
                let Some((last, r)) = out.last_mut() else {
                    return Err(HimoError::Format("bin row before its frame row".into()));
                };
                if *last != idx {
                    return Err(HimoError::Format(format!(
                        "bin row for frame {idx} out of order"
                    )));
                }
                r.bins.push(BinMetrics {
                    lo: row.bin_lo.unwrap_or(0.0),
                    hi: row.bin_hi.unwrap_or(0.0),
                    count: row.clusters.unwrap_or(0),
                    cde: row.cde,
                    mpe: row.mpe,
                });
            }
            _ => {}
        }
    }
    Ok(out)
}

fn csv_error(e: csv::Error) -> HimoError {
    HimoError::Format(format!("csv: {e}"))
}
