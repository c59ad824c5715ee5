//! Command-line front end: `simulate`, `compensate`, `evaluate` and
//! `export-ply`.
//!
//! Exit codes: 0 success, 1 generic failure, 2 unreadable scene or rig,
//! 3 insufficient temporal context, 4 misaligned inputs, 5 unwritable output.

use std::fmt;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use log::info;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::autolabel::AutoLabelConfig;
use crate::comp::CompensationTarget;
use crate::error::HimoError;
use crate::eval::{write_metrics_csv, Normalization, TrackedBox};
use crate::flow::EstimatorKind;
use crate::geometry::Frame;
use crate::io::{
    frame_file_name, frame_index_from_name, read_frame_file, write_atomic, write_ply, PlyColoring,
    PlyEncoding,
};
use crate::pipeline::{
    compensate_sequence, evaluate_sequence, preprocess, reduction_percent, PipelineConfig,
    SequenceMetrics,
};
use crate::sim::{scan, scenarios, LidarRig, SceneSpec};

pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_BAD_SCENE: i32 = 2;
pub const EXIT_NO_CONTEXT: i32 = 3;
pub const EXIT_MISALIGNED: i32 = 4;
pub const EXIT_UNWRITABLE: i32 = 5;

#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl CliError {
    fn new(code: i32, message: impl Into<String>) -> Self {
        CliError {
            code,
            message: message.into(),
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl std::error::Error for CliError {}

impl From<HimoError> for CliError {
    fn from(e: HimoError) -> Self {
        let code = match &e {
            HimoError::InsufficientContext(_) => EXIT_NO_CONTEXT,
            HimoError::CorrespondenceBroken(_) => EXIT_MISALIGNED,
            _ => EXIT_FAILURE,
        };
        CliError::new(code, e.to_string())
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

fn unwritable(path: &Path, e: impl fmt::Display) -> CliError {
    CliError::new(
        EXIT_UNWRITABLE,
        format!("cannot write {}: {e}", path.display()),
    )
}

#[derive(Parser, Debug)]
#[command(
    name = "himo",
    version,
    about = "Rolling-shutter compensation for multi-LiDAR point clouds"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Simulate frames of a scene with exact ground truth.
    Simulate(SimulateArgs),
    /// Ego-compensate, label, estimate flow and undistort frames.
    Compensate(CompensateArgs),
    /// Score compensated frames against ground truth.
    Evaluate(EvaluateArgs),
    /// Export frames as PLY.
    ExportPly(ExportPlyArgs),
}

#[derive(Args, Debug)]
pub struct SimulateArgs {
    /// Scene JSON file, or `standard` for the built-in scenario.
    #[arg(long, default_value = "standard")]
    pub scene: String,
    /// Rig preset (`single-top`, `dual-180`) or rig JSON file.
    #[arg(long, default_value = "dual-180")]
    pub rig: String,
    #[arg(long, default_value_t = scenarios::STANDARD_FRAMES)]
    pub frames: usize,
    /// Overrides the rig's range noise (m).
    #[arg(long)]
    pub noise_sigma: Option<f64>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum TargetArg {
    ScanEnd,
    MidScan,
}

impl From<TargetArg> for CompensationTarget {
    fn from(t: TargetArg) -> Self {
        match t {
            TargetArg::ScanEnd => CompensationTarget::ScanEnd,
            TargetArg::MidScan => CompensationTarget::MidScan,
        }
    }
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum NormArg {
    Literal,
    WeightedMean,
}

impl From<NormArg> for Normalization {
    fn from(n: NormArg) -> Self {
        match n {
            NormArg::Literal => Normalization::Literal,
            NormArg::WeightedMean => Normalization::WeightedMean,
        }
    }
}

#[derive(Args, Debug)]
pub struct CompensateArgs {
    /// Directory of frame files.
    #[arg(long)]
    pub input: PathBuf,
    /// Rig preset or file; defaults to the rig recorded in the input manifest.
    #[arg(long)]
    pub rig: Option<String>,
    /// oracle, icp, upper-bound, icp+refine or zero.
    #[arg(long, default_value = "icp")]
    pub estimator: String,
    #[arg(long, default_value_t = 0.25)]
    pub tau_d: f64,
    #[arg(long, default_value_t = 0.3)]
    pub tau1: f64,
    #[arg(long, default_value_t = 0.8)]
    pub tau2: f64,
    #[arg(long, default_value_t = 0.2)]
    pub voxel: f64,
    #[arg(long, default_value_t = 5)]
    pub window: usize,
    #[arg(long, value_enum, default_value = "scan-end")]
    pub target: TargetArg,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct EvaluateArgs {
    /// Directory of compensated frames.
    #[arg(long)]
    pub est: PathBuf,
    /// Directory of simulated frames with ground truth.
    #[arg(long)]
    pub gt: PathBuf,
    /// Track file; defaults to `tracks.json` in the ground-truth directory.
    #[arg(long)]
    pub tracks: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "literal")]
    pub cde_norm: NormArg,
    #[arg(long, value_enum, default_value = "scan-end")]
    pub target: TargetArg,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum ColorArg {
    Sensor,
    Dynamic,
}

#[derive(Args, Debug)]
pub struct ExportPlyArgs {
    /// A frame file or a directory of frame files.
    #[arg(long)]
    pub input: PathBuf,
    /// Output file for a single frame, directory otherwise.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub ascii: bool,
    #[arg(long, value_enum, default_value = "sensor")]
    pub color: ColorArg,
}

/// Scene, rig and parameters of a run; hashed into the manifest.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub scene: Option<SceneSpec>,
    pub rig: LidarRig,
    pub frames: usize,
    pub estimator: Option<EstimatorKind>,
    pub autolabel: Option<AutoLabelConfig>,
    pub target: CompensationTarget,
    pub cde_norm: Normalization,
    pub seed: u64,
}

impl RunConfig {
    /// SHA-256 of the canonical JSON encoding.
    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(&bytes))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestFile {
    pub name: String,
    pub sha256: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub command: String,
    pub version: String,
    pub config: RunConfig,
    pub config_hash: String,
    pub seed: u64,
    /// Flow interval of each compensated frame (s); flow spans the actual
    /// time to the next frame.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub flow_intervals: Vec<f64>,
    pub files: Vec<ManifestFile>,
}

pub const MANIFEST: &str = "manifest.json";
pub const TRACKS: &str = "tracks.json";

/// Scan-end tracks of one frame.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrameTracks {
    pub frame: u64,
    pub boxes: Vec<TrackedBox>,
}

fn load_scene(spec: &str) -> CliResult<SceneSpec> {
    if spec == "standard" {
        return Ok(scenarios::standard_scene());
    }
    let text = std::fs::read_to_string(spec)
        .map_err(|e| CliError::new(EXIT_BAD_SCENE, format!("cannot read scene {spec}: {e}")))?;
    let scene: SceneSpec = serde_json::from_str(&text)
        .map_err(|e| CliError::new(EXIT_BAD_SCENE, format!("invalid scene {spec}: {e}")))?;
    scene
        .validate()
        .map_err(|e| CliError::new(EXIT_BAD_SCENE, format!("invalid scene {spec}: {e}")))?;
    Ok(scene)
}

fn load_rig(spec: &str) -> CliResult<LidarRig> {
    let rig = match LidarRig::preset(spec) {
        Some(r) => r,
        None => {
            let text = std::fs::read_to_string(spec).map_err(|e| {
                CliError::new(
                    EXIT_BAD_SCENE,
                    format!("{spec} is neither a rig preset nor a readable file: {e}"),
                )
            })?;
            serde_json::from_str(&text)
                .map_err(|e| CliError::new(EXIT_BAD_SCENE, format!("invalid rig {spec}: {e}")))?
        }
    };
    rig.validate()
        .map_err(|e| CliError::new(EXIT_BAD_SCENE, format!("invalid rig {spec}: {e}")))?;
    Ok(rig)
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Collects output files so the manifest can list their digests.
struct OutDir {
    dir: PathBuf,
    files: Vec<ManifestFile>,
}

impl OutDir {
    fn create(dir: &Path) -> CliResult<Self> {
        std::fs::create_dir_all(dir).map_err(|e| unwritable(dir, e))?;
        Ok(OutDir {
            dir: dir.to_path_buf(),
            files: Vec::new(),
        })
    }

    fn write(&mut self, name: &str, bytes: &[u8]) -> CliResult<()> {
        let path = self.dir.join(name);
        write_atomic(&path, bytes).map_err(|e| unwritable(&path, e))?;
        self.files.push(ManifestFile {
            name: name.to_string(),
            sha256: sha256_hex(bytes),
        });
        Ok(())
    }

    fn finish(self, command: &str, config: RunConfig, flow_intervals: Vec<f64>) -> CliResult<()> {
        let manifest = Manifest {
            command: command.to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            config_hash: config.hash(),
            seed: config.seed,
            config,
            flow_intervals,
            files: self.files,
        };
        let path = self.dir.join(MANIFEST);
        let bytes = serde_json::to_vec_pretty(&manifest)
            .map_err(|e| CliError::new(EXIT_FAILURE, e.to_string()))?;
        write_atomic(&path, &bytes).map_err(|e| unwritable(&path, e))
    }
}

/// Frame files of `dir`, ordered by frame index.
pub fn frame_paths(dir: &Path) -> CliResult<Vec<PathBuf>> {
    let entries = std::fs::read_dir(dir)
        .map_err(|e| CliError::new(EXIT_FAILURE, format!("cannot read {}: {e}", dir.display())))?;
    let mut paths: Vec<(u64, PathBuf)> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "himo"))
        .filter_map(|p| frame_index_from_name(&p).map(|i| (i, p)))
        .collect();
    paths.sort();
    Ok(paths.into_iter().map(|(_, p)| p).collect())
}

pub fn read_frames(dir: &Path) -> CliResult<Vec<Frame>> {
    frame_paths(dir)?
        .iter()
        .map(|p| {
            read_frame_file(p)
                .map_err(|e| CliError::new(EXIT_FAILURE, format!("{}: {e}", p.display())))
        })
        .collect()
}

fn read_manifest(dir: &Path) -> Option<Manifest> {
    let text = std::fs::read_to_string(dir.join(MANIFEST)).ok()?;
    serde_json::from_str(&text).ok()
}

pub fn cmd_simulate(args: &SimulateArgs) -> CliResult<()> {
    let scene = load_scene(&args.scene)?;
    let mut rig = load_rig(&args.rig)?;
    if let Some(s) = args.noise_sigma {
        rig.noise_sigma = s;
    }
    let frames = scan(&scene, &rig, args.frames, args.seed)?;
    let mut out = OutDir::create(&args.out)?;
    let mut tracks = Vec::with_capacity(frames.len());
    for f in &frames {
        out.write(
            &frame_file_name(f.frame_index),
            &crate::io::frame_to_bytes(f)?,
        )?;
        tracks.push(FrameTracks {
            frame: f.frame_index,
            boxes: scene.tracks_at(f.frame_index, f.scan_duration),
        });
    }
    let json = serde_json::to_vec_pretty(&tracks)
        .map_err(|e| CliError::new(EXIT_FAILURE, e.to_string()))?;
    out.write(TRACKS, &json)?;
    info!("wrote {} frames to {}", frames.len(), args.out.display());
    let config = RunConfig {
        scene: Some(scene),
        rig,
        frames: args.frames,
        estimator: None,
        autolabel: None,
        target: CompensationTarget::ScanEnd,
        cde_norm: Normalization::default(),
        seed: args.seed,
    };
    out.finish("simulate", config, Vec::new())
}

pub fn cmd_compensate(args: &CompensateArgs) -> CliResult<()> {
    let estimator: EstimatorKind = args.estimator.parse()?;
    let input_manifest = read_manifest(&args.input);
    let rig = match (&args.rig, &input_manifest) {
        (Some(r), _) => load_rig(r)?,
        (None, Some(m)) => m.config.rig.clone(),
        (None, None) => load_rig("dual-180")?,
    };
    let mut autolabel = AutoLabelConfig {
        tau_d: args.tau_d,
        tau1: args.tau1,
        tau2: args.tau2,
        ..AutoLabelConfig::default()
    };
    autolabel.freespace.voxel_size = args.voxel;
    autolabel.freespace.window = args.window;
    autolabel.freespace.sensor_origins = rig.sensor_origins();
    autolabel.validate()?;

    let raw = read_frames(&args.input)?;
    if raw.is_empty() {
        return Err(CliError::new(
            EXIT_FAILURE,
            format!("no frame files in {}", args.input.display()),
        ));
    }
    let cfg = PipelineConfig {
        estimator,
        autolabel: autolabel.clone(),
        target: args.target.into(),
    };
    let results = compensate_sequence(&raw, &cfg)?;

    let mut out = OutDir::create(&args.out)?;
    let mut intervals = Vec::with_capacity(results.len());
    for r in &results {
        let idx = r.frame.frame_index;
        out.write(&frame_file_name(idx), &crate::io::frame_to_bytes(&r.frame)?)?;
        out.write(&format!("corrections_{idx:06}.csv"), &corrections_csv(r)?)?;
        intervals.push(r.flow_interval);
    }
    let config = RunConfig {
        scene: input_manifest.and_then(|m| m.config.scene),
        rig,
        frames: raw.len(),
        estimator: Some(estimator),
        autolabel: Some(autolabel),
        target: cfg.target,
        cde_norm: Normalization::default(),
        seed: args.seed,
    };
    out.finish("compensate", config, intervals)
}

/// Sidecar with the applied correction, flow and label of every point.
fn corrections_csv(r: &crate::pipeline::CompensatedFrame) -> CliResult<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let err = |e: csv::Error| CliError::new(EXIT_FAILURE, e.to_string());
    w.write_record([
        "index", "dx", "dy", "dz", "flow_x", "flow_y", "flow_z", "dynamic", "cluster",
    ])
    .map_err(err)?;
    for i in 0..r.frame.len() {
        let d = r.distortion.vectors[i];
        let f = r.flow.effective(i);
        w.serialize((
            i,
            d.x,
            d.y,
            d.z,
            f.x,
            f.y,
            f.z,
            r.labels.dynamic[i] as u8,
            r.labels.cluster[i],
        ))
        .map_err(err)?;
    }
    w.into_inner()
        .map_err(|e| CliError::new(EXIT_FAILURE, e.to_string()))
}

/// Evaluation output: per-frame metrics, the ego-only baseline on the same
/// ground truth and the relative reduction.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub normalization: Normalization,
    pub seed: Option<u64>,
    pub estimate: SequenceMetrics,
    pub ego_only: SequenceMetrics,
    pub cde_reduction_percent: f64,
    pub mpe_reduction_percent: f64,
}

pub fn cmd_evaluate(args: &EvaluateArgs) -> CliResult<()> {
    let est = read_frames(&args.est)?;
    let gt = read_frames(&args.gt)?;
    let tracks_path = args.tracks.clone().unwrap_or_else(|| args.gt.join(TRACKS));
    let text = std::fs::read_to_string(&tracks_path).map_err(|e| {
        CliError::new(
            EXIT_FAILURE,
            format!("cannot read {}: {e}", tracks_path.display()),
        )
    })?;
    let all: Vec<FrameTracks> = serde_json::from_str(&text).map_err(|e| {
        CliError::new(
            EXIT_FAILURE,
            format!("invalid {}: {e}", tracks_path.display()),
        )
    })?;
    let tracks: Vec<Vec<TrackedBox>> = gt
        .iter()
        .map(|f| {
            all.iter()
                .find(|t| t.frame == f.frame_index)
                .map(|t| t.boxes.clone())
                .unwrap_or_default()
        })
        .collect();
    if let Some((e, g)) = est
        .iter()
        .zip(&gt)
        .find(|(e, g)| e.frame_index != g.frame_index)
    {
        return Err(CliError::new(
            EXIT_MISALIGNED,
            format!(
                "frame {} compared with frame {}",
                e.frame_index, g.frame_index
            ),
        ));
    }
    let norm: Normalization = args.cde_norm.into();
    let target: CompensationTarget = args.target.into();
    let estimate = evaluate_sequence(&est, &gt, &tracks, target, norm)?;
    let ego_only = evaluate_sequence(&preprocess(&gt, target), &gt, &tracks, target, norm)?;
    let report = EvaluationReport {
        normalization: norm,
        seed: read_manifest(&args.est).map(|m| m.seed),
        cde_reduction_percent: reduction_percent(
            ego_only.summary.cde_total,
            estimate.summary.cde_total,
        ),
        mpe_reduction_percent: reduction_percent(
            ego_only.summary.mpe_total,
            estimate.summary.mpe_total,
        ),
        estimate,
        ego_only,
    };
    std::fs::create_dir_all(&args.out).map_err(|e| unwritable(&args.out, e))?;
    let mut csv_bytes = Vec::new();
    write_metrics_csv(
        &mut csv_bytes,
        &report.estimate.frames,
        &report.estimate.summary,
    )?;
    let csv_path = args.out.join("metrics.csv");
    write_atomic(&csv_path, &csv_bytes).map_err(|e| unwritable(&csv_path, e))?;
    let json_path = args.out.join("metrics.json");
    let json = serde_json::to_vec_pretty(&report)
        .map_err(|e| CliError::new(EXIT_FAILURE, e.to_string()))?;
    write_atomic(&json_path, &json).map_err(|e| unwritable(&json_path, e))?;
    info!(
        "CDE {:.4} m (ego-only {:.4} m, {:.1}% lower), MPE {:.4} m (ego-only {:.4} m, {:.1}% lower)",
        report.estimate.summary.cde_total,
        report.ego_only.summary.cde_total,
        report.cde_reduction_percent,
        report.estimate.summary.mpe_total,
        report.ego_only.summary.mpe_total,
        report.mpe_reduction_percent
    );
    Ok(())
}

/// Dynamic flags from a `corrections_*.csv` sidecar next to `frame_path`.
fn sidecar_dynamic(frame_path: &Path, n: usize) -> Option<Vec<bool>> {
    let idx = frame_index_from_name(frame_path)?;
    let path = frame_path.with_file_name(format!("corrections_{idx:06}.csv"));
    let mut reader = csv::Reader::from_path(path).ok()?;
    let flags: Vec<bool> = reader
        .records()
        .map(|r| r.ok().and_then(|r| r.get(7).map(|v| v == "1")))
        .collect::<Option<_>>()?;
    (flags.len() == n).then_some(flags)
}

pub fn cmd_export_ply(args: &ExportPlyArgs) -> CliResult<()> {
    let encoding = if args.ascii {
        PlyEncoding::Ascii
    } else {
        PlyEncoding::BinaryLittleEndian
    };
    let coloring = match args.color {
        ColorArg::Sensor => PlyColoring::Sensor,
        ColorArg::Dynamic => PlyColoring::Dynamic,
    };
    let single = args.input.is_file();
    let inputs = if single {
        vec![args.input.clone()]
    } else {
        frame_paths(&args.input)?
    };
    if !single {
        std::fs::create_dir_all(&args.out).map_err(|e| unwritable(&args.out, e))?;
    }
    for path in inputs {
        let frame = read_frame_file(&path)
            .map_err(|e| CliError::new(EXIT_FAILURE, format!("{}: {e}", path.display())))?;
        let dynamic = if frame.gt.is_some() {
            None
        } else {
            sidecar_dynamic(&path, frame.len())
        };
        let mut bytes = Vec::new();
        write_ply(&mut bytes, &frame, dynamic.as_deref(), encoding, coloring)?;
        let target = if single {
            args.out.clone()
        } else {
            args.out.join(format!("frame_{:06}.ply", frame.frame_index))
        };
        write_atomic(&target, &bytes).map_err(|e| unwritable(&target, e))?;
    }
    Ok(())
}

pub fn run(cli: &Cli) -> CliResult<()> {
    match &cli.command {
        Command::Simulate(a) => cmd_simulate(a),
        Command::Compensate(a) => cmd_compensate(a),
        Command::Evaluate(a) => cmd_evaluate(a),
        Command::ExportPly(a) => cmd_export_ply(a),
    }
}

/// Applies `HIMO_THREADS` to the global thread pool.
pub fn configure_threads() -> CliResult<()> {
    let Ok(value) = std::env::var("HIMO_THREADS") else {
        return Ok(());
    };
    let n: usize = value.parse().ok().filter(|&n| n > 0).ok_or_else(|| {
        CliError::new(
            EXIT_FAILURE,
            format!("HIMO_THREADS must be a positive integer, got {value:?}"),
        )
    })?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::new(EXIT_FAILURE, e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    #[test]
    fn cli_definition_is_consistent() {
        Cli::command().debug_assert();
    }

    #[test]
    fn flags_parse() {
        let cli = Cli::try_parse_from([
            "himo",
            "compensate",
            "--input",
            "in",
            "--out",
            "o",
            "--estimator",
            "icp+refine",
            "--tau-d",
            "0.3",
            "--tau1",
            "0.2",
            "--tau2",
            "0.9",
            "--voxel",
            "0.25",
            "--window",
            "3",
            "--target",
            "mid-scan",
            "--seed",
            "7",
        ])
        .unwrap();
        let Command::Compensate(a) = cli.command else {
            panic!()
        };
        assert_eq!(a.estimator, "icp+refine");
        assert_eq!(a.window, 3);
        assert!(matches!(a.target, TargetArg::MidScan));
        let cli = Cli::try_parse_from([
            "himo",
            "evaluate",
            "--est",
            "e",
            "--gt",
            "g",
            "--out",
            "o",
            "--cde-norm",
            "weighted-mean",
        ])
        .unwrap();
        let Command::Evaluate(a) = cli.command else {
            panic!()
        };
        assert!(matches!(a.cde_norm, NormArg::WeightedMean));
    }

    #[test]
    fn error_codes() {
        assert_eq!(
            CliError::from(HimoError::InsufficientContext("x".into())).code,
            EXIT_NO_CONTEXT
        );
        assert_eq!(
            CliError::from(HimoError::CorrespondenceBroken("x".into())).code,
            EXIT_MISALIGNED
        );
        assert_eq!(
            load_scene("/nonexistent/scene.json").unwrap_err().code,
            EXIT_BAD_SCENE
        );
        assert_eq!(load_rig("no-such-rig").unwrap_err().code, EXIT_BAD_SCENE);
    }

    #[test]
    fn config_hash_depends_on_seed() {
        let mut c = RunConfig {
            scene: None,
            rig: LidarRig::preset("dual-180").unwrap(),
            frames: 2,
            estimator: None,
            autolabel: None,
            target: CompensationTarget::ScanEnd,
            cde_norm: Normalization::Literal,
            seed: 1,
        };
        let h = c.hash();
        assert_eq!(h.len(), 64);
        assert_eq!(h, c.clone().hash());
        c.seed = 2;
        assert_ne!(h, c.hash());
    }
}
