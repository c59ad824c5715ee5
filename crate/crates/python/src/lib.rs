//! Python bindings: simulate scenes, compensate frame sequences and score
//! the result.

use pyo3::create_exception;
use pyo3::exceptions::{PyException, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use himo::comp::CompensationTarget;
use himo::eval::{MetricsResult, Normalization};
use himo::flow::EstimatorKind;
use himo::io::{frame_to_bytes, read_frame, write_ply, PlyColoring, PlyEncoding};
use himo::pipeline::{compensate_sequence, evaluate_sequence, PipelineConfig};
use himo::sim::{scenarios, LidarRig, SceneSpec};
use himo::{NnIndex, Vec3};

create_exception!(himo, HimoError, PyException);

fn err(e: himo::HimoError) -> PyErr {
    HimoError::new_err(e.to_string())
}

fn parse_target(s: &str) -> PyResult<CompensationTarget> {
    match s {
        "scan-end" => Ok(CompensationTarget::ScanEnd),
        "mid-scan" => Ok(CompensationTarget::MidScan),
        _ => Err(PyValueError::new_err(format!(
            "unknown target {s:?}, expected scan-end or mid-scan"
        ))),
    }
}

fn parse_norm(s: &str) -> PyResult<Normalization> {
    match s {
        "literal" => Ok(Normalization::Literal),
        "weighted-mean" => Ok(Normalization::WeightedMean),
        _ => Err(PyValueError::new_err(format!(
            "unknown normalization {s:?}, expected literal or weighted-mean"
        ))),
    }
}

fn rig_preset(name: &str) -> PyResult<LidarRig> {
    LidarRig::preset(name)
        .ok_or_else(|| PyValueError::new_err(format!("unknown rig preset {name:?}")))
}

fn vecs(points: Vec<[f64; 3]>) -> Vec<Vec3> {
    points.into_iter().map(Vec3::from).collect()
}

/// A scripted scene of moving boxes, static geometry and ego motion.
#[pyclass(name = "Scene", module = "himo", from_py_object)]
#[derive(Clone)]
pub struct PyScene {
    inner: SceneSpec,
}

#[pymethods]
impl PyScene {
    /// The built-in ten-frame urban scene.
    #[staticmethod]
    fn standard() -> Self {
        PyScene {
            inner: scenarios::standard_scene(),
        }
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        let inner: SceneSpec =
            serde_json::from_str(text).map_err(|e| PyValueError::new_err(e.to_string()))?;
        inner.validate().map_err(err)?;
        Ok(PyScene { inner })
    }

    fn to_json(&self) -> String {
        serde_json::to_string(&self.inner).expect("scene serializes")
    }

    #[getter]
    fn duration(&self) -> f64 {
        self.inner.duration
    }

    #[getter]
    fn object_count(&self) -> usize {
        self.inner.objects.len()
    }

    fn __repr__(&self) -> String {
        format!(
            "Scene(objects={}, duration={})",
            self.inner.objects.len(),
            self.inner.duration
        )
    }
}

/// One LiDAR sweep: timed points, plus ground truth when simulated.
#[pyclass(name = "Frame", module = "himo", from_py_object)]
#[derive(Clone)]
pub struct PyFrame {
    inner: himo::Frame,
}

#[pymethods]
impl PyFrame {
    /// A frame from positions, capture times and sensor ids.
    #[new]
    #[pyo3(signature = (positions, times, sensor_ids, scan_duration = 0.1, frame_index = 0))]
    fn new(
        positions: Vec<[f64; 3]>,
        times: Vec<f64>,
        sensor_ids: Vec<u8>,
        scan_duration: f64,
        frame_index: u64,
    ) -> PyResult<Self> {
        if positions.len() != times.len() || positions.len() != sensor_ids.len() {
            return Err(PyValueError::new_err(
                "positions, times and sensor_ids differ in length",
            ));
        }
        let points = positions
            .into_iter()
            .zip(times)
            .zip(sensor_ids)
            .map(|((p, t), s)| himo::TimedPoint::new(Vec3::from(p), t, s))
            .collect();
        let mut inner = himo::Frame::new(points, scan_duration);
        inner.frame_index = frame_index;
        inner.validate().map_err(err)?;
        Ok(PyFrame { inner })
    }

    #[staticmethod]
    fn from_bytes(data: &[u8]) -> PyResult<Self> {
        Ok(PyFrame {
            inner: read_frame(data).map_err(err)?,
        })
    }

    fn to_bytes(&self) -> PyResult<Vec<u8>> {
        frame_to_bytes(&self.inner).map_err(err)
    }

    #[getter]
    fn frame_index(&self) -> u64 {
        self.inner.frame_index
    }

    #[getter]
    fn scan_duration(&self) -> f64 {
        self.inner.scan_duration
    }

    #[getter]
    fn has_ground_truth(&self) -> bool {
        self.inner.gt.is_some()
    }

    fn positions(&self) -> Vec<[f64; 3]> {
        self.inner
            .points
            .iter()
            .map(|p| p.position.into())
            .collect()
    }

    fn times(&self) -> Vec<f64> {
        self.inner.points.iter().map(|p| p.t).collect()
    }

    fn sensor_ids(&self) -> Vec<u8> {
        self.inner.points.iter().map(|p| p.sensor_id).collect()
    }

    /// Ground-truth track id per point, -1 for static geometry.
    fn track_ids(&self) -> PyResult<Vec<i32>> {
        Ok(self.gt()?.track_id.clone())
    }

    /// Ground-truth correction per point.
    fn gt_corrections(&self) -> PyResult<Vec<[f64; 3]>> {
        Ok(self.gt()?.correction.iter().map(|&c| c.into()).collect())
    }

    #[pyo3(signature = (path, ascii = false))]
    fn write_ply(&self, path: std::path::PathBuf, ascii: bool) -> PyResult<()> {
        let encoding = if ascii {
            PlyEncoding::Ascii
        } else {
            PlyEncoding::BinaryLittleEndian
        };
        let mut bytes = Vec::new();
        write_ply(&mut bytes, &self.inner, None, encoding, PlyColoring::Sensor).map_err(err)?;
        himo::io::write_atomic(&path, &bytes).map_err(err)
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    fn __repr__(&self) -> String {
        format!(
            "Frame(index={}, points={})",
            self.inner.frame_index,
            self.inner.len()
        )
    }
}

impl PyFrame {
    fn gt(&self) -> PyResult<&himo::GroundTruth> {
        self.inner
            .gt
            .as_ref()
            .ok_or_else(|| err(himo::HimoError::NoGroundTruth))
    }
}

fn unwrap_frames(frames: &[PyFrame]) -> Vec<himo::Frame> {
    frames.iter().map(|f| f.inner.clone()).collect()
}

/// Scans `scene` with a rig preset (`single-top`, `dual-180`).
#[pyfunction]
#[pyo3(signature = (scene, rig = "dual-180", frames = scenarios::STANDARD_FRAMES, seed = 0, noise_sigma = None))]
fn simulate(
    py: Python<'_>,
    scene: &PyScene,
    rig: &str,
    frames: usize,
    seed: u64,
    noise_sigma: Option<f64>,
) -> PyResult<Vec<PyFrame>> {
    let mut rig = rig_preset(rig)?;
    if let Some(s) = noise_sigma {
        rig.noise_sigma = s;
    }
    let spec = scene.inner.clone();
    let out = py
        .detach(|| himo::sim::scan(&spec, &rig, frames, seed))
        .map_err(err)?;
    Ok(out.into_iter().map(|inner| PyFrame { inner }).collect())
}

/// Runs the full pipeline on raw frames and returns the compensated frames.
#[pyfunction]
#[pyo3(signature = (frames, estimator = "icp", target = "scan-end", rig = "dual-180"))]
fn compensate(
    py: Python<'_>,
    frames: Vec<PyFrame>,
    estimator: &str,
    target: &str,
    rig: &str,
) -> PyResult<Vec<PyFrame>> {
    let estimator: EstimatorKind = estimator.parse().map_err(err)?;
    let mut cfg = PipelineConfig {
        estimator,
        target: parse_target(target)?,
        ..PipelineConfig::default()
    };
    cfg.autolabel.freespace.sensor_origins = rig_preset(rig)?.sensor_origins();
    let raw = unwrap_frames(&frames);
    let out = py.detach(|| compensate_sequence(&raw, &cfg)).map_err(err)?;
    Ok(out
        .into_iter()
        .map(|c| PyFrame { inner: c.frame })
        .collect())
}

/// `(lo, hi, count, cde, mpe)` of one velocity bin.
type BinRow = (f64, f64, usize, Option<f64>, Option<f64>);

fn metrics_dict<'py>(py: Python<'py>, m: &MetricsResult) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("cde", m.cde_total)?;
    d.set_item("mpe", m.mpe_total)?;
    d.set_item("cde_car", m.cde_car)?;
    d.set_item("cde_others", m.cde_others)?;
    d.set_item("mpe_car", m.mpe_car)?;
    d.set_item("mpe_others", m.mpe_others)?;
    let bins: Vec<BinRow> = m
        .bins
        .iter()
        .map(|b| (b.lo, b.hi, b.count, b.cde, b.mpe))
        .collect();
    d.set_item("bins", bins)?;
    Ok(d)
}

/// Scores `estimate` against ground truth built from the simulated `raw`
/// frames of `scene`. Returns the sequence summary as a dict with `cde`,
/// `mpe`, per-category values and velocity bins `(lo, hi, count, cde, mpe)`.
#[pyfunction]
#[pyo3(signature = (estimate, raw, scene, normalization = "literal", target = "scan-end"))]
fn evaluate<'py>(
    py: Python<'py>,
    estimate: Vec<PyFrame>,
    raw: Vec<PyFrame>,
    scene: &PyScene,
    normalization: &str,
    target: &str,
) -> PyResult<Bound<'py, PyDict>> {
    let (norm, target) = (parse_norm(normalization)?, parse_target(target)?);
    let (est, gt) = (unwrap_frames(&estimate), unwrap_frames(&raw));
    let tracks: Vec<_> = gt
        .iter()
        .map(|f| scene.inner.tracks_at(f.frame_index, f.scan_duration))
        .collect();
    let m = py
        .detach(|| evaluate_sequence(&est, &gt, &tracks, target, norm))
        .map_err(err)?;
    metrics_dict(py, &m.summary)
}

/// Symmetric Chamfer distance: mean nearest-neighbour distance both ways.
#[pyfunction]
fn chamfer_distance(a: Vec<[f64; 3]>, b: Vec<[f64; 3]>) -> PyResult<f64> {
    himo::chamfer(&vecs(a), &vecs(b)).map_err(err)
}

/// `(distance, index)` of the nearest point of `points` for every query.
#[pyfunction]
fn nearest_neighbors(points: Vec<[f64; 3]>, queries: Vec<[f64; 3]>) -> PyResult<Vec<(f64, usize)>> {
    NnIndex::new(&vecs(points))
        .nearest_many(&vecs(queries))
        .map_err(err)
}

#[pymodule]
#[pyo3(name = "himo")]
fn himo_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("HimoError", m.py().get_type::<HimoError>())?;
    m.add_class::<PyScene>()?;
    m.add_class::<PyFrame>()?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    m.add_function(wrap_pyfunction!(compensate, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    m.add_function(wrap_pyfunction!(chamfer_distance, m)?)?;
    m.add_function(wrap_pyfunction!(nearest_neighbors, m)?)?;
    Ok(())
}
