//! Python bindings: motion fields, block matching, statistics, divergences,
//! routing and the batch commands. Planes and fields cross the boundary as
//! nested lists (row-major); reports come back as plain dicts.

use std::path::PathBuf;

use mvlens_core::divergence::{self, EmpiricalHistogram};
use mvlens_core::grid::Grid;
use mvlens_core::maf_policy::{self, Route, RoutingThresholds};
use mvlens_core::media_io::{self, FormatHint};
use mvlens_core::motion_estimation::{self, SearchConfig};
use mvlens_core::motion_stats::{self, HistRange};
use mvlens_core::mv_field::{self, BinaryMask, MagnitudeField, MotionVectorField};
use mvlens_core::report::{self, AnalysisConfig};
use mvlens_core::Error;
use pyo3::exceptions::{PyOSError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::{PyDict, PyList};
use pyo3::IntoPyObjectExt;

fn py_err(e: Error) -> PyErr {
    match e {
        Error::Io { .. } | Error::MissingFile(_) => PyOSError::new_err(e.to_string()),
        Error::Invariant(_) => PyRuntimeError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

fn grid_from_rows<T: Clone>(rows: Vec<Vec<T>>) -> PyResult<Grid<T>> {
    let h = rows.len();
    let w = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != w) {
        return Err(PyValueError::new_err("rows must all have the same length"));
    }
    Grid::from_vec(h, w, rows.into_iter().flatten().collect()).map_err(py_err)
}

fn grid_to_rows<T: Clone>(g: &Grid<T>) -> Vec<Vec<T>> {
    g.as_slice().chunks(g.cols().max(1)).take(g.rows()).map(<[T]>::to_vec).collect()
}

fn json_to_py(py: Python<'_>, v: &serde_json::Value) -> PyResult<Py<PyAny>> {
    use serde_json::Value;
    match v {
        Value::Null => Ok(py.None()),
        Value::Bool(b) => b.into_py_any(py),
        Value::Number(n) => match (n.as_i64(), n.as_f64()) {
            (Some(i), _) => i.into_py_any(py),
            (None, Some(f)) => f.into_py_any(py),
            _ => Err(PyValueError::new_err("unrepresentable number")),
        },
        Value::String(s) => s.into_py_any(py),
        Value::Array(items) => {
            let list = PyList::empty(py);
            for item in items {
                list.append(json_to_py(py, item)?)?;
            }
            list.into_py_any(py)
        }
        Value::Object(map) => {
            let dict = PyDict::new(py);
            for (k, item) in map {
                dict.set_item(k, json_to_py(py, item)?)?;
            }
            dict.into_py_any(py)
        }
    }
}

fn to_py<T: serde::Serialize>(py: Python<'_>, value: &T) -> PyResult<Py<PyAny>> {
    let v = serde_json::to_value(value).map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
    json_to_py(py, &v)
}

/// Block motion field: per-cell displacement `(dx, dy)` and temporal sign.
#[pyclass(name = "MotionField", module = "mvlens", from_py_object)]
#[derive(Clone)]
pub struct PyMotionField {
    inner: MotionVectorField,
}

#[pymethods]
impl PyMotionField {
    #[new]
    #[pyo3(signature = (dx, dy, t_sign, block_size = 1))]
    fn new(dx: Vec<Vec<f64>>, dy: Vec<Vec<f64>>, t_sign: Vec<Vec<i8>>, block_size: usize) -> PyResult<Self> {
        let inner = MotionVectorField::new(
            grid_from_rows(dx)?,
            grid_from_rows(dy)?,
            grid_from_rows(t_sign)?,
            block_size,
        )
        .map_err(py_err)?;
        Ok(PyMotionField { inner })
    }

    #[staticmethod]
    #[pyo3(signature = (rows, cols, dx, dy, t_sign = -1))]
    fn uniform(rows: usize, cols: usize, dx: f64, dy: f64, t_sign: i8) -> PyResult<Self> {
        let inner = MotionVectorField::uniform(rows, cols, dx, dy, t_sign).map_err(py_err)?;
        Ok(PyMotionField { inner })
    }

    #[getter]
    fn shape(&self) -> (usize, usize) {
        self.inner.shape()
    }

    #[getter]
    fn block_size(&self) -> usize {
        self.inner.source_block_size()
    }

    #[getter]
    fn dx(&self) -> Vec<Vec<f64>> {
        grid_to_rows(self.inner.dx())
    }

    #[getter]
    fn dy(&self) -> Vec<Vec<f64>> {
        grid_to_rows(self.inner.dy())
    }

    #[getter]
    fn t_sign(&self) -> Vec<Vec<i8>> {
        grid_to_rows(self.inner.t_sign())
    }

    fn get(&self, r: usize, c: usize) -> PyResult<(f64, f64, i8)> {
        let (rows, cols) = self.inner.shape();
        if r >= rows || c >= cols {
            return Err(PyValueError::new_err(format!("({r}, {c}) outside {rows}x{cols}")));
        }
        Ok(self.inner.get(r, c))
    }

    fn scaled(&self, factor: f64) -> Self {
        PyMotionField {
            inner: self.inner.scaled(factor),
        }
    }

    /// Plain Euclidean magnitude per cell.
    fn magnitude(&self) -> Vec<Vec<f64>> {
        grid_to_rows(mv_field::plain_magnitude(&self.inner).grid())
    }

    fn resize(&self, rows: usize, cols: usize) -> PyResult<Self> {
        let inner = mv_field::resize_bilinear(&self.inner, rows, cols).map_err(py_err)?;
        Ok(PyMotionField { inner })
    }

    fn to_pixel_field(&self, height: usize, width: usize) -> PyResult<Self> {
        let inner = self.inner.to_pixel_field(height, width).map_err(py_err)?;
        Ok(PyMotionField { inner })
    }

    fn __eq__(&self, other: &Self) -> bool {
        self.inner == other.inner
    }

    fn __repr__(&self) -> String {
        let (r, c) = self.inner.shape();
        format!("MotionField({r}x{c}, block_size={})", self.inner.source_block_size())
    }
}

/// Calibrated routing cut points.
#[pyclass(name = "Thresholds", module = "mvlens", from_py_object)]
#[derive(Clone)]
pub struct PyThresholds {
    inner: RoutingThresholds,
}

fn route_name(r: Route) -> &'static str {
    match r {
        Route::Low => "low",
        Route::Mid => "mid",
        Route::High => "high",
    }
}

#[pymethods]
impl PyThresholds {
    #[staticmethod]
    fn fixed(p_low: f64, p_high: f64) -> PyResult<Self> {
        Ok(PyThresholds {
            inner: RoutingThresholds::fixed(p_low, p_high).map_err(py_err)?,
        })
    }

    #[getter]
    fn p_low(&self) -> f64 {
        self.inner.p_low
    }

    #[getter]
    fn p_high(&self) -> f64 {
        self.inner.p_high
    }

    #[getter]
    fn alpha_low(&self) -> f64 {
        self.inner.alpha_low
    }

    #[getter]
    fn alpha_high(&self) -> f64 {
        self.inner.alpha_high
    }

    #[getter]
    fn epsilon(&self) -> f64 {
        self.inner.epsilon
    }

    /// `"low"`, `"mid"` or `"high"`.
    fn route(&self, density: f64) -> &'static str {
        route_name(maf_policy::route(density, &self.inner).route)
    }

    /// `(low, mid, high)` shares of `densities`; they sum to exactly 1.
    fn fractions(&self, densities: Vec<f64>) -> PyResult<(f64, f64, f64)> {
        let [l, m, h] = maf_policy::route_fractions(&densities, &self.inner).map_err(py_err)?;
        Ok((l, m, h))
    }

    fn __repr__(&self) -> String {
        format!("Thresholds(p_low={}, p_high={})", self.inner.p_low, self.inner.p_high)
    }
}

fn search(block_size: usize, search_radius: usize, ref_offset: i64) -> SearchConfig {
    SearchConfig {
        block_size,
        search_radius,
        reference_offset: ref_offset,
    }
}

fn wrap(fields: Vec<MotionVectorField>) -> Vec<PyMotionField> {
    fields.into_iter().map(|inner| PyMotionField { inner }).collect()
}

/// Luma planes of a Y4M file (or raw planar with explicit geometry).
#[pyfunction]
#[pyo3(signature = (path, width = None, height = None, channels = 1))]
fn read_luma(path: PathBuf, width: Option<usize>, height: Option<usize>, channels: usize) -> PyResult<Vec<Vec<Vec<u8>>>> {
    let hint = match (width, height) {
        (Some(width), Some(height)) => FormatHint::Raw {
            width,
            height,
            channels,
        },
        _ => FormatHint::Auto,
    };
    let seq = media_io::read_frames(path, hint).map_err(py_err)?;
    Ok(seq.frames().iter().map(|f| grid_to_rows(&f.luma())).collect())
}

/// Writes 8-bit gray planes as a Y4M stream.
#[pyfunction]
fn write_y4m(frames: Vec<Vec<Vec<u8>>>, path: PathBuf) -> PyResult<()> {
    let frames = frames
        .into_iter()
        .map(|rows| media_io::Frame::from_luma(&grid_from_rows(rows)?).map_err(py_err))
        .collect::<PyResult<Vec<_>>>()?;
    let seq = media_io::FrameSequence::new(frames).map_err(py_err)?;
    media_io::write_y4m(&seq, path).map_err(py_err)
}

#[pyfunction]
#[pyo3(signature = (current, reference, block_size = 16, search_radius = 16, ref_offset = -1))]
fn estimate_field(
    py: Python<'_>,
    current: Vec<Vec<u8>>,
    reference: Vec<Vec<u8>>,
    block_size: usize,
    search_radius: usize,
    ref_offset: i64,
) -> PyResult<PyMotionField> {
    let (cur, refr) = (grid_from_rows(current)?, grid_from_rows(reference)?);
    let cfg = search(block_size, search_radius, ref_offset);
    let inner = py
        .detach(|| motion_estimation::estimate_field(&cur, &refr, &cfg))
        .map_err(py_err)?;
    Ok(PyMotionField { inner })
}

/// One field per frame; frames without an in-range reference are intra.
#[pyfunction]
#[pyo3(signature = (frames, block_size = 16, search_radius = 16, ref_offset = -1))]
fn estimate_sequence(
    py: Python<'_>,
    frames: Vec<Vec<Vec<u8>>>,
    block_size: usize,
    search_radius: usize,
    ref_offset: i64,
) -> PyResult<Vec<PyMotionField>> {
    let frames = frames
        .into_iter()
        .map(|rows| media_io::Frame::from_luma(&grid_from_rows(rows)?).map_err(py_err))
        .collect::<PyResult<Vec<_>>>()?;
    let seq = media_io::FrameSequence::new(frames).map_err(py_err)?;
    let cfg = search(block_size, search_radius, ref_offset);
    let fields = py
        .detach(|| motion_estimation::estimate_sequence(&seq, &cfg))
        .map_err(py_err)?;
    Ok(wrap(fields))
}

#[pyfunction]
#[pyo3(signature = (text, rows, cols, block_size = 1))]
fn parse_mv_sidecar(text: &str, rows: usize, cols: usize, block_size: usize) -> PyResult<Vec<(usize, PyMotionField)>> {
    let fields = media_io::parse_mv_sidecar_indexed(text, rows, cols, block_size).map_err(py_err)?;
    Ok(fields
        .into_iter()
        .map(|(t, inner)| (t, PyMotionField { inner }))
        .collect())
}

#[pyfunction]
fn format_mv_sidecar(fields: Vec<PyMotionField>) -> PyResult<String> {
    let fields: Vec<MotionVectorField> = fields.into_iter().map(|f| f.inner).collect();
    media_io::format_mv_sidecar(&fields).map_err(py_err)
}

/// `{sum, mean, entropy}` of a magnitude map; entropy in bits over `bins`
/// bins on `(0, max]`.
#[pyfunction]
#[pyo3(signature = (magnitudes, bins = 64))]
fn frame_stats(py: Python<'_>, magnitudes: Vec<Vec<f64>>, bins: usize) -> PyResult<Py<PyAny>> {
    let m = MagnitudeField::new(grid_from_rows(magnitudes)?).map_err(py_err)?;
    let s = motion_stats::frame_stats(&m, bins, HistRange::FrameLocal).map_err(py_err)?;
    to_py(py, &s)
}

#[pyfunction]
#[pyo3(signature = (fields, bins = 16))]
fn direction_histogram(py: Python<'_>, fields: Vec<PyMotionField>, bins: usize) -> PyResult<Py<PyAny>> {
    let h = motion_stats::direction_histogram(fields.iter().map(|f| &f.inner), bins).map_err(py_err)?;
    to_py(py, &h)
}

#[pyfunction]
#[pyo3(signature = (series, segments = 5))]
fn motion_evolution(series: Vec<Vec<f64>>, segments: usize) -> PyResult<Vec<f64>> {
    Ok(motion_stats::motion_evolution(&series, segments).map_err(py_err)?.means)
}

#[pyfunction]
fn temporal_interpolate(series: Vec<f64>, target_len: usize) -> PyResult<Vec<f64>> {
    motion_stats::temporal_interpolate(&series, target_len).map_err(py_err)
}

fn hist(p: Vec<f64>) -> PyResult<EmpiricalHistogram> {
    EmpiricalHistogram::from_probabilities(0.0, 1.0, p).map_err(py_err)
}

/// `KL(P‖Q)` in bits between two probability vectors on shared bins.
#[pyfunction]
fn kl(p: Vec<f64>, q: Vec<f64>) -> PyResult<f64> {
    divergence::kl(&hist(p)?, &hist(q)?).map_err(py_err)
}

#[pyfunction]
fn js(p: Vec<f64>, q: Vec<f64>) -> PyResult<f64> {
    divergence::js(&hist(p)?, &hist(q)?).map_err(py_err)
}

/// Exact W1 between two sample sets.
#[pyfunction]
fn wasserstein1(a: Vec<f64>, b: Vec<f64>) -> PyResult<f64> {
    divergence::wasserstein1(&a, &b).map_err(py_err)
}

/// `{kl_pq, kl_qp, js, w1, degenerate_range}` from raw samples.
#[pyfunction]
#[pyo3(signature = (reference, model, bins = 50))]
fn divergences(py: Python<'_>, reference: Vec<f64>, model: Vec<f64>, bins: usize) -> PyResult<Py<PyAny>> {
    let (kl_pq, kl_qp, js, w1, degenerate) =
        divergence::divergence_from_samples(&reference, &model, bins).map_err(py_err)?;
    let d = PyDict::new(py);
    d.set_item("kl_pq", kl_pq)?;
    d.set_item("kl_qp", kl_qp)?;
    d.set_item("js", js)?;
    d.set_item("w1", w1)?;
    d.set_item("degenerate_range", degenerate)?;
    d.into_py_any(py)
}

#[pyfunction]
#[pyo3(signature = (field, q_mv = 0.75))]
fn directional_masks(field: &PyMotionField, q_mv: f64) -> PyResult<Vec<Vec<u8>>> {
    let m = maf_policy::directional_masks(&field.inner, q_mv).map_err(py_err)?;
    Ok(grid_to_rows(m.grid()))
}

#[pyfunction]
fn mask_density(mask: Vec<Vec<u8>>) -> PyResult<f64> {
    let m = BinaryMask::new(grid_from_rows(mask)?).map_err(py_err)?;
    maf_policy::mask_density(&m).map_err(py_err)
}

#[pyfunction]
#[pyo3(signature = (densities, alpha_low = 0.25, alpha_high = 0.75, epsilon = 1e-4))]
fn calibrate_thresholds(densities: Vec<f64>, alpha_low: f64, alpha_high: f64, epsilon: f64) -> PyResult<PyThresholds> {
    let inner = maf_policy::calibrate_thresholds(&densities, alpha_low, alpha_high, epsilon).map_err(py_err)?;
    Ok(PyThresholds { inner })
}

fn config(config: Option<&str>) -> PyResult<AnalysisConfig> {
    match config {
        Some(text) => AnalysisConfig::from_json(text).map_err(py_err),
        None => Ok(AnalysisConfig::default()),
    }
}

/// Default analysis configuration as a dict (pass it back as JSON).
#[pyfunction]
fn default_config(py: Python<'_>) -> PyResult<Py<PyAny>> {
    to_py(py, &AnalysisConfig::default())
}

#[pyfunction]
#[pyo3(signature = (manifest, out, config_json = None, force = false, threads = None))]
fn cmd_estimate(
    py: Python<'_>,
    manifest: PathBuf,
    out: PathBuf,
    config_json: Option<&str>,
    force: bool,
    threads: Option<usize>,
) -> PyResult<Py<PyAny>> {
    let cfg = config(config_json)?;
    let r = py
        .detach(|| report::with_threads(threads, || report::cmd_estimate(&manifest, &out, &cfg, force)))
        .map_err(py_err)?;
    to_py(py, &r)
}

#[pyfunction]
#[pyo3(signature = (manifest, out, config_json = None, threads = None))]
fn cmd_stats(
    py: Python<'_>,
    manifest: PathBuf,
    out: PathBuf,
    config_json: Option<&str>,
    threads: Option<usize>,
) -> PyResult<Py<PyAny>> {
    let cfg = config(config_json)?;
    let r = py
        .detach(|| report::with_threads(threads, || report::cmd_stats(&manifest, &out, &cfg)))
        .map_err(py_err)?;
    to_py(py, &r)
}

#[pyfunction]
#[pyo3(signature = (real_manifest, gen_manifest, out, config_json = None, threads = None))]
fn cmd_compare(
    py: Python<'_>,
    real_manifest: PathBuf,
    gen_manifest: PathBuf,
    out: PathBuf,
    config_json: Option<&str>,
    threads: Option<usize>,
) -> PyResult<Py<PyAny>> {
    let cfg = config(config_json)?;
    let r = py
        .detach(|| {
            report::with_threads(threads, || report::cmd_compare(&real_manifest, &gen_manifest, &out, &cfg))
        })
        .map_err(py_err)?;
    to_py(py, &r)
}

#[pyfunction]
#[pyo3(signature = (manifest, out, config_json = None, threads = None))]
fn cmd_calibrate(
    py: Python<'_>,
    manifest: PathBuf,
    out: PathBuf,
    config_json: Option<&str>,
    threads: Option<usize>,
) -> PyResult<Py<PyAny>> {
    let cfg = config(config_json)?;
    let r = py
        .detach(|| report::with_threads(threads, || report::cmd_calibrate(&manifest, &out, &cfg)))
        .map_err(py_err)?;
    to_py(py, &r)
}

#[pymodule]
fn mvlens(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("__version__", report::TOOL_VERSION)?;
    m.add("METRIC_NAMES", divergence::METRIC_NAMES.to_vec())?;
    m.add_class::<PyMotionField>()?;
    m.add_class::<PyThresholds>()?;
    m.add_function(wrap_pyfunction!(read_luma, m)?)?;
    m.add_function(wrap_pyfunction!(write_y4m, m)?)?;
    m.add_function(wrap_pyfunction!(estimate_field, m)?)?;
    m.add_function(wrap_pyfunction!(estimate_sequence, m)?)?;
    m.add_function(wrap_pyfunction!(parse_mv_sidecar, m)?)?;
    m.add_function(wrap_pyfunction!(format_mv_sidecar, m)?)?;
    m.add_function(wrap_pyfunction!(frame_stats, m)?)?;
    m.add_function(wrap_pyfunction!(direction_histogram, m)?)?;
    m.add_function(wrap_pyfunction!(motion_evolution, m)?)?;
    m.add_function(wrap_pyfunction!(temporal_interpolate, m)?)?;
    m.add_function(wrap_pyfunction!(kl, m)?)?;
    m.add_function(wrap_pyfunction!(js, m)?)?;
    m.add_function(wrap_pyfunction!(wasserstein1, m)?)?;
    m.add_function(wrap_pyfunction!(divergences, m)?)?;
    m.add_function(wrap_pyfunction!(directional_masks, m)?)?;
    m.add_function(wrap_pyfunction!(mask_density, m)?)?;
    m.add_function(wrap_pyfunction!(calibrate_thresholds, m)?)?;
    m.add_function(wrap_pyfunction!(default_config, m)?)?;
    m.add_function(wrap_pyfunction!(cmd_estimate, m)?)?;
    m.add_function(wrap_pyfunction!(cmd_stats, m)?)?;
    m.add_function(wrap_pyfunction!(cmd_compare, m)?)?;
    m.add_function(wrap_pyfunction!(cmd_calibrate, m)?)?;
    Ok(())
}
