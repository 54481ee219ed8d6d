//! Python bindings. Bulk voxel data crosses the boundary as little-endian
//! `bytes` (float32 for volumes, uint8 for masks) so callers can wrap it with
//! `numpy.frombuffer` without copying element by element.

use std::path::PathBuf;

use pyo3::exceptions::{PyConnectionError, PyIOError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::{PyBytes, PyDict};
use seg_core::backends::BackendSpec;
use seg_core::geometry::{self, Label, PromptFile, Vec3};
use seg_core::pipeline::{self, RunConfig};
use seg_core::recompose::{self, MeshFormat, PostprocessFlags};
use seg_core::volume::{self as vol, Grid, VolumeFormat};
use seg_core::{metrics, phantom, slicing, Error};

fn py_err(e: Error) -> PyErr {
    match e {
        Error::BackendUnavailable(_) | Error::ProtocolError(_) => PyConnectionError::new_err(e.to_string()),
        Error::Io(_) => PyIOError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

/// Any serializable value as plain Python objects, via `json`.
fn to_py<'py>(py: Python<'py>, v: &impl serde::Serialize) -> PyResult<Bound<'py, PyAny>> {
    let s = serde_json::to_string(v).map_err(|e| PyValueError::new_err(e.to_string()))?;
    py.import("json")?.call_method1("loads", (s,))
}

fn grid_from(dims: [usize; 3], spacing: [f64; 3], origin: Option<[f64; 3]>, direction: Option<[[f64; 3]; 3]>) -> PyResult<Grid> {
    let origin = Vec3::from(origin.unwrap_or([0.0; 3]));
    let dir = direction.map(|rows| nalgebra::Matrix3::from_fn(|r, c| rows[r][c])).unwrap_or_else(nalgebra::Matrix3::identity);
    Grid::with_affine(dims, spacing, origin, dir).map_err(py_err)
}

/// Scalar volume on a regular grid, stored x fastest.
#[pyclass(name = "Volume", module = "seg3d", skip_from_py_object)]
#[derive(Clone)]
pub struct PyVolume {
    inner: vol::Volume,
}

#[pymethods]
impl PyVolume {
    #[new]
    #[pyo3(signature = (dims, spacing, data, origin=None, direction=None))]
    fn new(dims: [usize; 3], spacing: [f64; 3], data: Vec<f32>, origin: Option<[f64; 3]>, direction: Option<[[f64; 3]; 3]>) -> PyResult<Self> {
        let grid = grid_from(dims, spacing, origin, direction)?;
        Ok(PyVolume { inner: vol::Volume::new(grid, data).map_err(py_err)? })
    }

    /// Load NIfTI-1 (`.nii`, `.nii.gz`) or rawjson (`.json` + `.raw`).
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(PyVolume { inner: vol::load_volume_auto(path).map_err(py_err)? })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        vol::save_volume(&self.inner, path).map_err(py_err)
    }

    #[getter]
    fn dims(&self) -> [usize; 3] {
        self.inner.grid.dims
    }

    #[getter]
    fn spacing(&self) -> [f64; 3] {
        self.inner.grid.spacing
    }

    #[getter]
    fn origin(&self) -> [f64; 3] {
        self.inner.grid.origin.into()
    }

    /// Voxels as little-endian float32 bytes.
    fn data_bytes<'py>(&self, py: Python<'py>) -> Bound<'py, PyBytes> {
        let raw: Vec<u8> = self.inner.data.iter().flat_map(|x| x.to_le_bytes()).collect();
        PyBytes::new(py, &raw)
    }

    fn get(&self, i: usize, j: usize, k: usize) -> PyResult<f32> {
        let [nx, ny, nz] = self.inner.grid.dims;
        if i >= nx || j >= ny || k >= nz {
            return Err(PyValueError::new_err("index outside the grid"));
        }
        Ok(self.inner.get(i, j, k))
    }

    fn resample_isotropic(&self) -> Self {
        PyVolume { inner: vol::resample_isotropic(&self.inner) }
    }

    /// Grayscale slice as the segmenter sees it: `(pixels, width, height, frame)`.
    #[pyo3(signature = (axis_id, index, k=3, stride=1))]
    fn slice<'py>(&self, py: Python<'py>, axis_id: usize, index: usize, k: usize, stride: usize) -> PyResult<(Bound<'py, PyBytes>, usize, usize, Bound<'py, PyAny>)> {
        let (_, nv) = pipeline::prepare(&self.inner, vol::DEFAULT_WINDOW).map_err(py_err)?;
        let frames = slicing::frames_for_axes(&nv.grid, &geometry::axis_set(k).map_err(py_err)?, stride).map_err(py_err)?;
        let frame = frames
            .get(axis_id)
            .and_then(|f| f.get(index))
            .ok_or_else(|| PyValueError::new_err(format!("no frame for axis {axis_id} index {index}")))?;
        let s = slicing::extract_slice(&nv, frame);
        Ok((PyBytes::new(py, &s.pixels), s.width(), s.height(), to_py(py, frame)?))
    }

    fn __repr__(&self) -> String {
        format!("Volume(dims={:?}, spacing={:?})", self.inner.grid.dims, self.inner.grid.spacing)
    }
}

/// Binary mask on a regular grid.
#[pyclass(name = "Mask", module = "seg3d", skip_from_py_object)]
#[derive(Clone)]
pub struct PyMask {
    inner: vol::MaskVolume,
}

#[pymethods]
impl PyMask {
    #[new]
    #[pyo3(signature = (dims, spacing, data, origin=None, direction=None))]
    fn new(dims: [usize; 3], spacing: [f64; 3], data: Vec<u8>, origin: Option<[f64; 3]>, direction: Option<[[f64; 3]; 3]>) -> PyResult<Self> {
        let grid = grid_from(dims, spacing, origin, direction)?;
        let data = data.into_iter().map(|x| u8::from(x != 0)).collect();
        Ok(PyMask { inner: vol::MaskVolume::new(grid, data).map_err(py_err)? })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(PyMask { inner: vol::load_mask(path).map_err(py_err)? })
    }

    /// NIfTI-1 uint8, gzip-compressed when the name ends in `.gz`; `.json` writes rawjson.
    fn save(&self, path: PathBuf) -> PyResult<()> {
        let format = VolumeFormat::from_path(&path);
        vol::save_mask(&self.inner, path, format).map_err(py_err)
    }

    #[getter]
    fn dims(&self) -> [usize; 3] {
        self.inner.grid.dims
    }

    #[getter]
    fn spacing(&self) -> [f64; 3] {
        self.inner.grid.spacing
    }

    fn data_bytes<'py>(&self, py: Python<'py>) -> Bound<'py, PyBytes> {
        PyBytes::new(py, &self.inner.data)
    }

    fn count(&self) -> usize {
        self.inner.count()
    }

    fn dice(&self, other: &PyMask) -> PyResult<f64> {
        metrics::dice(&self.inner, &other.inner).map_err(py_err)
    }

    /// `{voxels, volume_mm3, components}`.
    fn stats<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, &metrics::stats(&self.inner))
    }

    fn mesh(&self) -> PyResult<PyMesh> {
        Ok(PyMesh { inner: recompose::marching_cubes(&self.inner).map_err(py_err)? })
    }

    fn __repr__(&self) -> String {
        format!("Mask(dims={:?}, voxels={})", self.inner.grid.dims, self.inner.count())
    }
}

#[pyclass(name = "Mesh", module = "seg3d", skip_from_py_object)]
#[derive(Clone)]
pub struct PyMesh {
    inner: recompose::Mesh,
}

#[pymethods]
impl PyMesh {
    #[getter]
    fn vertices(&self) -> Vec<[f64; 3]> {
        self.inner.vertices.iter().map(|v| [v.x, v.y, v.z]).collect()
    }

    #[getter]
    fn triangles(&self) -> Vec<[u32; 3]> {
        self.inner.triangles.clone()
    }

    fn area(&self) -> f64 {
        self.inner.area()
    }

    fn volume(&self) -> f64 {
        self.inner.signed_volume()
    }

    fn is_closed(&self) -> bool {
        self.inner.is_closed_and_oriented()
    }

    fn euler_characteristic(&self) -> i64 {
        self.inner.euler_characteristic()
    }

    /// Binary STL, or ASCII OBJ for `.obj` paths.
    fn save(&self, path: PathBuf) -> PyResult<()> {
        recompose::export_mesh(&self.inner, MeshFormat::from_path(&path), path).map_err(py_err)
    }

    fn __repr__(&self) -> String {
        format!("Mesh(vertices={}, triangles={})", self.inner.vertices.len(), self.inner.triangles.len())
    }
}

/// A positive or negative prompt polyline in world millimetres.
#[pyclass(name = "Polyline", module = "seg3d", skip_from_py_object)]
#[derive(Clone)]
pub struct PyPolyline {
    inner: geometry::Polyline,
}

fn parse_label(label: &str) -> PyResult<Label> {
    match label {
        "positive" | "pos" | "+" => Ok(Label::Positive),
        "negative" | "neg" | "-" => Ok(Label::Negative),
        _ => Err(PyValueError::new_err(format!("label must be 'positive' or 'negative', got {label:?}"))),
    }
}

#[pymethods]
impl PyPolyline {
    #[new]
    fn new(label: &str, points: Vec<[f64; 3]>) -> PyResult<Self> {
        let points = points.into_iter().map(Vec3::from).collect();
        Ok(PyPolyline { inner: geometry::Polyline::new(parse_label(label)?, points).map_err(py_err)? })
    }

    #[getter]
    fn label(&self) -> &'static str {
        match self.inner.label {
            Label::Positive => "positive",
            Label::Negative => "negative",
        }
    }

    #[getter]
    fn points(&self) -> Vec<[f64; 3]> {
        self.inner.points.iter().map(|v| [v.x, v.y, v.z]).collect()
    }

    fn __repr__(&self) -> String {
        format!("Polyline({:?}, {} points)", self.label(), self.inner.points.len())
    }
}

fn polylines(prompts: &[PyRef<'_, PyPolyline>]) -> Vec<geometry::Polyline> {
    prompts.iter().map(|p| p.inner.clone()).collect()
}

#[pyclass(name = "RunResult", module = "seg3d", skip_from_py_object)]
pub struct PyRunResult {
    #[pyo3(get)]
    mask: Py<PyMask>,
    #[pyo3(get)]
    mesh: Py<PyMesh>,
    stats: pipeline::RunStats,
}

#[pymethods]
impl PyRunResult {
    /// Task counts, point counts and per-stage wall time.
    #[getter]
    fn stats<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, &self.stats)
    }
}

#[pyfunction]
fn load_prompts(path: PathBuf) -> PyResult<Vec<PyPolyline>> {
    Ok(geometry::load_prompts(path).map_err(py_err)?.into_iter().map(|inner| PyPolyline { inner }).collect())
}

#[pyfunction]
fn save_prompts(prompts: Vec<PyRef<'_, PyPolyline>>, path: PathBuf) -> PyResult<()> {
    let json = serde_json::to_vec_pretty(&PromptFile::from_polylines(&polylines(&prompts))).map_err(|e| PyValueError::new_err(e.to_string()))?;
    std::fs::write(path, json).map_err(|e| PyIOError::new_err(e.to_string()))
}

/// Unit slice normals for `k` in {3, 4, 6, 10}.
#[pyfunction]
fn axis_set(k: usize) -> PyResult<Vec<[f64; 3]>> {
    Ok(geometry::axis_set(k).map_err(py_err)?.axes.iter().map(|a| [a.x, a.y, a.z]).collect())
}

#[pyfunction]
fn dice(a: &PyMask, b: &PyMask) -> PyResult<f64> {
    a.dice(b)
}

/// Segment `volume` from `prompts`. Keyword arguments mirror `seg run`.
#[pyfunction]
#[pyo3(signature = (volume, prompts, k=3, stride=1, backend="flood:128", min_axes=None, min_hits=None, seed=0, workers=None, largest_component=false, closing=0, original_grid=false))]
#[allow(clippy::too_many_arguments)]
fn run(
    py: Python<'_>,
    volume: &PyVolume,
    prompts: Vec<PyRef<'_, PyPolyline>>,
    k: usize,
    stride: usize,
    backend: &str,
    min_axes: Option<usize>,
    min_hits: Option<u32>,
    seed: u64,
    workers: Option<usize>,
    largest_component: bool,
    closing: usize,
    original_grid: bool,
) -> PyResult<PyRunResult> {
    let cfg = RunConfig {
        k,
        stride,
        backend: backend.parse::<BackendSpec>().map_err(py_err)?,
        min_axes,
        min_hits,
        seed,
        workers,
        postprocess: PostprocessFlags { largest_component, closing_radius: closing },
        original_grid,
        ..Default::default()
    };
    let prompts = polylines(&prompts);
    let v = volume.inner.clone();
    let res = py.detach(move || pipeline::run_pipeline(&v, &prompts, &cfg)).map_err(py_err)?;
    Ok(PyRunResult {
        mask: Py::new(py, PyMask { inner: res.mask })?,
        mesh: Py::new(py, PyMesh { inner: res.mesh })?,
        stats: res.stats,
    })
}

fn phantom_tuple(ph: phantom::Phantom) -> (PyVolume, PyMask, Vec<PyPolyline>) {
    (
        PyVolume { inner: ph.volume },
        PyMask { inner: ph.truth },
        ph.prompts.into_iter().map(|inner| PyPolyline { inner }).collect(),
    )
}

/// `(volume, truth, prompts)` for a ball of radius `r` in an `n`³ grid.
#[pyfunction]
fn phantom_sphere(n: usize, r: f64) -> (PyVolume, PyMask, Vec<PyPolyline>) {
    phantom_tuple(phantom::sphere(n, r))
}

/// `(volume, truth, prompts)` for an axis-aligned ellipsoid.
#[pyfunction]
fn phantom_ellipsoid(n: usize, radii: [f64; 3]) -> (PyVolume, PyMask, Vec<PyPolyline>) {
    phantom_tuple(phantom::ellipsoid(n, radii))
}

#[pymodule]
fn seg3d(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyVolume>()?;
    m.add_class::<PyMask>()?;
    m.add_class::<PyMesh>()?;
    m.add_class::<PyPolyline>()?;
    m.add_class::<PyRunResult>()?;
    m.add_function(wrap_pyfunction!(load_prompts, m)?)?;
    m.add_function(wrap_pyfunction!(save_prompts, m)?)?;
    m.add_function(wrap_pyfunction!(axis_set, m)?)?;
    m.add_function(wrap_pyfunction!(dice, m)?)?;
    m.add_function(wrap_pyfunction!(run, m)?)?;
    m.add_function(wrap_pyfunction!(phantom_sphere, m)?)?;
    m.add_function(wrap_pyfunction!(phantom_ellipsoid, m)?)?;
    let dict = PyDict::new(m.py());
    dict.set_item("supported_axis_counts", geometry::SUPPORTED_AXIS_COUNTS.to_vec())?;
    m.add("info", dict)?;
    Ok(())
}
