//! Python bindings. Images cross the boundary as `float64` arrays of shape
//! `(H, W, 3)` in `[0, 1]`; range maps as `(H, W)` arrays in meters.

use std::path::PathBuf;

use ndarray::{Array2, Array3};
use numpy::{PyArray1, PyArray2, PyArray3, PyArrayMethods, PyReadonlyArray2, PyReadonlyArray3, PyUntypedArrayMethods};
use pyo3::exceptions::{PyIOError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use uwrestore_core::imaging::{self, ImageRgb};
use uwrestore_core::networks::{self as nets, Generator};
use uwrestore_core::physics::{self, ChannelTriple, DegradationParams, DepthMap};
use uwrestore_core::{dcp, metrics, trainer, Error};

fn to_py(e: Error) -> PyErr {
    match e {
        Error::Io { .. } | Error::Decode { .. } => PyIOError::new_err(e.to_string()),
        Error::Contract(_) | Error::InvalidParams(_) | Error::Config(_) | Error::Checkpoint(_) => {
            PyValueError::new_err(e.to_string())
        }
        _ => PyRuntimeError::new_err(e.to_string()),
    }
}

// numpy links its own ndarray version, so data crosses as flat row-major vectors.

fn image_in(a: &PyReadonlyArray3<'_, f64>) -> PyResult<ImageRgb> {
    let shape = a.shape();
    if shape[2] != 3 {
        return Err(PyValueError::new_err(format!("expected (H, W, 3), got {shape:?}")));
    }
    let flat: Vec<f64> = a.as_array().iter().copied().collect();
    let hwc = Array3::from_shape_vec((shape[0], shape[1], 3), flat).expect("shape matches length");
    ImageRgb::from_array(hwc.permuted_axes([2, 0, 1]).as_standard_layout().into_owned()).map_err(to_py)
}

fn depth_in(a: &PyReadonlyArray2<'_, f64>) -> PyResult<DepthMap> {
    let shape = a.shape();
    let flat: Vec<f64> = a.as_array().iter().copied().collect();
    DepthMap::new(Array2::from_shape_vec((shape[0], shape[1]), flat).expect("shape matches length")).map_err(to_py)
}

/// Channel-first array to an `(H, W, 3)` numpy array.
fn image_out<'py>(py: Python<'py>, chw: Array3<f64>) -> PyResult<Bound<'py, PyArray3<f64>>> {
    let (h, w) = (chw.shape()[1], chw.shape()[2]);
    let flat: Vec<f64> = chw.permuted_axes([1, 2, 0]).iter().copied().collect();
    PyArray1::from_vec(py, flat).reshape([h, w, 3])
}

fn plane_out<'py, T: numpy::Element + Copy>(py: Python<'py>, a: &Array2<T>) -> PyResult<Bound<'py, PyArray2<T>>> {
    let (h, w) = a.dim();
    PyArray1::from_vec(py, a.iter().copied().collect()).reshape([h, w])
}

/// Per-channel attenuation `t_d`, backscatter `t_b` and veiling light
/// `b_inf`, each an `(r, g, b)` tuple.
#[pyclass(name = "DegradationParams", from_py_object)]
#[derive(Clone)]
struct PyParams {
    inner: DegradationParams,
}

fn triple(t: (f64, f64, f64)) -> ChannelTriple {
    ChannelTriple::new(t.0, t.1, t.2)
}

fn tuple(t: ChannelTriple) -> (f64, f64, f64) {
    (t.r, t.g, t.b)
}

#[pymethods]
impl PyParams {
    #[new]
    fn new(t_d: (f64, f64, f64), t_b: (f64, f64, f64), b_inf: (f64, f64, f64)) -> PyResult<Self> {
        let inner = DegradationParams::new(triple(t_d), triple(t_b), triple(b_inf)).map_err(to_py)?;
        Ok(Self { inner })
    }

    #[staticmethod]
    fn from_toml(text: &str) -> PyResult<Self> {
        Ok(Self { inner: DegradationParams::from_toml(text).map_err(to_py)? })
    }

    fn to_toml(&self) -> String {
        self.inner.to_toml()
    }

    #[getter]
    fn t_d(&self) -> (f64, f64, f64) {
        tuple(self.inner.t_d)
    }

    #[getter]
    fn t_b(&self) -> (f64, f64, f64) {
        tuple(self.inner.t_b)
    }

    #[getter]
    fn b_inf(&self) -> (f64, f64, f64) {
        tuple(self.inner.b_inf)
    }

    fn __repr__(&self) -> String {
        format!(
            "DegradationParams(t_d={:?}, t_b={:?}, b_inf={:?})",
            self.t_d(),
            self.t_b(),
            self.b_inf()
        )
    }
}

/// Unclipped forward model output.
#[pyfunction]
fn degrade<'py>(
    py: Python<'py>,
    image: PyReadonlyArray3<'py, f64>,
    depth: PyReadonlyArray2<'py, f64>,
    params: &PyParams,
) -> PyResult<Bound<'py, PyArray3<f64>>> {
    let out = physics::degrade(&image_in(&image)?, &depth_in(&depth)?, &params.inner)
        .map_err(to_py)?;
    image_out(py, out.raw)
}

/// Unclipped inverse model output.
#[pyfunction]
fn restore<'py>(
    py: Python<'py>,
    image: PyReadonlyArray3<'py, f64>,
    depth: PyReadonlyArray2<'py, f64>,
    params: &PyParams,
) -> PyResult<Bound<'py, PyArray3<f64>>> {
    let out = physics::restore(&image_in(&image)?, &depth_in(&depth)?, &params.inner)
        .map_err(to_py)?;
    image_out(py, out.raw)
}

#[pyfunction]
fn estimate_backscatter<'py>(
    py: Python<'py>,
    depth: PyReadonlyArray2<'py, f64>,
    params: &PyParams,
) -> PyResult<Bound<'py, PyArray3<f64>>> {
    let b = physics::estimate_backscatter(&depth_in(&depth)?, &params.inner);
    image_out(py, b.into_array())
}

/// Least-squares constant parameters explaining `degraded` from `clean`.
/// Returns `(params, residual)`.
#[pyfunction]
fn fit_constant_params(
    degraded: PyReadonlyArray3<'_, f64>,
    clean: PyReadonlyArray3<'_, f64>,
    depth: PyReadonlyArray2<'_, f64>,
) -> PyResult<(PyParams, f64)> {
    let fit = physics::fit_constant_params(
        &image_in(&degraded)?,
        &image_in(&clean)?,
        &depth_in(&depth)?,
    )
    .map_err(to_py)?;
    Ok((PyParams { inner: fit.params }, fit.residual))
}

#[pyfunction]
fn dcp_map<'py>(py: Python<'py>, image: PyReadonlyArray3<'py, f64>) -> PyResult<Bound<'py, PyArray2<f64>>> {
    plane_out(py, dcp::dcp_map(&image_in(&image)?).data())
}

/// 0/1 mask over the darkest dark-channel pixels.
#[pyfunction]
#[pyo3(signature = (image, fraction = dcp::DEFAULT_MASK_FRACTION, cap = dcp::DEFAULT_MASK_CAP))]
fn darkest_mask<'py>(
    py: Python<'py>,
    image: PyReadonlyArray3<'py, f64>,
    fraction: f64,
    cap: usize,
) -> PyResult<Bound<'py, PyArray2<u8>>> {
    if !(fraction > 0.0 && fraction <= 1.0) || cap == 0 {
        return Err(PyValueError::new_err("fraction must be in (0, 1] and cap positive"));
    }
    let map = dcp::dcp_map(&image_in(&image)?);
    plane_out(py, dcp::darkest_mask(&map, fraction, cap).data())
}

#[pyfunction]
fn uciqe<'py>(py: Python<'py>, image: PyReadonlyArray3<'py, f64>) -> PyResult<Bound<'py, PyDict>> {
    let q = metrics::uciqe(&image_in(&image)?);
    let d = PyDict::new(py);
    d.set_item("sigma_c", q.sigma_c)?;
    d.set_item("con_l", q.con_l)?;
    d.set_item("mu_s", q.mu_s)?;
    d.set_item("uciqe", q.uciqe)?;
    Ok(d)
}

#[pyfunction]
fn lab_u_index<'py>(py: Python<'py>, image: PyReadonlyArray3<'py, f64>) -> PyResult<Bound<'py, PyDict>> {
    let u = metrics::lab_u_index(&image_in(&image)?);
    let d = PyDict::new(py);
    d.set_item("d_o", u.d_o)?;
    d.set_item("d_a", u.d_a)?;
    d.set_item("d_b", u.d_b)?;
    d.set_item("a_l", u.a_l)?;
    d.set_item("u", u.u)?;
    d.set_item("degenerate", u.degenerate)?;
    Ok(d)
}

#[pyfunction]
fn rms_contrast(image: PyReadonlyArray3<'_, f64>) -> PyResult<f64> {
    Ok(metrics::rms_contrast(&image_in(&image)?))
}

#[pyfunction]
fn laplacian_variance(image: PyReadonlyArray3<'_, f64>) -> PyResult<f64> {
    Ok(metrics::laplacian_variance(&image_in(&image)?))
}

#[pyfunction]
fn ssim(a: PyReadonlyArray3<'_, f64>, b: PyReadonlyArray3<'_, f64>) -> PyResult<f64> {
    metrics::ssim(&image_in(&a)?, &image_in(&b)?).map_err(to_py)
}

/// Keypoint counts: `(sift, harris)`.
#[pyfunction]
fn feature_counts(image: PyReadonlyArray3<'_, f64>) -> PyResult<(usize, usize)> {
    let c = metrics::feature_counts(&image_in(&image)?);
    Ok((c.sift, c.harris))
}

#[pyfunction]
fn load_image<'py>(py: Python<'py>, path: PathBuf) -> PyResult<Bound<'py, PyArray3<f64>>> {
    let img = imaging::load_image_native(path).map_err(to_py)?;
    image_out(py, img.into_array())
}

#[pyfunction]
fn save_png(image: PyReadonlyArray3<'_, f64>, path: PathBuf) -> PyResult<()> {
    imaging::save_png(&image_in(&image)?, path).map_err(to_py)
}

/// The restoring generator of a training checkpoint.
#[pyclass(unsendable)]
struct Restorer {
    f: Generator,
    #[pyo3(get)]
    size: usize,
}

#[pymethods]
impl Restorer {
    #[new]
    #[pyo3(signature = (checkpoint, size = 256))]
    fn new(checkpoint: PathBuf, size: usize) -> PyResult<Self> {
        let (_, f, _) = trainer::load_generators(&checkpoint).map_err(to_py)?;
        if size < f.min_side() as usize {
            return Err(PyValueError::new_err(format!("size must be at least {}", f.min_side())));
        }
        Ok(Self { f, size })
    }

    /// Returns `(restored, depth, backscatter)` at the input resolution.
    fn restore<'py>(
        &self,
        py: Python<'py>,
        image: PyReadonlyArray3<'py, f64>,
    ) -> PyResult<(Bound<'py, PyArray3<f64>>, Bound<'py, PyArray2<f64>>, Bound<'py, PyArray3<f64>>)> {
        let r = nets::restore_image(&self.f, &image_in(&image)?, self.size).map_err(to_py)?;
        Ok((
            image_out(py, r.restored.into_array())?,
            plane_out(py, r.depth.data())?,
            image_out(py, r.backscatter.into_array())?,
        ))
    }
}

#[pymodule]
fn uwrestore(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyParams>()?;
    m.add_class::<Restorer>()?;
    m.add_function(wrap_pyfunction!(degrade, m)?)?;
    m.add_function(wrap_pyfunction!(restore, m)?)?;
    m.add_function(wrap_pyfunction!(estimate_backscatter, m)?)?;
    m.add_function(wrap_pyfunction!(fit_constant_params, m)?)?;
    m.add_function(wrap_pyfunction!(dcp_map, m)?)?;
    m.add_function(wrap_pyfunction!(darkest_mask, m)?)?;
    m.add_function(wrap_pyfunction!(uciqe, m)?)?;
    m.add_function(wrap_pyfunction!(lab_u_index, m)?)?;
    m.add_function(wrap_pyfunction!(rms_contrast, m)?)?;
    m.add_function(wrap_pyfunction!(laplacian_variance, m)?)?;
    m.add_function(wrap_pyfunction!(ssim, m)?)?;
    m.add_function(wrap_pyfunction!(feature_counts, m)?)?;
    m.add_function(wrap_pyfunction!(load_image, m)?)?;
    m.add_function(wrap_pyfunction!(save_png, m)?)?;
    m.add("MAX_DEPTH", physics::MAX_DEPTH)?;
    Ok(())
}
