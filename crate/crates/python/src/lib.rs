//! Python bindings. Images cross the boundary as row-major `bytes` (RGB interleaved),
//! heightmaps as flat lists of floats.

use std::path::PathBuf;

use pyo3::create_exception;
use pyo3::exceptions::PyException;
use pyo3::prelude::*;
use pyo3::types::{PyBytes, PyDict};
use shadowheight_core::grids::RgbImage;
use shadowheight_core::infer::{plan_tiles as core_plan_tiles, predict_full, predict_patch};
use shadowheight_core::net::{build_model, count_parameters, Model as CoreModel, Preset};
use shadowheight_core::shadow::{compute_shadow_map, ShadowParams};
use shadowheight_core::synth::{generate_scene as core_generate_scene, SceneParams};
use shadowheight_core::train::{load_checkpoint, save_checkpoint, Checkpoint, CheckpointMeta};

create_exception!(shadowheight, ShadowHeightError, PyException);

fn err(e: shadowheight_core::Error) -> PyErr {
    ShadowHeightError::new_err(format!("[{}] {e}", e.kind()))
}

fn rgb_image(rgb: &[u8], height: usize, width: usize) -> PyResult<RgbImage> {
    RgbImage::new(height, width, rgb.to_vec()).map_err(err)
}

/// Binary shadow map (one byte per pixel, 1 = shadow) of an RGB image.
#[pyfunction]
#[pyo3(signature = (rgb, height, width, threshold=15, blur_sigma=1.0, contrast_stretch=true, percentiles=(2.0, 98.0)))]
fn shadow_map<'py>(
    py: Python<'py>,
    rgb: &[u8],
    height: usize,
    width: usize,
    threshold: u8,
    blur_sigma: f64,
    contrast_stretch: bool,
    percentiles: (f64, f64),
) -> PyResult<Bound<'py, PyBytes>> {
    let params = ShadowParams {
        contrast_stretch,
        percentiles,
        blur_sigma,
        threshold,
    };
    params.validate().map_err(err)?;
    let map = compute_shadow_map(&rgb_image(rgb, height, width)?, &params);
    Ok(PyBytes::new(py, map.values()))
}

#[pyfunction]
fn shadow_length_px(height: f64, elevation: f64, gsd: f64) -> PyResult<usize> {
    shadowheight_core::synth::shadow_length_px(height, elevation, gsd).map_err(err)
}

/// Tiling geometry for whole-image inference.
#[pyfunction]
fn plan_tiles<'py>(py: Python<'py>, height: usize, width: usize, patch: usize, ratio: usize) -> PyResult<Bound<'py, PyDict>> {
    let l = core_plan_tiles(height, width, patch, ratio).map_err(err)?;
    let d = PyDict::new(py);
    d.set_item("grid_rows", l.grid_rows)?;
    d.set_item("grid_cols", l.grid_cols)?;
    d.set_item("pad_bottom", l.pad_bottom)?;
    d.set_item("pad_right", l.pad_right)?;
    d.set_item("out_height", l.out_height)?;
    d.set_item("out_width", l.out_width)?;
    Ok(d)
}

fn preset(name: &str) -> PyResult<Preset> {
    name.parse().map_err(err)
}

/// Trainable parameter count of a preset.
#[pyfunction]
#[pyo3(signature = (name, use_shadow=true))]
fn parameter_count(name: &str, use_shadow: bool) -> PyResult<usize> {
    let model = CoreModel::<f32>::skeleton(&preset(name)?.spec(use_shadow)).map_err(err)?;
    Ok(count_parameters(&model))
}

/// One synthetic scene: `(rgb bytes, target heights, target height, target width)`.
#[pyfunction]
#[pyo3(signature = (seed=0, world=256, n_buildings=12))]
fn generate_scene<'py>(
    py: Python<'py>,
    seed: u64,
    world: usize,
    n_buildings: usize,
) -> PyResult<(Bound<'py, PyBytes>, Vec<f32>, usize, usize)> {
    let params = SceneParams {
        seed,
        world,
        n_buildings,
        ..SceneParams::default()
    };
    let scene = core_generate_scene(&params).map_err(err)?;
    Ok((
        PyBytes::new(py, scene.rgb.as_bytes()),
        scene.target.values().to_vec(),
        scene.target.height(),
        scene.target.width(),
    ))
}

/// A network in evaluation mode.
#[pyclass(name = "Model", module = "shadowheight")]
struct PyModel {
    inner: CoreModel<f32>,
}

#[pymethods]
impl PyModel {
    /// Freshly initialized preset network.
    #[new]
    #[pyo3(signature = (preset_name, use_shadow=true, seed=0))]
    fn new(preset_name: &str, use_shadow: bool, seed: u64) -> PyResult<Self> {
        let inner = build_model(&preset(preset_name)?.spec(use_shadow), seed).map_err(err)?;
        Ok(Self { inner })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        let inner = load_checkpoint(&path).and_then(|c| c.model()).map_err(err)?;
        Ok(Self { inner })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        save_checkpoint(&Checkpoint::capture(&self.inner, None, CheckpointMeta::default()), &path).map_err(err)
    }

    #[getter]
    fn name(&self) -> String {
        self.inner.spec().name.clone()
    }

    #[getter]
    fn input_size(&self) -> usize {
        self.inner.spec().input_size
    }

    #[getter]
    fn output_size(&self) -> usize {
        self.inner.spec().output_size
    }

    #[getter]
    fn uses_shadow_channel(&self) -> bool {
        self.inner.spec().uses_shadow_channel()
    }

    #[getter]
    fn parameter_count(&self) -> usize {
        count_parameters(&self.inner)
    }

    /// Unclamped heights for one input-sized patch, row-major.
    fn predict_patch(&self, py: Python<'_>, rgb: &[u8]) -> PyResult<Vec<f32>> {
        let n = self.inner.spec().input_size;
        let image = rgb_image(rgb, n, n)?;
        let model = &self.inner;
        py.detach(|| predict_patch(model, &image, &ShadowParams::default()))
            .map(|t| t.into_vec())
            .map_err(err)
    }

    /// Whole-image heightmap: `(heights, height, width, gsd)`.
    #[pyo3(signature = (rgb, height, width, gsd=0.25))]
    fn predict(&self, py: Python<'_>, rgb: &[u8], height: usize, width: usize, gsd: f64) -> PyResult<(Vec<f32>, usize, usize, f64)> {
        let image = rgb_image(rgb, height, width)?;
        let model = &self.inner;
        let grid = py
            .detach(|| predict_full(model, &image, &ShadowParams::default(), gsd))
            .map_err(err)?;
        Ok((grid.values().to_vec(), grid.height(), grid.width(), grid.gsd()))
    }

    fn __repr__(&self) -> String {
        format!(
            "Model(name={:?}, input={}, output={}, shadow_channel={})",
            self.inner.spec().name,
            self.inner.spec().input_size,
            self.inner.spec().output_size,
            self.inner.spec().uses_shadow_channel()
        )
    }
}

#[pymodule]
fn shadowheight(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("ShadowHeightError", m.py().get_type::<ShadowHeightError>())?;
    m.add_class::<PyModel>()?;
    m.add_function(wrap_pyfunction!(shadow_map, m)?)?;
    m.add_function(wrap_pyfunction!(shadow_length_px, m)?)?;
    m.add_function(wrap_pyfunction!(plan_tiles, m)?)?;
    m.add_function(wrap_pyfunction!(parameter_count, m)?)?;
    m.add_function(wrap_pyfunction!(generate_scene, m)?)?;
    Ok(())
}
