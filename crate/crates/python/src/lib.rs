//! Python bindings: synthetic scenes, rendering, short training runs, meshing
//! and metrics. Images cross the boundary as flat row-major lists with
//! interleaved channels.

use std::path::PathBuf;

use pyo3::exceptions::{PyIOError, PyIndexError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use tsplat::eval;
use tsplat::img::Image;
use tsplat::ingestion::{init_gaussians, make_synthetic, SyntheticConfig, SyntheticScene};
use tsplat::math::{Mat3, Vec3};
use tsplat::mesher::{fuse_scene, MeshConfig};
use tsplat::raster::{render_with, RenderSettings};
use tsplat::scene::{load_checkpoint, save_checkpoint, write_gaussians_ply, CameraView, Checkpoint, Scene};
use tsplat::trainer::{train_coarse, TrainConfig, TrainState};
use tsplat::Error;

fn to_py(e: Error) -> PyErr {
    match e {
        Error::Io(_) | Error::File { .. } => PyIOError::new_err(e.to_string()),
        Error::Diverged { .. } | Error::NonFiniteLoss { .. } => PyRuntimeError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

#[pyclass(name = "Camera", module = "pytsplat", skip_from_py_object)]
#[derive(Clone)]
pub struct PyCamera {
    inner: CameraView,
}

#[pymethods]
impl PyCamera {
    /// Pinhole camera with principal point at the image center.
    /// `rotation` is camera-to-world, rows first.
    #[new]
    #[pyo3(signature = (focal, width, height, rotation, center, id = 0))]
    fn new(focal: f64, width: usize, height: usize, rotation: [[f64; 3]; 3], center: [f64; 3], id: usize) -> PyResult<Self> {
        let r = Mat3::from_fn(|i, j| rotation[i][j]);
        let inner = CameraView::pinhole(id, focal, width, height, r, Vec3::from(center));
        inner.validate().map_err(to_py)?;
        Ok(Self { inner })
    }

    #[getter]
    fn id(&self) -> usize {
        self.inner.id
    }

    #[getter]
    fn width(&self) -> usize {
        self.inner.width
    }

    #[getter]
    fn height(&self) -> usize {
        self.inner.height
    }

    #[getter]
    fn center(&self) -> [f64; 3] {
        self.inner.center.into()
    }

    /// Pixel coordinates of a world point, or None behind the camera.
    fn project(&self, point: [f64; 3]) -> Option<(f64, f64)> {
        self.inner.project(&Vec3::from(point)).map(|p| (p.x, p.y))
    }

    fn __repr__(&self) -> String {
        format!("Camera(id={}, {}x{})", self.inner.id, self.inner.width, self.inner.height)
    }
}

#[pyclass(name = "Scene", module = "pytsplat", skip_from_py_object)]
#[derive(Clone)]
pub struct PyScene {
    inner: Scene,
}

#[pymethods]
impl PyScene {
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Self {
            inner: load_checkpoint(&path).map_err(to_py)?.scene,
        })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        save_checkpoint(&path, &Checkpoint::from_scene(self.inner.clone())).map_err(to_py)
    }

    fn write_ply(&self, path: PathBuf) -> PyResult<()> {
        write_gaussians_ply(&path, &self.inner).map_err(to_py)
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    fn positions(&self) -> Vec<[f64; 3]> {
        self.inner.gaussians.iter().map(|g| g.position.into()).collect()
    }

    fn opacities(&self) -> Vec<f64> {
        self.inner.gaussians.iter().map(|g| g.opacity()).collect()
    }

    fn __repr__(&self) -> String {
        format!("Scene({} Gaussians)", self.inner.len())
    }
}

/// Rendered maps; per-pixel lists in row-major order.
#[pyclass(name = "Render", module = "pytsplat", get_all)]
pub struct PyRender {
    width: usize,
    height: usize,
    /// RGB, interleaved.
    color: Vec<f64>,
    alpha: Vec<f64>,
    /// World-frame normal, interleaved.
    normal: Vec<f64>,
    distance: Vec<f64>,
    depth: Vec<f64>,
    depth_valid: Vec<bool>,
}

#[pyclass(name = "Synthetic", module = "pytsplat")]
pub struct PySynthetic {
    inner: SyntheticScene,
}

#[pymethods]
impl PySynthetic {
    /// Generates a toy scene; `config` is TOML with any SyntheticConfig keys.
    #[new]
    #[pyo3(signature = (config = None))]
    fn new(config: Option<&str>) -> PyResult<Self> {
        let cfg = match config {
            Some(s) => SyntheticConfig::from_toml(s).map_err(to_py)?,
            None => SyntheticConfig::default(),
        };
        Ok(Self {
            inner: make_synthetic(&cfg).map_err(to_py)?,
        })
    }

    fn __len__(&self) -> usize {
        self.inner.images.len()
    }

    fn cameras(&self) -> Vec<PyCamera> {
        self.inner.views().into_iter().map(|inner| PyCamera { inner }).collect()
    }

    /// (width, height, pixels) of image `i`.
    fn image(&self, i: usize) -> PyResult<(usize, usize, Vec<f64>)> {
        let img = self.inner.images.get(i).ok_or_else(|| PyIndexError::new_err(format!("no image {i}")))?;
        Ok((img.pixels.width, img.pixels.height, img.pixels.data.clone()))
    }

    /// Gaussians initialized from the scene's seed points.
    fn seed_scene(&self) -> PyResult<PyScene> {
        let g = init_gaussians(&self.inner.bundle()).map_err(to_py)?;
        Ok(PyScene { inner: Scene::new(g) })
    }

    fn gt_points(&self) -> Vec<[f64; 3]> {
        self.inner.gt_points.iter().map(|p| (*p).into()).collect()
    }
}

#[pyfunction]
fn render(scene: &PyScene, camera: &PyCamera) -> PyRender {
    let out = render_with(&scene.inner, &camera.inner, &RenderSettings::default());
    PyRender {
        width: out.width,
        height: out.height,
        color: out.color.data,
        alpha: out.alpha,
        normal: out.normal.data,
        distance: out.distance,
        depth: out.depth,
        depth_valid: out.depth_valid,
    }
}

/// Trains `scene` on the synthetic images at full resolution; returns the
/// trained scene and the per-iteration RGB loss.
#[pyfunction]
#[pyo3(signature = (synthetic, scene, iterations, seed = 0))]
fn train(py: Python<'_>, synthetic: &PySynthetic, scene: &PyScene, iterations: usize, seed: u64) -> PyResult<(PyScene, Vec<f64>)> {
    let mut cfg = TrainConfig::default();
    cfg.seed = seed;
    cfg.schedule.total_iterations = iterations;
    cfg.schedule.coarse_fraction = 1.0;
    cfg.schedule.coarse_downsample = 1;
    cfg.schedule.geometry_warmup = iterations / 5;
    cfg.schedule.densify.start = iterations / 10;
    let images = &synthetic.inner.images;
    let mut state = TrainState::new(scene.inner.clone(), images.len(), &cfg);
    let summary = py
        .detach(|| train_coarse(&mut state, images, &cfg))
        .map_err(to_py)?;
    Ok((PyScene { inner: state.scene }, summary.rgb))
}

/// TSDF-fuses renders from `cameras`; returns (vertices, triangles).
#[pyfunction]
#[pyo3(signature = (scene, cameras, voxel_size = None))]
fn mesh(scene: &PyScene, cameras: Vec<PyRef<'_, PyCamera>>, voxel_size: Option<f64>) -> PyResult<(Vec<[f64; 3]>, Vec<[u32; 3]>)> {
    let views: Vec<CameraView> = cameras.iter().map(|c| c.inner.clone()).collect();
    let cfg = MeshConfig {
        voxel_size,
        ..Default::default()
    };
    let (m, _) = fuse_scene(&scene.inner, &views, &[], &cfg).map_err(to_py)?;
    Ok((m.vertices.iter().map(|v| (*v).into()).collect(), m.triangles))
}

fn rgb(data: Vec<f64>, width: usize, height: usize) -> PyResult<Image> {
    if width * height == 0 || data.len() != width * height * 3 {
        return Err(PyValueError::new_err(format!(
            "expected {} values for a {width}x{height} RGB image, got {}",
            width * height * 3,
            data.len()
        )));
    }
    Ok(Image::from_data(width, height, 3, data))
}

#[pyfunction]
fn psnr(a: Vec<f64>, b: Vec<f64>, width: usize, height: usize) -> PyResult<f64> {
    Ok(eval::psnr(&rgb(a, width, height)?, &rgb(b, width, height)?))
}

#[pyfunction]
fn ssim(a: Vec<f64>, b: Vec<f64>, width: usize, height: usize) -> PyResult<f64> {
    Ok(eval::ssim(&rgb(a, width, height)?, &rgb(b, width, height)?))
}

#[pymodule]
fn pytsplat(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    m.add_class::<PyCamera>()?;
    m.add_class::<PyScene>()?;
    m.add_class::<PyRender>()?;
    m.add_class::<PySynthetic>()?;
    m.add_function(wrap_pyfunction!(render, m)?)?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    m.add_function(wrap_pyfunction!(mesh, m)?)?;
    m.add_function(wrap_pyfunction!(psnr, m)?)?;
    m.add_function(wrap_pyfunction!(ssim, m)?)?;
    Ok(())
}
