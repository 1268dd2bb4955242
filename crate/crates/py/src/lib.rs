use std::path::PathBuf;

use nalgebra::{Quaternion, UnitQuaternion};
use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;

use touchsplat::geometry::{self, GaussianPrimitive, Origin, Vec3};
use touchsplat::metrics;
use touchsplat::scene::{builtin_object, sample_surface, Condition, ObjectKind};
use touchsplat::trainer::{Experiment, TrainConfig};

type Point = (f64, f64, f64);
type MeshData = (Vec<Point>, Vec<(usize, usize, usize)>);
type LogRow = (usize, f64, f64, f64);

fn err(e: touchsplat::Error) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn vec3(p: Point) -> Vec3 {
    Vec3::new(p.0, p.1, p.2)
}

fn tuple(v: &Vec3) -> Point {
    (v.x, v.y, v.z)
}

fn points(ps: Vec<Point>) -> Vec<Vec3> {
    ps.into_iter().map(vec3).collect()
}

/// An anisotropic 3D Gaussian. Rotation is a (w, x, y, z) quaternion.
#[pyclass(name = "Gaussian", module = "pytouchsplat", from_py_object)]
#[derive(Clone)]
struct PyGaussian {
    inner: GaussianPrimitive,
}

#[pymethods]
impl PyGaussian {
    #[new]
    #[pyo3(signature = (mu, scales, rotation = (1.0, 0.0, 0.0, 0.0), opacity = 0.5, color = (0.5, 0.5, 0.5), locked = false))]
    fn new(mu: Point, scales: Point, rotation: (f64, f64, f64, f64), opacity: f64, color: Point, locked: bool) -> PyResult<Self> {
        let q = UnitQuaternion::from_quaternion(Quaternion::new(rotation.0, rotation.1, rotation.2, rotation.3));
        let inner = if locked {
            GaussianPrimitive::touch(vec3(mu), q, vec3(scales), opacity, vec3(color))
        } else {
            GaussianPrimitive::new(vec3(mu), q, vec3(scales), opacity, vec3(color))
        }
        .map_err(err)?;
        Ok(Self { inner })
    }

    #[getter]
    fn mu(&self) -> Point {
        tuple(&self.inner.mu)
    }

    #[getter]
    fn scales(&self) -> Point {
        tuple(&self.inner.scales)
    }

    #[getter]
    fn rotation(&self) -> (f64, f64, f64, f64) {
        let q = &self.inner.rotation;
        (q.w, q.i, q.j, q.k)
    }

    #[getter]
    fn opacity(&self) -> f64 {
        self.inner.opacity
    }

    #[getter]
    fn color(&self) -> Point {
        tuple(&self.inner.color)
    }

    #[getter]
    fn locked(&self) -> bool {
        self.inner.locked
    }

    #[getter]
    fn origin(&self) -> &'static str {
        match self.inner.origin {
            Origin::Visual => "visual",
            Origin::Touch => "touch",
        }
    }

    /// Distance from the center to the unit-level surface along `direction`.
    fn directional_radius(&self, direction: Point) -> PyResult<f64> {
        geometry::directional_radius(&self.inner, &vec3(direction)).map_err(err)
    }

    /// Signed gap to `other`: positive apart, negative overlapping.
    fn pair_gap(&self, other: &PyGaussian) -> PyResult<f64> {
        geometry::pair_gap(&self.inner, &other.inner).map_err(err)
    }

    fn __repr__(&self) -> String {
        let g = &self.inner;
        format!("Gaussian(mu={:?}, scales={:?}, opacity={}, origin={})", tuple(&g.mu), tuple(&g.scales), g.opacity, self.origin())
    }
}

#[pyfunction]
fn chamfer(a: Vec<Point>, b: Vec<Point>) -> PyResult<f64> {
    metrics::chamfer(&points(a), &points(b)).map_err(err)
}

#[pyfunction]
fn fscore(a: Vec<Point>, b: Vec<Point>, tau: f64) -> PyResult<f64> {
    metrics::fscore(&points(a), &points(b), tau).map_err(err)
}

#[pyfunction]
#[pyo3(signature = (a, b, grid = 32))]
fn jsd(a: Vec<Point>, b: Vec<Point>, grid: usize) -> PyResult<f64> {
    metrics::jsd(&points(a), &points(b), grid).map_err(err)
}

/// Vertices and triangles of an OBJ or PLY mesh.
#[pyfunction]
fn load_mesh(path: PathBuf) -> PyResult<MeshData> {
    let mesh = touchsplat::io::load_mesh(&path).map_err(err)?;
    Ok((mesh.vertices.iter().map(tuple).collect(), mesh.triangles.iter().map(|t| (t[0], t[1], t[2])).collect()))
}

/// Area-weighted surface samples of a builtin object: (points, normals).
#[pyfunction]
#[pyo3(signature = (scene, n, seed = 0))]
fn sample_object(scene: &str, n: usize, seed: u64) -> PyResult<(Vec<Point>, Vec<Point>)> {
    let kind: ObjectKind = scene.parse().map_err(err)?;
    let gt = sample_surface(&builtin_object(kind), n, seed);
    Ok((gt.points.iter().map(tuple).collect(), gt.normals.iter().map(tuple).collect()))
}

/// A configured reconstruction run.
#[pyclass(name = "Reconstruction", module = "pytouchsplat")]
struct PyReconstruction {
    config: TrainConfig,
}

#[pymethods]
impl PyReconstruction {
    /// `config` is a JSON string with TrainConfig fields; keyword arguments override it.
    #[new]
    #[pyo3(signature = (config = None, scene = None, condition = None, touch = None, iterations = None, seed = None))]
    fn new(
        config: Option<&str>,
        scene: Option<&str>,
        condition: Option<&str>,
        touch: Option<bool>,
        iterations: Option<usize>,
        seed: Option<u64>,
    ) -> PyResult<Self> {
        let mut cfg = match config {
            Some(text) => TrainConfig::from_json(text).map_err(err)?,
            None => TrainConfig::default(),
        };
        if let Some(s) = scene {
            cfg.scene = s.parse().map_err(err)?;
        }
        if let Some(c) = condition {
            cfg.condition = c.parse::<Condition>().map_err(err)?;
        }
        if let Some(t) = touch {
            cfg.touch.enabled = t;
        }
        if let Some(n) = iterations {
            cfg.iterations = n;
        }
        if let Some(s) = seed {
            cfg.seed = s;
        }
        cfg.validate().map_err(err)?;
        Ok(Self { config: cfg })
    }

    fn config_json(&self) -> PyResult<String> {
        serde_json::to_string_pretty(&self.config).map_err(|e| PyValueError::new_err(e.to_string()))
    }

    /// Trains and returns (metrics rows, final model). Writes outputs when `out` is given.
    #[pyo3(signature = (out = None))]
    fn run(&self, py: Python<'_>, out: Option<PathBuf>) -> PyResult<(Vec<LogRow>, Vec<PyGaussian>)> {
        let config = self.config.clone();
        let state = py
            .detach(move || Experiment::new(config).and_then(|exp| exp.run(out.as_deref())))
            .map_err(err)?;
        let log = state.log.iter().map(|r| (r.iteration, r.cd_mm, r.fscore_pct, r.jsd)).collect();
        let model = state.gaussians.into_iter().map(|inner| PyGaussian { inner }).collect();
        Ok((log, model))
    }
}

#[pymodule]
fn pytouchsplat(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyGaussian>()?;
    m.add_class::<PyReconstruction>()?;
    m.add_function(wrap_pyfunction!(chamfer, m)?)?;
    m.add_function(wrap_pyfunction!(fscore, m)?)?;
    m.add_function(wrap_pyfunction!(jsd, m)?)?;
    m.add_function(wrap_pyfunction!(load_mesh, m)?)?;
    m.add_function(wrap_pyfunction!(sample_object, m)?)?;
    Ok(())
}
