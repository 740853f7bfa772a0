//! Python bindings. Structured results (samples, certificates, reports) are
//! handed over as plain dicts and lists by round-tripping their JSON form.

use std::path::PathBuf;

use pyo3::create_exception;
use pyo3::exceptions::PyException;
use pyo3::prelude::*;

use zetaloop_core::embedding::{contour_grid, verify_droop_region, EmbeddingQuery, FixedPair};
use zetaloop_core::harness::{base_dataset, run_pipeline, ExperimentConfig, RunContext};
use zetaloop_core::loops::{ni_enrich, verify_corners, EnrichConfig};
use zetaloop_core::milp::{UnitBoxNet, VerifyConfig};
use zetaloop_core::net::{Mlp, TrainConfig, Trainer};
use zetaloop_core::oracle::{min_damping, OperatingPoint};
use zetaloop_core::sampling::{self, Hypercube, Origin};
use zetaloop_core::seeding::SeedPath;
use zetaloop_core::walks::{enrich_dw, WalkConfig};

create_exception!(zetaloop, ZetaloopError, PyException, "Error raised by the zetaloop core.");

fn err(e: zetaloop_core::Error) -> PyErr {
    ZetaloopError::new_err(e.to_string())
}

fn to_py<'py, T: serde::Serialize>(py: Python<'py>, value: &T) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(value).map_err(|e| ZetaloopError::new_err(e.to_string()))?;
    py.import("json")?.call_method1("loads", (text,))
}

fn points(xs: Vec<Vec<f64>>) -> PyResult<Vec<[f64; 4]>> {
    xs.into_iter()
        .map(|x| {
            <[f64; 4]>::try_from(x.as_slice())
                .map_err(|_| ZetaloopError::new_err(format!("expected 4 inputs, got {}", x.len())))
        })
        .collect()
}

/// Minimum damping ratio in percent over all contingencies and modes, with
/// the binding contingency, mode and gradient.
#[pyfunction]
fn min_damping_ratio(py: Python<'_>, x: [f64; 4]) -> PyResult<Bound<'_, PyAny>> {
    let r = min_damping(&OperatingPoint::from_array(x)).map_err(err)?;
    to_py(py, &r)
}

/// Stability class name of a damping ratio in percent.
#[pyfunction]
fn classify(zeta: f64) -> PyResult<String> {
    Ok(sampling::classify(zeta).map_err(err)?.to_string())
}

/// Draws inputs with `"grid"` (`n` per dimension), `"uniform"` or `"lhc"`.
#[pyfunction]
#[pyo3(signature = (sampler, n, seed=0))]
fn sample(sampler: &str, n: usize, seed: u64) -> PyResult<Vec<[f64; 4]>> {
    let h = Hypercube::default();
    match sampler {
        "grid" => sampling::sample_grid(&h, n).map_err(err),
        "uniform" => Ok(sampling::sample_uniform(&h, n, seed)),
        "lhc" => Ok(sampling::sample_lhc(&h, n, seed)),
        other => Err(ZetaloopError::new_err(format!("unknown sampler `{other}`"))),
    }
}

/// Oracle-labeled samples as dicts with `x`, `zeta`, `grad`, `class`, `origin`.
#[pyfunction]
fn label(py: Python<'_>, xs: Vec<Vec<f64>>) -> PyResult<Bound<'_, PyAny>> {
    let s = sampling::label(&points(xs)?, Origin::Uniform).map_err(err)?;
    to_py(py, &s)
}

/// Converged directed-walk termini started from the given inputs.
#[pyfunction]
fn directed_walks(py: Python<'_>, xs: Vec<Vec<f64>>) -> PyResult<Bound<'_, PyAny>> {
    let base = sampling::label(&points(xs)?, Origin::Grid).map_err(err)?;
    let out = enrich_dw(&Hypercube::default(), &base, &WalkConfig::default()).map_err(err)?;
    to_py(py, &out)
}

/// Experiment configuration backed by the TOML format the CLI reads.
#[pyclass(name = "Config")]
struct PyConfig {
    inner: ExperimentConfig,
}

#[pymethods]
impl PyConfig {
    #[new]
    #[pyo3(signature = (toml=""))]
    fn new(toml: &str) -> PyResult<Self> {
        Ok(PyConfig {
            inner: ExperimentConfig::from_toml(toml).map_err(err)?,
        })
    }

    fn to_toml(&self) -> String {
        self.inner.to_toml()
    }

    fn hash(&self) -> String {
        self.inner.hash()
    }

    #[getter]
    fn master_seed(&self) -> u64 {
        self.inner.master_seed
    }

    /// Runs the full pipeline and returns the artifact directory.
    fn run_pipeline(&self, py: Python<'_>, out: PathBuf) -> PyResult<String> {
        let cfg = self.inner.clone();
        let res = py.detach(move || run_pipeline(&cfg, &out)).map_err(err)?;
        Ok(res.dir.to_string_lossy().into_owned())
    }

    /// Trains the first grid cell on the configured base dataset.
    #[pyo3(signature = (seed=0))]
    fn train(&self, py: Python<'_>, seed: u64) -> PyResult<Model> {
        let cfg = self.inner.clone();
        let net = py
            .detach(move || -> zetaloop_core::Result<Mlp> {
                let ctx = RunContext::new(&cfg, &base_dataset(&cfg)?.1)?;
                let cell = cfg.grid.cells(cfg.variant)?[0];
                let s = SeedPath::root(seed);
                let net = Mlp::with_shape(cell.hidden_layers, cell.width, s.child("init").seed(), ctx.data.standardizer)?;
                let tcfg = TrainConfig {
                    l0: cell.l0,
                    gamma: cell.gamma,
                    epochs: cfg.train.epochs,
                    alpha_j: cell.alpha_j,
                    seed: s.seed(),
                };
                Ok(Trainer::new(net, &ctx.data, tcfg)?.finish()?.best)
            })
            .map_err(err)?;
        Ok(Model { net })
    }
}

/// Trained surrogate predicting the minimum damping ratio in percent.
#[pyclass]
struct Model {
    net: Mlp,
}

impl Model {
    fn unit(&self) -> PyResult<UnitBoxNet> {
        UnitBoxNet::from_mlp(&self.net, &Hypercube::default()).map_err(err)
    }
}

#[pymethods]
impl Model {
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Model {
            net: Mlp::load(&path).map_err(err)?.0,
        })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        self.net.save(&path, None).map_err(err)
    }

    #[getter]
    fn num_params(&self) -> usize {
        self.net.num_params()
    }

    fn predict(&self, xs: Vec<Vec<f64>>) -> PyResult<Vec<f64>> {
        Ok(self.net.predict_many(&points(xs)?))
    }

    /// Gradient of the prediction with respect to the physical inputs.
    fn input_jacobian(&self, x: [f64; 4]) -> PyResult<Vec<f64>> {
        let st = &self.net.standardizer;
        let g = self.net.input_jacobian(&st.x_to_std(&x)).map_err(err)?;
        Ok((0..4).map(|i| g[i] * st.sigma_y / st.sigma_x[i]).collect())
    }

    /// Certificates for the 16 hypercube corners.
    #[pyo3(signature = (delta=0.25, node_limit=200_000))]
    fn verify_corners<'py>(&self, py: Python<'py>, delta: f64, node_limit: usize) -> PyResult<Bound<'py, PyAny>> {
        let unet = self.unit()?;
        let mut vcfg = VerifyConfig::default();
        vcfg.bnb.node_limit = node_limit;
        let certs = py.detach(move || verify_corners(&unet, delta, &vcfg)).map_err(err)?;
        to_py(py, &certs)
    }

    /// Network-informed batch drawn from a uniform pool.
    #[pyo3(signature = (pool_size=100_000, n_samples=200, delta=3.0, seed=0))]
    fn ni_enrich<'py>(
        &self,
        py: Python<'py>,
        pool_size: usize,
        n_samples: usize,
        delta: f64,
        seed: u64,
    ) -> PyResult<Bound<'py, PyAny>> {
        let cfg = EnrichConfig {
            pool_size,
            n_samples,
            delta,
            seed,
            ..EnrichConfig::default()
        };
        let b = ni_enrich(&self.net, &Hypercube::default(), &cfg).map_err(err)?;
        to_py(py, &b)
    }

    /// Certifies the droop-gain ball at fixed `(p_ref, q_ref)` and returns
    /// the certificate and the contour grid rows.
    #[pyo3(signature = (p_ref, q_ref, anchor, delta=0.25, resolution=21))]
    fn certify_droop<'py>(
        &self,
        py: Python<'py>,
        p_ref: f64,
        q_ref: f64,
        anchor: [f64; 2],
        delta: f64,
        resolution: usize,
    ) -> PyResult<(Bound<'py, PyAny>, Bound<'py, PyAny>)> {
        let unet = self.unit()?;
        let h = Hypercube::default();
        let q = EmbeddingQuery {
            fixed: FixedPair::Power { p_ref, q_ref },
            anchor,
            delta,
        };
        let cert = verify_droop_region(&unet, &h, &q, &VerifyConfig::default()).map_err(err)?;
        let grid = contour_grid(&unet, &h, &q, resolution, Some(&cert)).map_err(err)?;
        Ok((to_py(py, &cert)?, to_py(py, &grid.points)?))
    }
}

#[pymodule]
fn zetaloop(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("ZetaloopError", m.py().get_type::<ZetaloopError>())?;
    m.add_function(wrap_pyfunction!(min_damping_ratio, m)?)?;
    m.add_function(wrap_pyfunction!(classify, m)?)?;
    m.add_function(wrap_pyfunction!(sample, m)?)?;
    m.add_function(wrap_pyfunction!(label, m)?)?;
    m.add_function(wrap_pyfunction!(directed_walks, m)?)?;
    m.add_class::<PyConfig>()?;
    m.add_class::<Model>()?;
    Ok(())
}
