//! Python bindings.
//!
//! Models, kernels and initial laws are passed as plain dicts
//! with the same shape as the TOML configuration tables, e.g.
//! `{"type": "fractional", "c": 1.0, "alpha": 0.25}`. Reports come back as
//! dicts as well.

use mvsve::diagnostics::{diagnose as run_diagnose, moment_report, DiagnosticsConfig};
use mvsve::kernels::{certify as run_certify, CertifyOptions, QuadratureConfig};
use mvsve::measures::{wasserstein_unequal, WassersteinOptions};
use mvsve::solver::{
    precompute_weights, reconstruct as run_reconstruct, simulate as run_simulate, InitialLaw, KernelWeights,
    SimulationOptions,
};
use mvsve::{EmpiricalMeasure, KernelSpec, ModelSpec, ParticleEnsemble, Partition, SimMode};
use pyo3::exceptions::{PyArithmeticError, PyValueError};
use pyo3::prelude::*;
use serde::de::DeserializeOwned;
use serde::Serialize;

fn map_err(e: mvsve::Error) -> PyErr {
    match e {
        mvsve::Error::NonFiniteOutput { .. } | mvsve::Error::NonFiniteState { .. } => {
            PyArithmeticError::new_err(e.to_string())
        }
        other => PyValueError::new_err(other.to_string()),
    }
}

fn from_py<T: DeserializeOwned>(obj: &Bound<'_, PyAny>) -> PyResult<T> {
    let text: String = obj.py().import("json")?.call_method1("dumps", (obj,))?.extract()?;
    serde_json::from_str(&text).map_err(|e| PyValueError::new_err(e.to_string()))
}

fn to_py<'py, T: Serialize>(py: Python<'py>, value: &T) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(value).map_err(|e| PyValueError::new_err(e.to_string()))?;
    py.import("json")?.call_method1("loads", (text,))
}

/// Rows of points; a flat list is read as one-dimensional points.
fn points(obj: &Bound<'_, PyAny>) -> PyResult<EmpiricalMeasure> {
    let rows: Vec<Vec<f64>> = match obj.extract::<Vec<f64>>() {
        Ok(flat) => flat.into_iter().map(|x| vec![x]).collect(),
        Err(_) => obj.extract()?,
    };
    EmpiricalMeasure::from_points(&rows).map_err(map_err)
}

/// Certifies a kernel pair; returns `(drift_certificate, diffusion_certificate)`.
#[pyfunction]
#[pyo3(signature = (kernel_b, kernel_sigma, horizon = 1.0, eta = 2.0, eps_grid = vec![1.0]))]
fn certify<'py>(
    py: Python<'py>,
    kernel_b: &Bound<'py, PyAny>,
    kernel_sigma: &Bound<'py, PyAny>,
    horizon: f64,
    eta: f64,
    eps_grid: Vec<f64>,
) -> PyResult<(Bound<'py, PyAny>, Bound<'py, PyAny>)> {
    let kb: KernelSpec = from_py(kernel_b)?;
    let ks: KernelSpec = from_py(kernel_sigma)?;
    let opts = CertifyOptions::new(horizon, eta, eps_grid);
    let (cb, cs) = py.detach(|| run_certify(&kb, &ks, &opts)).map_err(map_err)?;
    Ok((to_py(py, &cb)?, to_py(py, &cs)?))
}

/// Empirical `W_η` between two point clouds (sizes may differ).
#[pyfunction]
#[pyo3(signature = (x, y, eta = 2.0))]
fn wasserstein(x: &Bound<'_, PyAny>, y: &Bound<'_, PyAny>, eta: f64) -> PyResult<f64> {
    let (mu, nu) = (points(x)?, points(y)?);
    let t = x
        .py()
        .detach(|| wasserstein_unequal(&mu, &nu, eta, &WassersteinOptions::default()))
        .map_err(map_err)?;
    Ok(t.distance)
}

/// Simulated particle paths together with the model and weights that produced them.
#[pyclass(frozen)]
struct Ensemble {
    ens: ParticleEnsemble,
    weights: KernelWeights,
    model: ModelSpec,
}

#[pymethods]
impl Ensemble {
    #[getter]
    fn particles(&self) -> usize {
        self.ens.particles
    }

    #[getter]
    fn steps(&self) -> usize {
        self.ens.steps()
    }

    #[getter]
    fn state_dim(&self) -> usize {
        self.ens.state_dim
    }

    #[getter]
    fn seed(&self) -> u64 {
        self.ens.seed
    }

    #[getter]
    fn mode(&self) -> String {
        self.ens.mode.to_string()
    }

    #[getter]
    fn times(&self) -> Vec<f64> {
        self.ens.times().to_vec()
    }

    /// Paths of one state component as `[particle][time]`.
    #[pyo3(signature = (component = 0))]
    fn paths(&self, component: usize) -> PyResult<Vec<Vec<f64>>> {
        if component >= self.ens.state_dim {
            return Err(PyValueError::new_err(format!(
                "component {component} out of range for state dimension {}",
                self.ens.state_dim
            )));
        }
        Ok((0..self.ens.particles)
            .map(|n| (0..=self.ens.steps()).map(|j| self.ens.value(n, j)[component]).collect())
            .collect())
    }

    /// Particle positions at grid index `j` as `[particle][component]`.
    fn marginal(&self, j: usize) -> PyResult<Vec<Vec<f64>>> {
        if j > self.ens.steps() {
            return Err(PyValueError::new_err(format!("grid index {j} beyond {}", self.ens.steps())));
        }
        Ok((0..self.ens.particles).map(|n| self.ens.value(n, j).to_vec()).collect())
    }

    /// Moment table `E|X_t|^q` with standard errors.
    #[pyo3(signature = (q_list = vec![2.0, 4.0]))]
    fn moments<'py>(&self, py: Python<'py>, q_list: Vec<f64>) -> PyResult<Bound<'py, PyAny>> {
        let table = py.detach(|| moment_report(&self.ens, &q_list)).map_err(map_err)?;
        to_py(py, &table)
    }

    /// Checks the paths against the Volterra sums that define them.
    fn reconstruct<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        let report = py.detach(|| run_reconstruct(&self.ens, &self.weights)).map_err(map_err)?;
        to_py(py, &report)
    }

    /// Full diagnostics report; `config` uses the library's field names.
    #[pyo3(signature = (config = None))]
    fn diagnose<'py>(&self, py: Python<'py>, config: Option<&Bound<'py, PyAny>>) -> PyResult<Bound<'py, PyAny>> {
        let cfg: DiagnosticsConfig = match config {
            Some(c) => from_py(c)?,
            None => DiagnosticsConfig::default(),
        };
        let report = py.detach(|| run_diagnose(&self.ens, &self.model, &cfg)).map_err(map_err)?;
        to_py(py, &report)
    }

    fn __repr__(&self) -> String {
        format!(
            "Ensemble(particles={}, steps={}, state_dim={}, mode='{}', seed={})",
            self.ens.particles,
            self.ens.steps(),
            self.ens.state_dim,
            self.ens.mode,
            self.ens.seed
        )
    }
}

/// Runs the particle scheme on a uniform grid of `steps` intervals over `[0, horizon]`.
#[pyfunction]
#[pyo3(signature = (model, kernel_b, kernel_sigma, steps, particles, horizon = 1.0, seed = 0, mode = "integrated-kernel", initial = None, factor_nodes = 16))]
#[allow(clippy::too_many_arguments)]
fn simulate(
    py: Python<'_>,
    model: &Bound<'_, PyAny>,
    kernel_b: &Bound<'_, PyAny>,
    kernel_sigma: &Bound<'_, PyAny>,
    steps: usize,
    particles: usize,
    horizon: f64,
    seed: u64,
    mode: &str,
    initial: Option<&Bound<'_, PyAny>>,
    factor_nodes: usize,
) -> PyResult<Ensemble> {
    let model: ModelSpec = from_py(model)?;
    let kb: KernelSpec = from_py(kernel_b)?;
    let ks: KernelSpec = from_py(kernel_sigma)?;
    let mode: SimMode = serde_json::from_value(serde_json::Value::String(mode.to_owned()))
        .map_err(|e| PyValueError::new_err(e.to_string()))?;
    let initial: InitialLaw = match initial {
        Some(i) => from_py(i)?,
        None => InitialLaw::Point { value: vec![0.0; mvsve::CoefficientModel::state_dim(&model)] },
    };
    let partition = Partition::uniform(horizon, steps).map_err(map_err)?;
    let mut opts = SimulationOptions::new(particles, seed, mode);
    opts.factor_nodes = factor_nodes;
    let (ens, weights) = py
        .detach(|| {
            let w = precompute_weights(&kb, &ks, &partition, &QuadratureConfig::default())?;
            run_simulate(&model, &w, &initial, &opts).map(|e| (e, w))
        })
        .map_err(map_err)?;
    Ok(Ensemble { ens, weights, model })
}

#[pymodule]
fn pymvsve(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("__version__", mvsve::TOOL_VERSION)?;
    m.add_class::<Ensemble>()?;
    m.add_function(wrap_pyfunction!(certify, m)?)?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    m.add_function(wrap_pyfunction!(wasserstein, m)?)?;
    Ok(())
}
