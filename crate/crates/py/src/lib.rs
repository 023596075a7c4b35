//! Python bindings: configs, simulation, every filter, prediction and the
//! scenario sweep.

use std::path::PathBuf;

use anthracnose_filter::compare::{run_compare, run_method};
use anthracnose_filter::config::{parse_config, RunMethod, ScenarioConfig};
use anthracnose_filter::io::{write_run_csv, RunOutput};
use anthracnose_filter::model::{eval_diffusion, eval_drift, eval_obs_drift, eval_rates, TimeCoeffs};
use anthracnose_filter::params::HiddenState;
use anthracnose_filter::predict::filter_then_predict;
use anthracnose_filter::{simulate_scenario, Error, Scenario};
use pyo3::create_exception;
use pyo3::exceptions::{PyOSError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

create_exception!(anthracnose, FilterError, PyRuntimeError, "Numerical failure of a filter.");

fn to_py(e: Error) -> PyErr {
    match e {
        e if e.is_numerical() => FilterError::new_err(e.to_string()),
        Error::Io(io) => PyOSError::new_err(io.to_string()),
        Error::Csv(c) => PyOSError::new_err(c.to_string()),
        e => PyValueError::new_err(e.to_string()),
    }
}

/// Run configuration. Build from TOML text with `Config.from_toml`, or take
/// the reference defaults with `Config()`.
#[pyclass(name = "Config", from_py_object)]
#[derive(Clone)]
struct PyConfig {
    inner: ScenarioConfig,
}

#[pymethods]
impl PyConfig {
    #[new]
    fn new() -> Self {
        PyConfig {
            inner: ScenarioConfig::default(),
        }
    }

    #[staticmethod]
    fn from_toml(text: &str) -> PyResult<Self> {
        Ok(PyConfig {
            inner: parse_config(text).map_err(to_py)?,
        })
    }

    fn validate(&self) -> PyResult<()> {
        self.inner.validate().map_err(to_py)
    }

    #[getter]
    fn seed(&self) -> u64 {
        self.inner.sim.seed
    }
    #[setter]
    fn set_seed(&mut self, v: u64) {
        self.inner.sim.seed = v;
    }
    #[getter]
    fn t_end(&self) -> f64 {
        self.inner.sim.t_end
    }
    #[setter]
    fn set_t_end(&mut self, v: f64) {
        self.inner.sim.t_end = v;
    }
    #[getter]
    fn dt(&self) -> f64 {
        self.inner.sim.dt
    }
    #[setter]
    fn set_dt(&mut self, v: f64) {
        self.inner.sim.dt = v;
    }
    #[getter]
    fn dx(&self) -> f64 {
        self.inner.filter.dx
    }
    #[setter]
    fn set_dx(&mut self, v: f64) {
        self.inner.filter.dx = v;
    }
    #[getter]
    fn theta0(&self) -> f64 {
        self.inner.sim.theta0
    }
    #[setter]
    fn set_theta0(&mut self, v: f64) {
        self.inner.sim.theta0 = v;
    }
    #[getter]
    fn v0(&self) -> f64 {
        self.inner.sim.v0
    }
    #[setter]
    fn set_v0(&mut self, v: f64) {
        self.inner.sim.v0 = v;
    }
    #[getter]
    fn rho0(&self) -> f64 {
        self.inner.sim.rho0
    }
    #[setter]
    fn set_rho0(&mut self, v: f64) {
        self.inner.sim.rho0 = v;
    }
    #[getter]
    fn dtau(&self) -> f64 {
        self.inner.dtau
    }
    #[setter]
    fn set_dtau(&mut self, v: f64) {
        self.inner.dtau = v;
    }
    #[getter]
    fn particles(&self) -> usize {
        self.inner.particles
    }
    #[setter]
    fn set_particles(&mut self, v: usize) {
        self.inner.particles = v;
    }

    fn __repr__(&self) -> String {
        let c = &self.inner;
        format!(
            "Config(seed={}, t_end={}, dt={}, dx={}, theta0={}, v0={}, rho0={}, method={})",
            c.sim.seed, c.sim.t_end, c.sim.dt, c.filter.dx, c.sim.theta0, c.sim.v0, c.sim.rho0, c.method
        )
    }
}

/// A simulated hidden path and its observations on one time grid.
#[pyclass(name = "Scenario", frozen)]
struct PyScenario {
    inner: Scenario,
}

#[pymethods]
impl PyScenario {
    #[getter]
    fn times(&self) -> Vec<f64> {
        self.inner.truth.times.clone()
    }
    #[getter]
    fn theta(&self) -> Vec<f64> {
        self.inner.truth.theta.clone()
    }
    #[getter]
    fn v(&self) -> Vec<f64> {
        self.inner.truth.v.clone()
    }
    #[getter]
    fn rho(&self) -> Vec<f64> {
        self.inner.truth.rho.clone()
    }
    #[getter]
    fn x(&self) -> Vec<f64> {
        self.inner.obs.x.clone()
    }
    #[getter]
    fn y(&self) -> Vec<f64> {
        self.inner.obs.y.clone()
    }
    #[getter]
    fn xbar(&self) -> Vec<f64> {
        self.inner.obs.xbar.clone()
    }
    #[getter]
    fn ybar(&self) -> Vec<f64> {
        self.inner.obs.ybar.clone()
    }
    #[getter]
    fn clamped_fraction(&self) -> f64 {
        self.inner.truth.clamped_fraction()
    }

    fn __len__(&self) -> usize {
        self.inner.truth.times.len()
    }
}

/// Filter output at a subset of the scenario's time indices.
#[pyclass(name = "Run", frozen)]
struct PyRun {
    method: RunMethod,
    inner: RunOutput,
    times: Vec<f64>,
    mae: f64,
    max_err: f64,
}

#[pymethods]
impl PyRun {
    #[getter]
    fn method(&self) -> &'static str {
        self.method.name()
    }
    #[getter]
    fn indices(&self) -> Vec<usize> {
        self.inner.indices.clone()
    }
    #[getter]
    fn times(&self) -> Vec<f64> {
        self.times.clone()
    }
    #[getter]
    fn mean(&self) -> Vec<f64> {
        self.inner.mean.clone()
    }
    #[getter]
    fn var(&self) -> Vec<f64> {
        self.inner.var.clone()
    }
    #[getter]
    fn log_zeta(&self) -> Vec<f64> {
        self.inner.log_zeta.clone()
    }
    /// Mean absolute error of the posterior mean against the hidden path.
    #[getter]
    fn mae(&self) -> f64 {
        self.mae
    }
    #[getter]
    fn max_err(&self) -> f64 {
        self.max_err
    }

    /// Writes the run in the standard run-CSV schema.
    #[pyo3(signature = (path, scenario, stride = 1))]
    fn write_csv(&self, path: PathBuf, scenario: &PyScenario, stride: usize) -> PyResult<()> {
        let s = &scenario.inner;
        write_run_csv(&path, &s.truth, &s.obs, &self.inner, stride).map_err(to_py)
    }

    fn __repr__(&self) -> String {
        format!("Run(method={}, points={}, mae={:.5})", self.method, self.inner.mean.len(), self.mae)
    }
}

#[pyfunction]
fn simulate(py: Python<'_>, config: &PyConfig) -> PyResult<PyScenario> {
    let cfg = config.inner.clone();
    cfg.validate().map_err(to_py)?;
    let inner = py.detach(|| simulate_scenario(&cfg.sim, &cfg.params)).map_err(to_py)?;
    Ok(PyScenario { inner })
}

/// Runs `method` (`zakai`, `ks`, `discrete` or `oracle`) on a scenario.
#[pyfunction]
#[pyo3(signature = (scenario, config, method = "zakai"))]
fn run(py: Python<'_>, scenario: &PyScenario, config: &PyConfig, method: &str) -> PyResult<PyRun> {
    let m: RunMethod = method.parse().map_err(to_py)?;
    let cfg = config.inner.clone();
    cfg.validate().map_err(to_py)?;
    let s = &scenario.inner;
    let out = py.detach(|| run_method(m, s, &cfg)).map_err(to_py)?;
    let (mae, max_err) = out.errors(&s.truth.theta);
    let times = out.indices.iter().map(|&i| s.truth.times[i]).collect();
    Ok(PyRun {
        method: m,
        inner: out,
        times,
        mae,
        max_err,
    })
}

/// Filters up to `tau`, then returns `(nodes, density)` of the predicted law
/// of θ at `tau + horizon`.
#[pyfunction]
fn predict(
    py: Python<'_>,
    scenario: &PyScenario,
    config: &PyConfig,
    tau: f64,
    horizon: f64,
) -> PyResult<(Vec<f64>, Vec<f64>)> {
    let cfg = &config.inner;
    let grid = cfg.filter.grid().map_err(to_py)?;
    let prior = cfg.prior.density(&grid);
    let pi = py
        .detach(|| filter_then_predict(&scenario.inner.obs, &cfg.params, &cfg.filter, &prior, tau, horizon))
        .map_err(to_py)?;
    Ok((grid.nodes, pi.values))
}

/// Model coefficients at one time and state, under the config's parameters.
#[pyfunction]
#[pyo3(signature = (t, theta, v, rho, config = None))]
fn coefficients<'py>(
    py: Python<'py>,
    t: f64,
    theta: f64,
    v: f64,
    rho: f64,
    config: Option<&PyConfig>,
) -> PyResult<Bound<'py, PyDict>> {
    let p = config.map(|c| c.inner.params.clone()).unwrap_or_default();
    let s = HiddenState::new(theta, v, rho);
    let tc = TimeCoeffs::at(t, &p);
    let r = eval_rates(t, &s, &p);
    let f = eval_drift(t, &s, &p);
    let g = eval_diffusion(t, &s, &p);
    let d = PyDict::new(py);
    d.set_item("u", tc.u)?;
    d.set_item("w", tc.w)?;
    d.set_item("alpha", r.alpha)?;
    d.set_item("beta", r.beta)?;
    d.set_item("gamma", r.gamma)?;
    d.set_item("f1", f.f1)?;
    d.set_item("f2", f.f2)?;
    d.set_item("f3", f.f3)?;
    d.set_item("g1", g.g1)?;
    d.set_item("g2", g.g2)?;
    d.set_item("g3", g.g3)?;
    Ok(d)
}

/// Observation drifts `(f, g)` at mean observations `(xbar, ybar)`.
#[pyfunction]
#[pyo3(signature = (t, xbar, ybar, theta, config = None))]
fn obs_drift(t: f64, xbar: f64, ybar: f64, theta: f64, config: Option<&PyConfig>) -> (f64, f64) {
    let p = config.map(|c| c.inner.params.clone()).unwrap_or_default();
    let o = eval_obs_drift(t, xbar, ybar, theta, &p);
    (o.f, o.g)
}

/// Runs the scenario sweep into `out_dir`; returns one dict per
/// (cell, method).
#[pyfunction]
fn compare<'py>(py: Python<'py>, config: &PyConfig, out_dir: PathBuf) -> PyResult<Vec<Bound<'py, PyDict>>> {
    let cfg = config.inner.clone();
    let summary = py.detach(|| run_compare(&cfg, &out_dir)).map_err(to_py)?;
    summary
        .rows
        .iter()
        .map(|r| {
            let d = PyDict::new(py);
            d.set_item("cell", r.cell.index)?;
            d.set_item("theta0", r.cell.theta0)?;
            d.set_item("v0", r.cell.v0)?;
            d.set_item("rho0", r.cell.rho0)?;
            d.set_item("seed", r.cell.seed)?;
            d.set_item("method", r.method.name())?;
            d.set_item("mae", r.mae)?;
            d.set_item("max_err", r.max_err)?;
            d.set_item("mae_vs_oracle", r.mae_vs_oracle)?;
            d.set_item("csv", r.csv.clone())?;
            Ok(d)
        })
        .collect()
}

#[pymodule]
fn anthracnose(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyConfig>()?;
    m.add_class::<PyScenario>()?;
    m.add_class::<PyRun>()?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    m.add_function(wrap_pyfunction!(run, m)?)?;
    m.add_function(wrap_pyfunction!(predict, m)?)?;
    m.add_function(wrap_pyfunction!(coefficients, m)?)?;
    m.add_function(wrap_pyfunction!(obs_drift, m)?)?;
    m.add_function(wrap_pyfunction!(compare, m)?)?;
    m.add("FilterError", m.py().get_type::<FilterError>())?;
    Ok(())
}
