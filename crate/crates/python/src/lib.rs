use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use preb_cli::{CliError, ExperimentConfig};
use preb_core::chainmap::{self, ChainBath};
use preb_core::preb::BathSpec;
use preb_core::spectral::{self, SpectralDensity, ThermalParams};
use preb_core::system;

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn cli_err(e: CliError) -> PyErr {
    match e {
        CliError::Config(_) => PyValueError::new_err(e.to_string()),
        _ => PyRuntimeError::new_err(e.to_string()),
    }
}

#[pyclass(module = "preb_sim", frozen)]
struct SystemSpec(system::SystemSpec);

#[pymethods]
impl SystemSpec {
    #[new]
    #[pyo3(signature = (sites, interaction = 0.0, field = 0.0))]
    fn new(sites: usize, interaction: f64, field: f64) -> PyResult<Self> {
        Ok(Self(system::SystemSpec::new(sites, interaction, field).map_err(value_err)?))
    }

    #[getter]
    fn sites(&self) -> usize {
        self.0.sites
    }

    #[getter]
    fn interaction(&self) -> f64 {
        self.0.interaction
    }

    #[getter]
    fn field(&self) -> f64 {
        self.0.field
    }

    /// Single-particle hopping matrix as nested lists.
    fn single_particle(&self) -> Vec<Vec<f64>> {
        let h = self.0.single_particle();
        (0..h.nrows()).map(|i| (0..h.ncols()).map(|j| h[(i, j)]).collect()).collect()
    }

    fn __repr__(&self) -> String {
        format!("SystemSpec(sites={}, interaction={}, field={})", self.0.sites, self.0.interaction, self.0.field)
    }
}

/// A fermionic bath: spectral density plus thermal state.
#[pyclass(module = "preb_sim", frozen)]
struct Bath(BathSpec);

#[pymethods]
impl Bath {
    #[staticmethod]
    fn semicircle(coupling: f64, bath_hopping: f64, beta: f64, mu: f64) -> PyResult<Self> {
        Self::build(SpectralDensity::semicircle(coupling, bath_hopping), beta, mu)
    }

    #[staticmethod]
    fn ohmic_gaussian(coupling: f64, cutoff: f64, beta: f64, mu: f64) -> PyResult<Self> {
        Self::build(SpectralDensity::ohmic_gaussian(coupling, cutoff), beta, mu)
    }

    #[staticmethod]
    fn tabulated(omega: Vec<f64>, values: Vec<f64>, beta: f64, mu: f64) -> PyResult<Self> {
        Self::build(SpectralDensity::tabulated(omega, values), beta, mu)
    }

    fn density(&self, omega: f64) -> f64 {
        self.0.density.evaluate(omega)
    }

    #[getter]
    fn asymptotic_hopping(&self) -> f64 {
        self.0.density.asymptotic_hopping()
    }

    fn chain(&self, py: Python<'_>, sites: usize) -> PyResult<Chain> {
        let (d, t) = (self.0.density.clone(), self.0.thermal);
        py.detach(|| chainmap::mapped_bath(&d, sites, t)).map(Chain).map_err(value_err)
    }

    #[pyo3(signature = (threshold = 0.05, t_max = 50.0))]
    fn memory_time(&self, threshold: f64, t_max: f64) -> PyResult<f64> {
        spectral::memory_time(&self.0.density, &self.0.thermal, threshold, t_max).map_err(value_err)
    }
}

impl Bath {
    fn build(density: preb_core::error::Result<SpectralDensity>, beta: f64, mu: f64) -> PyResult<Self> {
        let density = density.map_err(value_err)?;
        let thermal = ThermalParams::fermi(beta, mu).map_err(value_err)?;
        thermal.check_against(&density).map_err(value_err)?;
        Ok(Self(BathSpec { density, thermal }))
    }
}

/// Chain coefficients `γ, {ε_p}, {g_p}`.
#[pyclass(module = "preb_sim", frozen)]
struct Chain(ChainBath);

#[pymethods]
impl Chain {
    #[getter]
    fn gamma(&self) -> f64 {
        self.0.gamma
    }

    #[getter]
    fn eps(&self) -> Vec<f64> {
        self.0.eps.clone()
    }

    #[getter]
    fn hop(&self) -> Vec<f64> {
        self.0.hop.clone()
    }

    fn __len__(&self) -> usize {
        self.0.len()
    }
}

#[pyclass(module = "preb_sim", frozen)]
struct Observables(system::Observables);

#[pymethods]
impl Observables {
    #[getter]
    fn occupations(&self) -> Vec<f64> {
        self.0.occupations.clone()
    }

    #[getter]
    fn currents(&self) -> Vec<f64> {
        self.0.currents.clone()
    }

    fn current_spread(&self) -> f64 {
        self.0.current_spread()
    }

    fn max_deviation(&self, other: &Observables) -> f64 {
        self.0.max_deviation(&other.0)
    }

    fn __repr__(&self) -> String {
        format!("Observables(occupations={:?}, currents={:?})", self.0.occupations, self.0.currents)
    }
}

#[pyclass(module = "preb_sim", frozen)]
struct Timeline(preb_core::preb::Timeline);

#[pymethods]
impl Timeline {
    #[getter]
    fn times(&self) -> Vec<f64> {
        self.0.samples.iter().map(|s| s.t).collect()
    }

    #[getter]
    fn occupations(&self) -> Vec<Vec<f64>> {
        self.0.samples.iter().map(|s| s.observables.occupations.clone()).collect()
    }

    #[getter]
    fn currents(&self) -> Vec<Vec<f64>> {
        self.0.samples.iter().map(|s| s.observables.currents.clone()).collect()
    }

    fn at(&self, t: f64) -> Option<Observables> {
        self.0.at(t).map(|s| Observables(s.observables.clone()))
    }

    fn to_csv(&self) -> PyResult<String> {
        let mut buf = Vec::new();
        self.0.write_csv(&mut buf).map_err(value_err)?;
        String::from_utf8(buf).map_err(value_err)
    }

    fn __len__(&self) -> usize {
        self.0.samples.len()
    }
}

/// An experiment described by the same TOML accepted by the CLI.
#[pyclass(module = "preb_sim", frozen)]
struct Experiment(ExperimentConfig);

#[pymethods]
impl Experiment {
    #[new]
    fn new(toml: &str) -> PyResult<Self> {
        ExperimentConfig::from_toml(toml).map(Self).map_err(|e| PyValueError::new_err(format!("{e:#}")))
    }

    fn to_toml(&self) -> PyResult<String> {
        self.0.to_toml().map_err(value_err)
    }

    fn run(&self, py: Python<'_>) -> PyResult<Timeline> {
        let cfg = self.0.clone();
        let (tl, _) = py.detach(|| preb_cli::simulate(&cfg)).map_err(cli_err)?;
        Ok(Timeline(tl))
    }

    /// τ-doubling convergence report as a JSON string.
    #[pyo3(signature = (tau0, tol = None, max_doublings = 4, horizon = None))]
    fn certify(&self, py: Python<'_>, tau0: f64, tol: Option<f64>, max_doublings: usize, horizon: Option<f64>) -> PyResult<String> {
        let cfg = self.0.clone();
        let tol = tol.unwrap_or(cfg.run.tolerance);
        let horizon = horizon
            .or(cfg.run.t_max)
            .or_else(|| Some(cfg.run.tau? * cfg.run.n_steps? as f64))
            .ok_or_else(|| PyValueError::new_err("a horizon is required"))?;
        let report = py
            .detach(|| {
                let backend = preb_cli::make_backend(&cfg)?;
                preb_cli::certify_with(&backend, tau0, tol, max_doublings, horizon, cfg.run.dt)
            })
            .map_err(cli_err)?;
        serde_json::to_string(&report).map_err(value_err)
    }

    fn ness(&self) -> PyResult<Observables> {
        preb_cli::ness(&self.0).map(|n| Observables(n.observables)).map_err(cli_err)
    }
}

#[pyfunction]
fn required_bath_size(t: f64, bath_hopping: f64) -> usize {
    chainmap::required_bath_size(t, bath_hopping)
}

/// Exact steady state of a quadratic chain between two baths.
#[pyfunction]
fn ness_observables(system: &SystemSpec, bath1: &Bath, bath2: &Bath) -> PyResult<Observables> {
    preb_core::negf::ness_observables(
        &system.0.single_particle(),
        &bath1.0.density,
        &bath2.0.density,
        &bath1.0.thermal,
        &bath2.0.thermal,
    )
    .map(Observables)
    .map_err(value_err)
}

#[pymodule]
fn preb_sim(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    m.add_class::<SystemSpec>()?;
    m.add_class::<Bath>()?;
    m.add_class::<Chain>()?;
    m.add_class::<Observables>()?;
    m.add_class::<Timeline>()?;
    m.add_class::<Experiment>()?;
    m.add_function(wrap_pyfunction!(required_bath_size, m)?)?;
    m.add_function(wrap_pyfunction!(ness_observables, m)?)?;
    Ok(())
}
