//! Python bindings: problem parameters, well constants, scenarios and
//! trajectories.

use std::path::PathBuf;

use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;

use pwell::analysis::{classify_run, fit_decay, ClassifyThresholds};
use pwell::commands::Command;
use pwell::constants::{initial_energy_gate, well_constants as core_well_constants, OptimizerSettings};
use pwell::functionals::{energy_snapshot, membership};
use pwell::integrator::Termination;
use pwell::output::write_trajectory_csv;
use pwell::scenario::{load_config, parse_with_overrides, preset};

fn to_py(e: pwell::Error) -> PyErr {
    match e {
        pwell::Error::Io(io) => PyIOError::new_err(io.to_string()),
        other => PyValueError::new_err(other.to_string()),
    }
}

#[pyclass(name = "ProblemParams", from_py_object)]
#[derive(Clone)]
struct PyProblemParams {
    inner: pwell::ProblemParams,
}

#[pymethods]
impl PyProblemParams {
    #[new]
    #[pyo3(signature = (p=4.0, m=2.0, alpha=1.0, r=1.0, a=1.0))]
    fn new(p: f64, m: f64, alpha: f64, r: f64, a: f64) -> PyResult<Self> {
        let inner = pwell::ProblemParams {
            p,
            m,
            alpha,
            r,
            a,
            ..Default::default()
        };
        pwell::domain::validate_params(&inner, pwell::Purpose::Simulate)
            .into_result()
            .map_err(to_py)?;
        Ok(Self { inner })
    }

    #[getter]
    fn p(&self) -> f64 {
        self.inner.p
    }
    #[getter]
    fn m(&self) -> f64 {
        self.inner.m
    }
    #[getter]
    fn alpha(&self) -> f64 {
        self.inner.alpha
    }
    #[getter]
    fn r(&self) -> f64 {
        self.inner.r
    }
    #[getter]
    fn a(&self) -> f64 {
        self.inner.a
    }

    fn __repr__(&self) -> String {
        let q = &self.inner;
        format!(
            "ProblemParams(p={}, m={}, alpha={}, r={}, a={})",
            q.p, q.m, q.alpha, q.r, q.a
        )
    }
}

#[pyclass(name = "WellConstants", frozen, skip_from_py_object)]
struct PyWellConstants {
    inner: pwell::WellConstants,
}

#[pymethods]
impl PyWellConstants {
    #[getter]
    fn c_star(&self) -> f64 {
        self.inner.c_star
    }
    #[getter]
    fn d(&self) -> f64 {
        self.inner.d
    }
    #[getter]
    fn beta(&self) -> f64 {
        self.inner.beta
    }
    #[getter]
    fn d_direct(&self) -> f64 {
        self.inner.d_direct
    }
    #[getter]
    fn p(&self) -> f64 {
        self.inner.p
    }
    #[getter]
    fn mesh_size(&self) -> usize {
        self.inner.mesh_size
    }

    /// The gate `E0 < d` in its Sobolev-constant form.
    fn gate(&self, e0: f64) -> bool {
        initial_energy_gate(e0, &self.inner)
    }

    fn __repr__(&self) -> String {
        let w = &self.inner;
        format!(
            "WellConstants(c_star={}, d={}, beta={}, n={})",
            w.c_star, w.d, w.beta, w.mesh_size
        )
    }
}

/// Sobolev constant, well depth and Nehari distance on a uniform mesh.
#[pyfunction]
#[pyo3(signature = (n_elements, p, restarts=20, seed=20_240_521))]
fn well_constants(py: Python<'_>, n_elements: usize, p: f64, restarts: usize, seed: u64) -> PyResult<PyWellConstants> {
    let settings = OptimizerSettings {
        restarts,
        seed,
        ..Default::default()
    };
    let inner = py
        .detach(|| {
            let mesh = pwell::Mesh1D::new(n_elements, 1.0)?;
            core_well_constants(&mesh, p, &settings)
        })
        .map_err(to_py)?;
    Ok(PyWellConstants { inner })
}

#[pyclass(name = "Trajectory", frozen, skip_from_py_object)]
struct PyTrajectory {
    inner: pwell::Trajectory,
    thresholds: ClassifyThresholds,
}

#[pymethods]
impl PyTrajectory {
    #[getter]
    fn times(&self) -> Vec<f64> {
        self.inner.times()
    }
    #[getter]
    fn energy(&self) -> Vec<f64> {
        self.inner.energies()
    }
    #[getter]
    fn nehari(&self) -> Vec<f64> {
        self.inner.snapshots().map(|s| s.nehari).collect()
    }
    #[getter]
    fn grad_sq(&self) -> Vec<f64> {
        self.inner.snapshots().map(|s| s.grad_sq).collect()
    }
    #[getter]
    fn theta(&self) -> Vec<f64> {
        self.inner.samples.iter().map(|s| s.theta).collect()
    }
    #[getter]
    fn dt(&self) -> Vec<f64> {
        self.inner.snapshots().map(|s| s.dt_used).collect()
    }

    /// `"Completed"`, `"BlownUp"` or `"Collapsed"`.
    #[getter]
    fn termination(&self) -> &'static str {
        match self.inner.termination {
            Termination::Completed => "Completed",
            Termination::BlownUp { .. } => "BlownUp",
            Termination::Collapsed { .. } => "Collapsed",
        }
    }

    #[getter]
    fn t_star(&self) -> Option<f64> {
        match self.inner.termination {
            Termination::BlownUp { t_star, .. } => Some(t_star),
            _ => None,
        }
    }

    /// Verdict label and its exit code.
    fn verdict(&self) -> (String, i32) {
        let outcome = classify_run(&self.inner, &self.thresholds);
        (outcome.label().to_string(), outcome.exit_code())
    }

    /// `(xi_hat, c_hat, r2)` of `ln E` over the trailing window.
    #[pyo3(signature = (window_fraction=0.5))]
    fn decay_fit(&self, window_fraction: f64) -> PyResult<(f64, f64, f64)> {
        let fit = fit_decay(&self.inner, window_fraction).map_err(to_py)?;
        Ok((fit.xi_hat, fit.c_hat, fit.r2))
    }

    fn dissipation_residual(&self) -> PyResult<f64> {
        pwell::integrator::dissipation_residual(&self.inner).map_err(to_py)
    }

    fn write_csv(&self, path: PathBuf) -> PyResult<()> {
        write_trajectory_csv(&self.inner, &path).map_err(to_py)
    }

    fn __len__(&self) -> usize {
        self.inner.samples.len()
    }
}

#[pyclass(name = "Scenario", frozen, skip_from_py_object)]
struct PyScenario {
    inner: pwell::ScenarioConfig,
}

#[pymethods]
impl PyScenario {
    /// A built-in preset (`stable-p4` or `unstable-p4`) with overrides.
    #[staticmethod]
    #[pyo3(signature = (name, overrides=Vec::new()))]
    fn preset(name: &str, overrides: Vec<String>) -> PyResult<Self> {
        let text = preset(name).ok_or_else(|| PyValueError::new_err(format!("no preset named `{name}`")))?;
        let inner = parse_with_overrides(text, &overrides).map_err(to_py)?;
        Ok(Self { inner })
    }

    #[staticmethod]
    #[pyo3(signature = (text, overrides=Vec::new()))]
    fn from_json(text: &str, overrides: Vec<String>) -> PyResult<Self> {
        let inner = parse_with_overrides(text, &overrides).map_err(to_py)?;
        Ok(Self { inner })
    }

    #[staticmethod]
    #[pyo3(signature = (path, overrides=Vec::new()))]
    fn from_file(path: PathBuf, overrides: Vec<String>) -> PyResult<Self> {
        let inner = load_config(&path, &overrides).map_err(to_py)?;
        Ok(Self { inner })
    }

    #[getter]
    fn params(&self) -> PyProblemParams {
        PyProblemParams {
            inner: self.inner.params,
        }
    }

    /// Initial functionals and set membership as a dict.
    fn classify<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, pyo3::types::PyDict>> {
        let cfg = &self.inner;
        let (init, snap, constants) = py
            .detach(|| -> pwell::Result<_> {
                let setup = cfg.setup()?;
                let init = cfg.initial_data(&setup)?;
                let snap = energy_snapshot(&init.state, &setup.ops, &setup.params);
                Ok((init, snap, setup.constants))
            })
            .map_err(to_py)?;
        let dict = pyo3::types::PyDict::new(py);
        dict.set_item("lambda", init.lambda)?;
        dict.set_item("I", snap.nehari)?;
        dict.set_item("J", snap.potential)?;
        dict.set_item("E0", snap.energy)?;
        if let Some(wc) = constants {
            let m = membership(&snap, wc.d, init.state.u.iter().all(|x| *x == 0.0));
            dict.set_item("d", wc.d)?;
            dict.set_item("region", format!("{:?}", m.region))?;
            dict.set_item("in_stable_w", m.in_stable_w)?;
            dict.set_item("in_unstable_u", m.in_unstable_u)?;
            dict.set_item("gate", initial_energy_gate(snap.energy, &wc))?;
        }
        Ok(dict)
    }

    fn simulate(&self, py: Python<'_>) -> PyResult<PyTrajectory> {
        let cfg = &self.inner;
        let inner = py
            .detach(|| -> pwell::Result<_> {
                let setup = cfg.setup()?;
                let init = cfg.initial_data(&setup)?;
                pwell::integrator::run(&init.state, &setup.ops, &setup.params, &cfg.sim_config())
            })
            .map_err(to_py)?;
        Ok(PyTrajectory {
            inner,
            thresholds: cfg.analysis.thresholds(),
        })
    }

    /// Runs a CLI command (`constants`, `classify`, `simulate`, `analyze`,
    /// `sweep`) and returns `(exit_code, report)`.
    fn run_command(&self, py: Python<'_>, name: &str) -> PyResult<(i32, String)> {
        let command = match name {
            "constants" => Command::Constants,
            "classify" => Command::Classify,
            "simulate" => Command::Simulate,
            "analyze" => Command::Analyze,
            "sweep" => Command::Sweep,
            other => return Err(PyValueError::new_err(format!("unknown command `{other}`"))),
        };
        let out = py.detach(|| command.execute(&self.inner)).map_err(to_py)?;
        Ok((out.exit_code, out.report))
    }
}

#[pymodule]
fn pwell_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyProblemParams>()?;
    m.add_class::<PyWellConstants>()?;
    m.add_class::<PyTrajectory>()?;
    m.add_class::<PyScenario>()?;
    m.add_function(wrap_pyfunction!(well_constants, m)?)?;
    Ok(())
}
