//! Python bindings. Node trajectories cross the boundary as lists of
//! flattened (column-major) node values; reports come back as dicts.

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use stealthlqg::attacks::{build_optimal_adaptive, build_optimal_det, AttackStrategy};
use stealthlqg::coeffs::{GridFunction, Mat};
use stealthlqg::evaluate::{Evaluator, ObjectiveReport};
use stealthlqg::model::{preset, SystemModel, PRESET_NAMES};
use stealthlqg::synthesis::{solve_det_attack, Context, GainSet};
use stealthlqg::Error;

fn to_py(e: Error) -> PyErr {
    if stealthlqg::cli::exit_code(&e) == 2 {
        PyValueError::new_err(e.to_string())
    } else {
        PyRuntimeError::new_err(e.to_string())
    }
}

fn nodes(g: &GridFunction) -> Vec<Vec<f64>> {
    g.values().iter().map(|m| m.as_slice().to_vec()).collect()
}

fn from_nodes(ctx: &Context, rows: usize, values: Vec<Vec<f64>>, what: &str) -> PyResult<GridFunction> {
    if values.len() != ctx.grid.len() || values.iter().any(|v| v.len() != rows) {
        return Err(PyValueError::new_err(format!(
            "{what} needs {} nodes of length {rows}",
            ctx.grid.len()
        )));
    }
    GridFunction::new(ctx.grid, values.iter().map(|v| Mat::from_column_slice(rows, 1, v)).collect()).map_err(to_py)
}

fn report_dict<'py>(py: Python<'py>, r: &ObjectiveReport) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("degradation", r.degradation)?;
    d.set_item("degradation_se", r.degradation_se)?;
    d.set_item("stealthiness", r.stealthiness)?;
    d.set_item("stealthiness_se", r.stealthiness_se)?;
    d.set_item("rho_energy", r.rho_energy)?;
    d.set_item("rho_energy_se", r.rho_energy_se)?;
    d.set_item("objective", r.objective)?;
    d.set_item("objective_se", r.objective_se)?;
    d.set_item("lambda", r.lambda)?;
    d.set_item("n_paths", r.n_paths)?;
    Ok(d)
}

/// A model with its filter and agent gains solved.
#[pyclass(frozen)]
struct Problem {
    ctx: Context,
    gains: GainSet,
}

impl Problem {
    fn build(model: SystemModel) -> PyResult<Self> {
        let ctx = Context::new(model).map_err(to_py)?;
        let gains = GainSet::solve(&ctx).map_err(to_py)?;
        Ok(Self { ctx, gains })
    }

    fn evaluator(&self) -> PyResult<Evaluator<'_>> {
        Evaluator::new(&self.ctx, &self.gains.filter, &self.gains.agent).map_err(to_py)
    }

    fn strategy(&self, name: &str) -> PyResult<AttackStrategy> {
        let (ctx, g) = (&self.ctx, &self.gains);
        Ok(match name {
            "zero" => AttackStrategy::Zero,
            "optimal-det" => {
                let det = solve_det_attack(ctx, &g.filter, &g.agent).map_err(to_py)?;
                build_optimal_det(ctx, &g.filter, &g.agent, &det).map_err(to_py)?.0
            }
            "optimal-adaptive" => build_optimal_adaptive(ctx, &g.filter, &g.agent).map_err(to_py)?.strategy,
            "gaussian" => AttackStrategy::GaussianWhite {
                std_rho: 1.0,
                std_tau: 1.0,
                seed_offset: 1,
            },
            "sinusoid" => AttackStrategy::Sinusoid {
                amplitude: 1.0,
                omega: 8.0 * std::f64::consts::PI,
            },
            other => return Err(PyValueError::new_err(format!("unknown strategy `{other}`"))),
        })
    }
}

#[pymethods]
impl Problem {
    #[staticmethod]
    #[pyo3(signature = (name, lam=None))]
    fn from_preset(name: &str, lam: Option<f64>) -> PyResult<Self> {
        let mut model = preset(name).map_err(to_py)?.model;
        if let Some(l) = lam {
            model = model.with_lambda(l);
        }
        Self::build(model)
    }

    #[staticmethod]
    fn from_toml(text: &str) -> PyResult<Self> {
        Self::build(SystemModel::from_toml(text).map_err(to_py)?)
    }

    #[getter]
    fn lam(&self) -> f64 {
        self.ctx.lambda()
    }

    fn times(&self) -> Vec<f64> {
        self.ctx.grid.nodes().collect()
    }

    fn filter_covariance(&self) -> Vec<Vec<f64>> {
        nodes(&self.gains.filter.cov)
    }

    fn existence_bound(&self) -> f64 {
        self.gains.bound
    }

    /// `(rho, tau)` node values of the optimal deterministic attack.
    fn optimal_deterministic(&self) -> PyResult<(Vec<Vec<f64>>, Vec<Vec<f64>>)> {
        match self.strategy("optimal-det")? {
            AttackStrategy::DeterministicPath { rho, tau } => Ok((nodes(&rho), nodes(&tau))),
            _ => unreachable!("optimal-det builds a fixed path"),
        }
    }

    /// Value-function prediction of the adaptive attack's full objective.
    fn adaptive_objective(&self) -> PyResult<f64> {
        let a = build_optimal_adaptive(&self.ctx, &self.gains.filter, &self.gains.agent).map_err(to_py)?;
        Ok(a.full_objective(&self.ctx, &self.gains.filter))
    }

    fn exact_objective<'py>(
        &self,
        py: Python<'py>,
        rho: Vec<Vec<f64>>,
        tau: Vec<Vec<f64>>,
    ) -> PyResult<Bound<'py, PyDict>> {
        let rho = from_nodes(&self.ctx, self.ctx.dim(), rho, "rho")?;
        let tau = from_nodes(&self.ctx, self.ctx.model.obs_dim(), tau, "tau")?;
        let r = self.evaluator()?.exact_objective(&rho, &tau).map_err(to_py)?;
        report_dict(py, &r)
    }

    #[pyo3(signature = (strategy, n_paths, seed=0, workers=0))]
    fn monte_carlo<'py>(
        &self,
        py: Python<'py>,
        strategy: &str,
        n_paths: usize,
        seed: u64,
        workers: usize,
    ) -> PyResult<Bound<'py, PyDict>> {
        let s = self.strategy(strategy)?;
        let ev = self.evaluator()?;
        let r = py.detach(|| ev.mc_objective(&s, n_paths, seed, workers)).map_err(to_py)?;
        report_dict(py, &r)
    }
}

#[pyfunction]
fn preset_names() -> Vec<&'static str> {
    PRESET_NAMES.to_vec()
}

#[pyfunction]
fn preset_toml(name: &str) -> PyResult<String> {
    preset(name).and_then(|p| p.model.to_toml()).map_err(to_py)
}

/// Runs the command-line interface with `args` (without the program name)
/// and returns its exit code.
#[pyfunction]
fn run_cli(py: Python<'_>, args: Vec<String>) -> i32 {
    py.detach(|| stealthlqg::cli::run(std::iter::once("stealthlqg".to_string()).chain(args)))
}

#[pymodule]
pub fn stealthlqg_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Problem>()?;
    m.add_function(wrap_pyfunction!(preset_names, m)?)?;
    m.add_function(wrap_pyfunction!(preset_toml, m)?)?;
    m.add_function(wrap_pyfunction!(run_cli, m)?)?;
    Ok(())
}
