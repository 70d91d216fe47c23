//! Python bindings. Instances, plans and reports cross the boundary as JSON
//! text so Python callers get plain dicts from `json.loads`.

use std::time::Duration;

use pyo3::create_exception;
use pyo3::exceptions::{PyException, PyValueError};
use pyo3::prelude::*;

use drrpvt::clustering::{compute_main_stations, default_k, MainStationClustering};
use drrpvt::ingest::{from_json_str, generate_synthetic, to_canonical_json, SyntheticConfig};
use drrpvt::ldd::{run_clustered_ldd, run_ldd, LddParams};
use drrpvt::milp::{solve_milp, SolveLimits};
use drrpvt::model::{build_milp, check_solution, evaluate_objective, Mode, ProblemInstance, Solution};
use drrpvt::simulator::{compare_reports, run_policy_with, Policy, SimConfig, SimulationReport};

create_exception!(drrpvt, DrrpvtError, PyException);

fn err<E: std::fmt::Display>(e: E) -> PyErr {
    DrrpvtError::new_err(e.to_string())
}

fn parse_mode(mode: &str) -> PyResult<Mode> {
    match mode {
        "joint" => Ok(Mode::Joint),
        "vehicles" => Ok(Mode::VehiclesOnly),
        "trailers" => Ok(Mode::TrailersOnly),
        _ => Err(PyValueError::new_err(format!("unknown mode {mode:?}; use joint, vehicles or trailers"))),
    }
}

fn parse_policy(policy: &str) -> PyResult<Policy> {
    Policy::ALL
        .into_iter()
        .find(|p| p.label().eq_ignore_ascii_case(policy))
        .ok_or_else(|| PyValueError::new_err(format!("unknown policy {policy:?}")))
}

fn limit(seconds: Option<f64>) -> PyResult<Option<Duration>> {
    seconds
        .map(|s| Duration::try_from_secs_f64(s).map_err(|_| PyValueError::new_err(format!("invalid time limit {s}"))))
        .transpose()
}

/// A validated problem instance.
#[pyclass(module = "drrpvt", frozen)]
pub struct Instance {
    inner: ProblemInstance,
}

#[pymethods]
impl Instance {
    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        Ok(Self { inner: from_json_str(text).map_err(err)? })
    }

    /// Synthetic city; `config` is a JSON generator configuration.
    #[staticmethod]
    #[pyo3(signature = (n_stations, horizon, seed = 0, config = None))]
    fn synthetic(n_stations: usize, horizon: usize, seed: u64, config: Option<&str>) -> PyResult<Self> {
        let base: SyntheticConfig = match config {
            Some(c) => serde_json::from_str(c).map_err(|e| PyValueError::new_err(e.to_string()))?,
            None => SyntheticConfig::default(),
        };
        let cfg = SyntheticConfig { n_stations, horizon, seed, ..base };
        Ok(Self { inner: generate_synthetic(&cfg).map_err(err)? })
    }

    fn to_json(&self) -> String {
        to_canonical_json(&self.inner)
    }

    #[getter]
    fn n_stations(&self) -> usize {
        self.inner.n_stations()
    }

    #[getter]
    fn n_vehicles(&self) -> usize {
        self.inner.n_vehicles()
    }

    #[getter]
    fn n_trailers(&self) -> usize {
        self.inner.n_trailers()
    }

    #[getter]
    fn horizon(&self) -> usize {
        self.inner.horizon
    }

    #[getter]
    fn station_ids(&self) -> Vec<String> {
        self.inner.stations.iter().map(|s| s.id.clone()).collect()
    }

    /// Profit of a plan given as JSON.
    fn profit(&self, solution: &str) -> PyResult<f64> {
        evaluate_objective(&self.inner, &parse_solution(solution)?).map_err(err)
    }

    /// Violated constraints of a plan, one message per violation.
    #[pyo3(signature = (solution, tol = 1e-6))]
    fn violations(&self, solution: &str, tol: f64) -> PyResult<Vec<String>> {
        let v = check_solution(&self.inner, &parse_solution(solution)?, tol).map_err(err)?;
        Ok(v.iter().map(ToString::to_string).collect())
    }

    fn __repr__(&self) -> String {
        format!(
            "Instance(stations={}, vehicles={}, trailers={}, horizon={})",
            self.inner.n_stations(),
            self.inner.n_vehicles(),
            self.inner.n_trailers(),
            self.inner.horizon
        )
    }
}

fn parse_solution(text: &str) -> PyResult<Solution> {
    serde_json::from_str(text).map_err(|e| PyValueError::new_err(format!("bad solution: {e}")))
}

/// Outcome of one solve.
#[pyclass(module = "drrpvt", frozen, get_all)]
pub struct SolveOutcome {
    status: String,
    profit: f64,
    /// Proven upper bound on the optimal profit, when the method gives one.
    bound: Option<f64>,
    solution: String,
}

#[pymethods]
impl SolveOutcome {
    fn __repr__(&self) -> String {
        format!("SolveOutcome(status={:?}, profit={}, bound={:?})", self.status, self.profit, self.bound)
    }
}

fn outcome(instance: &ProblemInstance, status: String, bound: Option<f64>, sol: &Solution) -> PyResult<SolveOutcome> {
    Ok(SolveOutcome {
        status,
        profit: evaluate_objective(instance, sol).map_err(err)?,
        bound,
        solution: serde_json::to_string(sol).expect("solution serializes"),
    })
}

/// Exact branch and bound on the full MILP.
#[pyfunction]
#[pyo3(signature = (instance, mode = "joint", time_limit = None, node_limit = None))]
fn solve_exact(
    py: Python<'_>,
    instance: &Instance,
    mode: &str,
    time_limit: Option<f64>,
    node_limit: Option<usize>,
) -> PyResult<SolveOutcome> {
    let mode = parse_mode(mode)?;
    let limits = SolveLimits { time: limit(time_limit)?, nodes: node_limit, ..SolveLimits::default() };
    let inst = &instance.inner;
    let (status, bound, sol) = py.detach(|| {
        let model = build_milp(inst, mode).map_err(err)?;
        let r = solve_milp(&model.problem, &limits).map_err(err)?;
        let sol = r.incumbent.as_ref().map_or_else(|| Solution::idle(inst), |x| model.decode(x));
        Ok::<_, PyErr>((format!("{:?}", r.status).to_lowercase(), r.best_bound, sol))
    })?;
    outcome(inst, status, Some(bound), &sol)
}

/// Dual decomposition into repositioning and routing subproblems.
#[pyfunction]
#[pyo3(signature = (instance, time_limit = None, max_iterations = 500, gamma0 = 1.0, delta = 0.01))]
fn solve_ldd(
    py: Python<'_>,
    instance: &Instance,
    time_limit: Option<f64>,
    max_iterations: usize,
    gamma0: f64,
    delta: f64,
) -> PyResult<SolveOutcome> {
    let params = LddParams { time_limit: limit(time_limit)?, max_iterations, gamma0, delta, ..LddParams::default() };
    let inst = &instance.inner;
    let r = py.detach(|| run_ldd(inst, &params)).map_err(err)?;
    let status = if r.converged { "converged" } else { "limit" };
    outcome(inst, status.to_string(), Some(r.dual_bound), &r.solution)
}

/// Main stations found by k-medoids on great-circle distance.
#[pyclass(module = "drrpvt", frozen)]
pub struct Clustering {
    inner: MainStationClustering,
}

#[pymethods]
impl Clustering {
    #[getter]
    fn k(&self) -> usize {
        self.inner.k
    }

    /// Cluster of each station, in instance order.
    #[getter]
    fn assignment(&self) -> Vec<usize> {
        self.inner.assignment.clone()
    }

    /// Station index of each main station.
    #[getter]
    fn representatives(&self) -> Vec<usize> {
        self.inner.representatives.clone()
    }

    fn to_csv(&self) -> PyResult<String> {
        let mut buf = Vec::new();
        self.inner.write_csv(&mut buf).map_err(err)?;
        Ok(String::from_utf8(buf).expect("csv is utf-8"))
    }
}

#[pyfunction]
#[pyo3(signature = (instance, k = None, seed = 0))]
fn cluster(instance: &Instance, k: Option<usize>, seed: u64) -> PyResult<Clustering> {
    let k = k.unwrap_or_else(|| default_k(instance.inner.n_stations()));
    Ok(Clustering { inner: compute_main_stations(&instance.inner.stations, k, seed).map_err(err)? })
}

/// Vehicles over main stations, trailers within each cluster.
#[pyfunction]
#[pyo3(signature = (instance, clustering, time_limit = None))]
fn solve_clustered(
    py: Python<'_>,
    instance: &Instance,
    clustering: &Clustering,
    time_limit: Option<f64>,
) -> PyResult<SolveOutcome> {
    let params = LddParams { time_limit: limit(time_limit)?, ..LddParams::default() };
    let inst = &instance.inner;
    let r = py.detach(|| run_clustered_ldd(inst, &clustering.inner, &params)).map_err(err)?;
    outcome(inst, "heuristic".to_string(), None, &r.solution)
}

/// Rolling-horizon simulation; returns the report as JSON.
#[pyfunction]
#[pyo3(signature = (instance, policy = "DRRPVT", seed = 0, lookahead = None))]
fn simulate(py: Python<'_>, instance: &Instance, policy: &str, seed: u64, lookahead: Option<usize>) -> PyResult<String> {
    let mut cfg = SimConfig::new(parse_policy(policy)?, seed);
    if let Some(l) = lookahead {
        cfg.lookahead = l.max(1);
    }
    let inst = &instance.inner;
    let report = py.detach(|| run_policy_with(inst, &cfg)).map_err(err)?;
    Ok(report.to_json())
}

/// Relative gains of the joint policy over the two restricted ones, as JSON.
#[pyfunction]
fn compare(joint: &str, vehicles: &str, trailers: &str) -> PyResult<String> {
    let parse = |t: &str| -> PyResult<SimulationReport> {
        serde_json::from_str(t).map_err(|e| PyValueError::new_err(format!("bad report: {e}")))
    };
    let c = compare_reports(&parse(joint)?, &parse(vehicles)?, &parse(trailers)?);
    Ok(serde_json::to_string(&c).expect("comparison serializes"))
}

#[pymodule]
#[pyo3(name = "drrpvt")]
fn drrpvt_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("DrrpvtError", m.py().get_type::<DrrpvtError>())?;
    m.add_class::<Instance>()?;
    m.add_class::<SolveOutcome>()?;
    m.add_class::<Clustering>()?;
    m.add_function(wrap_pyfunction!(solve_exact, m)?)?;
    m.add_function(wrap_pyfunction!(solve_ldd, m)?)?;
    m.add_function(wrap_pyfunction!(cluster, m)?)?;
    m.add_function(wrap_pyfunction!(solve_clustered, m)?)?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    m.add_function(wrap_pyfunction!(compare, m)?)?;
    Ok(())
}
