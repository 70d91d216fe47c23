//! Experiment sweeps over synthetic instances, each producing rows ready for CSV.

use std::io;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::clustering::{compute_main_stations, default_k, ClusterError};
use crate::ingest::{generate_synthetic, IngestError, SyntheticConfig};
use crate::ldd::{run_clustered_ldd, run_ldd, LddError, LddParams};
use crate::milp::{solve_milp, MilpError, SolveLimits, SolveStatus};
use crate::model::{build_milp, check_solution, Mode, ModelError, ProblemInstance};

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error(transparent)]
    Cluster(#[from] ClusterError),
    #[error(transparent)]
    Ldd(#[from] LddError),
    #[error(transparent)]
    Solver(#[from] MilpError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("{0}")]
    Config(String),
}

/// One instance solved with and without main stations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MainStationRow {
    pub instance: String,
    pub profit_with_ms: f64,
    pub runtime_with_ms: f64,
    pub profit_without_ms: f64,
    pub runtime_without_ms: f64,
    /// Whether the unclustered run closed its gap before the limits.
    pub converged_without_ms: bool,
    /// Constraint violations of the two returned plans.
    pub violations_with_ms: usize,
    pub violations_without_ms: usize,
}

pub fn main_stations(
    name: &str,
    instance: &ProblemInstance,
    k: usize,
    seed: u64,
    params: &LddParams,
) -> Result<MainStationRow, ExperimentError> {
    let clustering = compute_main_stations(&instance.stations, k, seed)?;
    let start = Instant::now();
    let with = run_clustered_ldd(instance, &clustering, params)?;
    let runtime_with_ms = start.elapsed().as_secs_f64();
    let start = Instant::now();
    let without = run_ldd(instance, params)?;
    let runtime_without_ms = start.elapsed().as_secs_f64();
    Ok(MainStationRow {
        instance: name.to_string(),
        profit_with_ms: with.profit,
        runtime_with_ms,
        profit_without_ms: without.primal_value,
        runtime_without_ms,
        converged_without_ms: without.converged,
        violations_with_ms: check_solution(instance, &with.solution, 1e-6)?.len(),
        violations_without_ms: check_solution(instance, &without.solution, 1e-6)?.len(),
    })
}

pub fn write_rows<W: io::Write, T: Serialize>(rows: &[T], out: W) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

/// One sweep point: the exact solver against clustered LDD under the same limit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub stations: usize,
    pub milp_seconds: f64,
    pub milp_completed: bool,
    pub milp_profit: f64,
    pub ldd_seconds: f64,
    pub ldd_completed: bool,
    pub ldd_profit: f64,
    /// Set on the first size where the exact solver ran out of time.
    pub crossover: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepConfig {
    /// Template for every point; `n_stations` and `seed` are overridden.
    pub base: SyntheticConfig,
    pub sizes: Vec<usize>,
    pub time_limit: Duration,
    pub seed: u64,
    pub ldd: LddParams,
}

fn sweep_point(config: &SweepConfig, n: usize) -> Result<SweepRow, ExperimentError> {
    let inst = generate_synthetic(&SyntheticConfig { n_stations: n, seed: config.seed, ..config.base.clone() })?;
    let model = build_milp(&inst, Mode::Joint)?;
    let start = Instant::now();
    let r = solve_milp(&model.problem, &SolveLimits::default().with_time(config.time_limit))?;
    let milp_seconds = start.elapsed().as_secs_f64();

    let clustering = compute_main_stations(&inst.stations, default_k(n), config.seed)?;
    let params = LddParams { time_limit: Some(config.time_limit), ..config.ldd };
    let start = Instant::now();
    let l = run_clustered_ldd(&inst, &clustering, &params)?;
    let ldd_seconds = start.elapsed().as_secs_f64();
    let ldd_completed = ldd_seconds < config.time_limit.as_secs_f64() && l.reduced.as_ref().map_or(true, |r| r.converged);
    Ok(SweepRow {
        stations: n,
        milp_seconds,
        milp_completed: r.status == SolveStatus::Optimal,
        milp_profit: r.incumbent_value,
        ldd_seconds,
        ldd_completed,
        ldd_profit: l.profit,
        crossover: false,
    })
}

/// Runs every size, at most `jobs` at a time, and marks the crossover row.
pub fn runtime_sweep(config: &SweepConfig, jobs: usize) -> Result<Vec<SweepRow>, ExperimentError> {
    let mut rows = Vec::with_capacity(config.sizes.len());
    for chunk in config.sizes.chunks(jobs.max(1)) {
        let results: Vec<_> = std::thread::scope(|scope| {
            let handles: Vec<_> = chunk.iter().map(|&n| scope.spawn(move || sweep_point(config, n))).collect();
            handles.into_iter().map(|h| h.join().expect("sweep point panicked")).collect()
        });
        for r in results {
            rows.push(r?);
        }
    }
    rows.sort_by_key(|r| r.stations);
    if let Some(first) = rows.iter_mut().find(|r| !r.milp_completed) {
        first.crossover = true;
    }
    Ok(rows)
}

/// The quantity whose ratio to the station count is swept.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RatioAxis {
    MainStations,
    Vehicles,
    Trailers,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RatioRow {
    pub axis: RatioAxis,
    pub ratio: f64,
    pub count: usize,
    pub profit: f64,
    pub seconds: f64,
}

/// Joint profit of clustered LDD as stations per main station, vehicle or
/// trailer varies. Counts are `round(stations / ratio)`, at least one.
pub fn ratio_sweep(
    base: &SyntheticConfig,
    axis: RatioAxis,
    ratios: &[f64],
    params: &LddParams,
) -> Result<Vec<RatioRow>, ExperimentError> {
    let n = base.n_stations;
    let mut rows = Vec::with_capacity(ratios.len());
    for &ratio in ratios {
        if !(ratio > 0.0) {
            return Err(ExperimentError::Config(format!("ratio must be positive, got {ratio}")));
        }
        let count = ((n as f64 / ratio).round() as usize).max(1);
        let mut cfg = base.clone();
        let mut k = default_k(n);
        match axis {
            RatioAxis::MainStations => k = count.min(n),
            RatioAxis::Vehicles => cfg.fleet.n_vehicles = count,
            RatioAxis::Trailers => cfg.fleet.n_trailers = count,
        }
        let inst = generate_synthetic(&cfg)?;
        let clustering = compute_main_stations(&inst.stations, k, cfg.seed)?;
        let start = Instant::now();
        let r = run_clustered_ldd(&inst, &clustering, params)?;
        rows.push(RatioRow { axis, ratio, count, profit: r.profit, seconds: start.elapsed().as_secs_f64() });
    }
    Ok(rows)
}
