use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::Serialize;
use serde_json::json;
use thiserror::Error;

use drrpvt::clustering::{compute_main_stations, default_k, ClusterError};
use drrpvt::demand::{fit_empirical, DayWindow, DemandError};
use drrpvt::experiments::{
    main_stations, ratio_sweep, runtime_sweep, write_rows, ExperimentError, RatioAxis, SweepConfig,
};
use drrpvt::ingest::{
    build_instance, generate_synthetic, load_instance, read_stations, read_trips, save_instance, ColumnMapping,
    FleetConfig, IngestError, SyntheticConfig,
};
use drrpvt::ldd::{run_clustered_ldd, run_ldd, LddError, LddParams};
use drrpvt::milp::{solve_milp, MilpError, SolveLimits};
use drrpvt::model::{build_milp, check_solution, evaluate_objective, Mode, ModelError, ProblemInstance, Solution};
use drrpvt::simulator::{compare_reports, run_replications, Planner, Policy, SimConfig, SimError, SimulationReport};

use crate::{
    AxisArg, Cli, ClusterArgs, Command, ExperimentArgs, ExperimentName, IngestArgs, ModeArg, PlannerArg, PolicyArg,
    ReportArgs, SimulateArgs, SolveArgs, SolverKind, SynthArgs,
};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("cannot access {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error(transparent)]
    Demand(#[from] DemandError),
    #[error(transparent)]
    Cluster(#[from] ClusterError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Solver(#[from] MilpError),
    #[error(transparent)]
    Ldd(#[from] LddError),
    #[error(transparent)]
    Simulation(#[from] SimError),
    #[error(transparent)]
    Experiment(#[from] ExperimentError),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl CliError {
    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Usage(_) => "usage",
            CliError::Io { .. } => "io",
            CliError::Parse { .. } => "parse",
            CliError::Ingest(_) => "ingest",
            CliError::Demand(_) => "demand",
            CliError::Cluster(_) => "clustering",
            CliError::Model(_) => "model",
            CliError::Solver(_) => "solver",
            CliError::Ldd(_) => "ldd",
            CliError::Simulation(_) => "simulation",
            CliError::Experiment(_) => "experiment",
            CliError::Csv(_) => "csv",
        }
    }
}

type Result<T> = std::result::Result<T, CliError>;

pub fn run(cli: &Cli) -> Result<Vec<PathBuf>> {
    let out = Output::new(&cli.output_dir)?;
    match &cli.command {
        Command::Ingest(a) => ingest(a, &out),
        Command::Synth(a) => synth(a, cli.seed, &out),
        Command::Cluster(a) => cluster(a, cli.seed, &out),
        Command::Solve(a) => solve(a, cli.seed, &out),
        Command::Simulate(a) => simulate(a, cli.seed, cli.jobs, &out),
        Command::Experiment(a) => experiment(a, cli.seed, cli.jobs, &out),
        Command::Report(a) => report(a, &out),
    }
}

struct Output {
    dir: PathBuf,
}

impl Output {
    fn new(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
        Ok(Self { dir: dir.to_path_buf() })
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    fn text(&self, name: &str, text: &str) -> Result<PathBuf> {
        let p = self.path(name);
        fs::write(&p, text).map_err(io_err(&p))?;
        Ok(p)
    }

    fn json<T: Serialize>(&self, name: &str, value: &T) -> Result<PathBuf> {
        let mut text = serde_json::to_string_pretty(value).expect("values serialize");
        text.push('\n');
        self.text(name, &text)
    }

    fn csv(&self, name: &str, write: impl FnOnce(BufWriter<fs::File>) -> csv::Result<()>) -> Result<PathBuf> {
        let p = self.path(name);
        let file = fs::File::create(&p).map_err(io_err(&p))?;
        write(BufWriter::new(file))?;
        Ok(p)
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io { path: path.to_path_buf(), source }
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    serde_json::from_str(&text).map_err(|e| CliError::Parse { path: path.to_path_buf(), message: e.to_string() })
}

fn duration(secs: f64) -> Result<Duration> {
    Duration::try_from_secs_f64(secs).map_err(|_| CliError::Usage(format!("invalid time limit {secs}")))
}

fn ingest(a: &IngestArgs, out: &Output) -> Result<Vec<PathBuf>> {
    let mapping = match &a.mapping {
        Some(p) => ColumnMapping::load(p)?,
        None => ColumnMapping::default(),
    };
    let fleet: FleetConfig = match &a.fleet {
        Some(p) => read_json(p)?,
        None => FleetConfig::default(),
    };
    let stations = read_stations(&a.stations, &mapping)?;
    let trips = read_trips(&a.trips, &mapping)?;
    let ids: Vec<String> = stations.records.iter().map(|r| r.id.clone()).collect();
    let window = DayWindow { start_hour: a.start_hour, end_hour: a.end_hour };
    let model = fit_empirical(&trips.records, a.epoch_minutes, window, &ids)?;
    let instance = build_instance(&stations.records, &model, &fleet)?;

    let inst_path = out.path("instance.json");
    save_instance(&instance, &inst_path)?;
    let diagnostics = json!({
        "name": a.name,
        "stations": { "rows_read": stations.rows_read, "kept": stations.records.len(), "rejected": stations.diagnostics },
        "trips": { "rows_read": trips.rows_read, "parsed": trips.records.len(), "rejected": trips.diagnostics },
        "fit": model.diagnostics,
        "observed_days": model.days.len(),
        "horizon": instance.horizon,
    });
    let diag_path = out.json("ingest_diagnostics.json", &diagnostics)?;
    Ok(vec![inst_path, diag_path])
}

fn synth_config(a: &SynthArgs, seed: u64) -> Result<SyntheticConfig> {
    let mut cfg: SyntheticConfig = match &a.config {
        Some(p) => read_json(p)?,
        None => SyntheticConfig::default(),
    };
    cfg.seed = seed;
    if let Some(n) = a.stations {
        cfg.n_stations = n;
    }
    if let Some(h) = a.horizon {
        cfg.horizon = h;
    }
    if let Some(i) = a.intensity {
        cfg.demand_intensity = i;
    }
    if let Some(v) = a.vehicles {
        cfg.fleet.n_vehicles = v;
    }
    if let Some(w) = a.trailers {
        cfg.fleet.n_trailers = w;
    }
    Ok(cfg)
}

fn synth(a: &SynthArgs, seed: u64, out: &Output) -> Result<Vec<PathBuf>> {
    let instance = generate_synthetic(&synth_config(a, seed)?)?;
    let p = out.path("instance.json");
    save_instance(&instance, &p)?;
    Ok(vec![p])
}

fn cluster(a: &ClusterArgs, seed: u64, out: &Output) -> Result<Vec<PathBuf>> {
    let instance = load_instance(&a.instance)?;
    let k = a.k.unwrap_or_else(|| default_k(instance.n_stations()));
    let c = compute_main_stations(&instance.stations, k, seed)?;
    let p = out.csv(&format!("clusters_k{k}.csv"), |w| c.write_csv(w))?;
    Ok(vec![p])
}

fn mode_of(m: ModeArg) -> Mode {
    match m {
        ModeArg::Joint => Mode::Joint,
        ModeArg::Vehicles => Mode::VehiclesOnly,
        ModeArg::Trailers => Mode::TrailersOnly,
    }
}

fn mode_label(m: ModeArg) -> &'static str {
    match m {
        ModeArg::Joint => "joint",
        ModeArg::Vehicles => "vehicles",
        ModeArg::Trailers => "trailers",
    }
}

/// The instance restricted to the resources a mode may use.
fn restrict(instance: &ProblemInstance, mode: Mode) -> ProblemInstance {
    let mut inst = instance.clone();
    if !mode.uses_vehicles() {
        inst.vehicles.clear();
    }
    if !mode.uses_trailers() {
        inst.trailers.clear();
    }
    inst
}

fn ldd_params(a: &SolveArgs, limit: Duration) -> LddParams {
    let d = LddParams::default();
    LddParams {
        gamma0: a.gamma0.unwrap_or(d.gamma0),
        delta: a.delta.unwrap_or(d.delta),
        max_iterations: a.max_iterations.unwrap_or(d.max_iterations),
        time_limit: Some(limit),
        slave_limits: SolveLimits { nodes: a.node_limit, ..d.slave_limits },
        ..d
    }
}

#[derive(Serialize)]
struct SolveSummary {
    solver: &'static str,
    mode: &'static str,
    status: String,
    profit: f64,
    bound: Option<f64>,
    seconds: f64,
    iterations: Option<usize>,
    converged: Option<bool>,
    vehicle_moves: usize,
    trailer_tasks: usize,
    violations: Vec<String>,
}

fn solve(a: &SolveArgs, seed: u64, out: &Output) -> Result<Vec<PathBuf>> {
    if a.clustering && a.solver != SolverKind::Ldd {
        return Err(CliError::Usage("--clustering requires --solver ldd".into()));
    }
    let limit = duration(a.time_limit)?;
    let instance = load_instance(&a.instance)?;
    let mode = mode_of(a.mode);
    let tag = match a.solver {
        SolverKind::Milp => "milp",
        SolverKind::Ldd if a.clustering => "ldd_clustered",
        SolverKind::Ldd => "ldd",
    };
    let name = format!("{tag}_{}", mode_label(a.mode));
    let mut written = Vec::new();
    let start = std::time::Instant::now();

    let (solution, status, bound, iterations, converged, gap): (Solution, String, Option<f64>, _, _, _) = match a.solver {
        SolverKind::Milp => {
            let model = build_milp(&instance, mode)?;
            if a.dump_milp {
                written.push(out.json(&format!("milp_{}.json", mode_label(a.mode)), &model.problem)?);
            }
            let limits = SolveLimits { time: Some(limit), nodes: a.node_limit, ..SolveLimits::default() };
            let r = solve_milp(&model.problem, &limits)?;
            let sol = match &r.incumbent {
                Some(x) => model.decode(x),
                None => Solution::idle(&instance),
            };
            (sol, format!("{:?}", r.status).to_lowercase(), Some(r.best_bound), None, None, None)
        }
        SolverKind::Ldd => {
            let params = ldd_params(a, limit);
            let restricted = restrict(&instance, mode);
            if a.clustering {
                let k = a.k.unwrap_or_else(|| default_k(instance.n_stations()));
                let c = compute_main_stations(&instance.stations, k, seed)?;
                let r = run_clustered_ldd(&restricted, &c, &params)?;
                let (iters, conv, bound) = match &r.reduced {
                    Some(l) => (Some(l.iterations_used), Some(l.converged), None),
                    None => (None, None, None),
                };
                let sol = widen(&instance, &restricted, r.solution);
                (sol, "heuristic".to_string(), bound, iters, conv, r.reduced)
            } else {
                let r = run_ldd(&restricted, &params)?;
                let sol = widen(&instance, &restricted, r.solution.clone());
                let status = if r.converged { "converged" } else { "limit" };
                (sol, status.to_string(), Some(r.dual_bound), Some(r.iterations_used), Some(r.converged), Some(r))
            }
        }
    };
    let seconds = start.elapsed().as_secs_f64();
    let violations = check_solution(&instance, &solution, 1e-6)?;
    let profit = evaluate_objective(&instance, &solution)?;
    if let Some(g) = &gap {
        written.push(out.csv(&format!("gap_{name}.csv"), |w| g.write_gap_csv(w))?);
    }
    written.push(out.json(&format!("solution_{name}.json"), &solution)?);
    let summary = SolveSummary {
        solver: tag,
        mode: mode_label(a.mode),
        status,
        profit,
        bound,
        seconds,
        iterations,
        converged,
        vehicle_moves: solution.vehicle_moves(),
        trailer_tasks: solution.trailer_tasks(),
        violations: violations.iter().map(|v| v.to_string()).collect(),
    };
    written.push(out.json(&format!("summary_{name}.json"), &summary)?);
    Ok(written)
}

/// Lifts a plan computed on a fleet-restricted copy back to the full instance,
/// leaving the removed vehicles parked and the removed trailers idle.
fn widen(full: &ProblemInstance, restricted: &ProblemInstance, sol: Solution) -> Solution {
    if full.n_vehicles() == restricted.n_vehicles() && full.n_trailers() == restricted.n_trailers() {
        return sol;
    }
    let mut w = Solution::idle(full);
    w.x = sol.x;
    w.d_station = sol.d_station;
    w.task_values = sol.task_values;
    if restricted.n_vehicles() == full.n_vehicles() {
        w.y_plus = sol.y_plus;
        w.y_minus = sol.y_minus;
        w.z = sol.z;
        w.sigma = sol.sigma;
        w.d_vehicle = sol.d_vehicle;
    }
    if restricted.n_trailers() == full.n_trailers() {
        w.a_plus = sol.a_plus;
        w.a_minus = sol.a_minus;
        w.b = sol.b;
    }
    w
}

fn policies(p: PolicyArg) -> Vec<Policy> {
    match p {
        PolicyArg::Drrpvt => vec![Policy::Drrpvt],
        PolicyArg::Drrpv => vec![Policy::Drrpv],
        PolicyArg::Drrpt => vec![Policy::Drrpt],
        PolicyArg::Noop => vec![Policy::Noop],
        PolicyArg::All => vec![Policy::Drrpvt, Policy::Drrpv, Policy::Drrpt],
    }
}

fn simulate(a: &SimulateArgs, seed: u64, jobs: usize, out: &Output) -> Result<Vec<PathBuf>> {
    if a.replications == 0 {
        return Err(CliError::Usage("--replications must be at least 1".into()));
    }
    let instance = load_instance(&a.instance)?;
    let seeds: Vec<u64> = (0..a.replications).map(|i| seed.wrapping_add(i)).collect();
    let mut written = Vec::new();
    let mut by_policy = Vec::new();
    for policy in policies(a.policy) {
        let mut cfg = SimConfig::new(policy, seed);
        cfg.planner = match a.planner {
            PlannerArg::Exact => Planner::Exact,
            PlannerArg::Clustered => Planner::Clustered,
        };
        if let Some(l) = a.lookahead {
            if l == 0 {
                return Err(CliError::Usage("--lookahead must be at least 1".into()));
            }
            cfg.lookahead = l;
        }
        cfg.k = a.k;
        if let Some(n) = a.node_limit {
            cfg.limits.nodes = Some(n);
            cfg.ldd.slave_limits.nodes = Some(n);
        }
        let mut reports = Vec::new();
        for r in run_replications(&instance, &cfg, &seeds, jobs) {
            let r = r?;
            let label = policy.label().to_lowercase();
            let stem = format!("{label}_seed{}", r.seed);
            written.push(out.text(&format!("report_{stem}.json"), &r.to_json())?);
            written.push(out.csv(&format!("epochs_{stem}.csv"), |w| r.write_epoch_csv(w))?);
            written.push(out.csv(&format!("scatter_{stem}.csv"), |w| r.write_scatter_csv(w))?);
            reports.push(r);
        }
        by_policy.push(reports);
    }
    if a.policy == PolicyArg::All {
        for i in 0..seeds.len() {
            let c = compare_reports(&by_policy[0][i], &by_policy[1][i], &by_policy[2][i]);
            written.push(out.csv(&format!("comparison_seed{}.csv", seeds[i]), |w| c.write_csv(w))?);
        }
    }
    Ok(written)
}

fn experiment_base(a: &ExperimentArgs, seed: u64) -> Result<SyntheticConfig> {
    let mut cfg: SyntheticConfig = match &a.config {
        Some(p) => read_json(p)?,
        None => SyntheticConfig { horizon: a.horizon, ..SyntheticConfig::default() },
    };
    cfg.n_stations = a.stations;
    cfg.seed = seed;
    Ok(cfg)
}

fn experiment(a: &ExperimentArgs, seed: u64, jobs: usize, out: &Output) -> Result<Vec<PathBuf>> {
    let limit = duration(a.time_limit)?;
    let base = experiment_base(a, seed)?;
    let params = LddParams { time_limit: Some(limit), ..LddParams::default() };
    let p = match a.name {
        ExperimentName::MainStations => {
            let instance = generate_synthetic(&base)?;
            let k = a.k.unwrap_or_else(|| default_k(base.n_stations));
            let name = format!("synthetic_n{}_seed{seed}", base.n_stations);
            let row = main_stations(&name, &instance, k, seed, &params)?;
            out.csv("main_stations.csv", |w| write_rows(&[row], w))?
        }
        ExperimentName::RuntimeSweep => {
            if a.sizes.is_empty() {
                return Err(CliError::Usage("--sizes must list at least one size".into()));
            }
            let config = SweepConfig { base, sizes: a.sizes.clone(), time_limit: limit, seed, ldd: LddParams::default() };
            let rows = runtime_sweep(&config, jobs)?;
            out.csv("runtime_sweep.csv", |w| write_rows(&rows, w))?
        }
        ExperimentName::RatioSweep => {
            let (axis, label) = match a.axis {
                AxisArg::MainStations => (RatioAxis::MainStations, "main-stations"),
                AxisArg::Vehicles => (RatioAxis::Vehicles, "vehicles"),
                AxisArg::Trailers => (RatioAxis::Trailers, "trailers"),
            };
            let rows = ratio_sweep(&base, axis, &a.ratios, &params)?;
            out.csv(&format!("ratio_sweep_{label}.csv"), |w| write_rows(&rows, w))?
        }
    };
    Ok(vec![p])
}

fn report(a: &ReportArgs, out: &Output) -> Result<Vec<PathBuf>> {
    let vt: SimulationReport = read_json(&a.joint)?;
    let v: SimulationReport = read_json(&a.vehicles)?;
    let t: SimulationReport = read_json(&a.trailers)?;
    for (r, want, path) in [(&vt, Policy::Drrpvt, &a.joint), (&v, Policy::Drrpv, &a.vehicles), (&t, Policy::Drrpt, &a.trailers)] {
        if r.policy != want {
            return Err(CliError::Usage(format!(
                "{} holds a {} report, expected {}",
                path.display(),
                r.policy.label(),
                want.label()
            )));
        }
    }
    let c = compare_reports(&vt, &v, &t);
    let csv_path = out.csv("comparison.csv", |w| c.write_csv(w))?;
    let json_path = out.json(
        "comparison.json",
        &json!({
            "seeds": [vt.seed, v.seed, t.seed],
            "profit": { "DRRPVT": vt.profit, "DRRPV": v.profit, "DRRPT": t.profit },
            "lost": { "DRRPVT": vt.totals.lost, "DRRPV": v.totals.lost, "DRRPT": t.totals.lost },
            "comparison": c,
        }),
    )?;
    Ok(vec![csv_path, json_path])
}

