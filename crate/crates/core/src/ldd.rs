//! Lagrangian dual decomposition of the joint model.
//!
//! The vehicle-presence coupling row `y+ + y- <= C * sum z` is priced with
//! multipliers `alpha[s][t][v] >= 0`, splitting the problem into a repositioning
//! slave over `(x, y, a, b)` and a routing slave over `z`. Values are reported in
//! the minimization frame (negated profit) unless stated otherwise.

use std::collections::HashMap;
use std::io;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::clustering::{reduce_instance, MainStationClustering};
use crate::milp::{solve_milp, MilpError, SolveLimits, SolveResult, SolveStatus};
use crate::model::{
    build_milp, tensor3, tensor4, BudgetScope, Coupling, Mode, ModelBuilder, ModelError, ObjectiveKind,
    ProblemInstance, Solution, Tensor3, Tensor4,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LddError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Solver(#[from] MilpError),
    #[error("{0} subproblem is infeasible")]
    Infeasible(&'static str),
    #[error("delta must be positive")]
    BadDelta,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LddParams {
    /// Initial step size; step `k` uses `gamma0 / (1 + k / gamma_decay)`.
    pub gamma0: f64,
    pub gamma_decay: f64,
    /// Relative gap target, as a fraction of the best primal magnitude.
    pub delta: f64,
    /// Absolute gap below which the loop always stops.
    pub delta_abs: f64,
    pub max_iterations: usize,
    /// Wall-clock budget for the whole loop.
    #[serde(skip)]
    pub time_limit: Option<Duration>,
    #[serde(skip)]
    pub slave_limits: SolveLimits,
}

impl Default for LddParams {
    fn default() -> Self {
        Self {
            gamma0: 1.0,
            gamma_decay: 50.0,
            delta: 0.01,
            delta_abs: 1e-6,
            max_iterations: 500,
            time_limit: None,
            slave_limits: SolveLimits::default(),
        }
    }
}

impl LddParams {
    pub fn step(&self, k: usize) -> f64 {
        self.gamma0 / (1.0 + k as f64 / self.gamma_decay)
    }
}

/// Master state after an iteration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DualState {
    /// Multipliers `[s][t][v]`.
    pub alpha: Tensor3<f64>,
    pub gamma: f64,
    pub delta: f64,
    pub iteration: usize,
    pub rho1: f64,
    pub rho2: f64,
    /// Profit of the latest extracted plan.
    pub primal_value: f64,
    /// Best extracted plan, minimization frame.
    pub best_primal: f64,
    /// Best Lagrangian bound, minimization frame.
    pub best_dual: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GapPoint {
    pub iteration: usize,
    /// `L(alpha) = rho1 + rho2` at this iteration.
    pub dual: f64,
    /// Negated profit of this iteration's extracted plan.
    pub primal: f64,
    pub best_dual: f64,
    pub best_primal: f64,
}

impl GapPoint {
    pub fn gap(&self) -> f64 {
        self.best_primal - self.best_dual
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LddResult {
    pub solution: Solution,
    /// Profit of `solution`.
    pub primal_value: f64,
    /// Proven upper bound on the optimal profit.
    pub dual_bound: f64,
    pub gap_trace: Vec<GapPoint>,
    pub iterations_used: usize,
    pub converged: bool,
    pub final_state: DualState,
}

impl LddResult {
    /// Writes `iteration,dual,primal,gap` using the best-so-far envelopes.
    pub fn write_gap_csv<W: io::Write>(&self, out: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["iteration", "dual", "primal", "gap"])?;
        for p in &self.gap_trace {
            w.write_record([
                p.iteration.to_string(),
                p.best_dual.to_string(),
                p.best_primal.to_string(),
                p.gap().to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RepositionSlave {
    pub rho1: f64,
    /// Slave plan; routing fields are idle.
    pub plan: Solution,
    pub exact: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoutingSlave {
    pub rho2: f64,
    /// `[s][s2][v][t]`.
    pub z: Tensor4<bool>,
    /// `[v][s][t]`.
    pub sigma: Tensor3<bool>,
    pub exact: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Extraction {
    /// Profit of `solution` with routing cost subtracted.
    pub p: f64,
    pub solution: Solution,
}

fn solve(builder: ModelBuilder<'_>, limits: &SolveLimits) -> Result<(crate::model::MilpModel, SolveResult), MilpError> {
    let model = builder.build();
    let result = solve_milp(&model.problem, limits)?;
    Ok((model, result))
}

fn zero_alpha(instance: &ProblemInstance) -> Tensor3<f64> {
    tensor3(instance.n_stations(), instance.horizon, instance.n_vehicles(), 0.0)
}

/// Minimizes `-R x + alpha (y+ + y-) + P^ b` without vehicle routing.
pub fn solve_reposition_slave(
    instance: &ProblemInstance,
    alpha: &Tensor3<f64>,
    limits: &SolveLimits,
) -> Result<RepositionSlave, LddError> {
    let builder = ModelBuilder {
        instance,
        repositioning: true,
        vehicles: true,
        trailers: true,
        routing: false,
        coupling: Coupling::Free,
        objective: ObjectiveKind::Lagrangian(alpha),
    };
    let (model, r) = solve(builder, limits)?;
    // A limit hit before any incumbent still leaves a valid bound; idle is feasible.
    let plan = match &r.incumbent {
        Some(x) => model.decode(x),
        None if r.status != SolveStatus::Infeasible => Solution::idle(instance),
        None => return Err(LddError::Infeasible("repositioning")),
    };
    Ok(RepositionSlave { rho1: -r.best_bound, plan, exact: r.is_optimal() })
}

/// Minimizes `sum z (P - C alpha)` over vehicle routes.
pub fn solve_routing_slave(
    instance: &ProblemInstance,
    alpha: &Tensor3<f64>,
    limits: &SolveLimits,
) -> Result<RoutingSlave, LddError> {
    let builder = ModelBuilder {
        instance,
        repositioning: false,
        vehicles: true,
        trailers: false,
        routing: true,
        coupling: Coupling::Free,
        objective: ObjectiveKind::Lagrangian(alpha),
    };
    let (model, r) = solve(builder, limits)?;
    let sol = match &r.incumbent {
        Some(x) => model.decode(x),
        None if r.status != SolveStatus::Infeasible => Solution::idle(instance),
        None => return Err(LddError::Infeasible("routing")),
    };
    Ok(RoutingSlave { rho2: -r.best_bound, z: sol.z, sigma: sol.sigma, exact: r.is_optimal() })
}

/// Projected subgradient step on the multipliers.
pub fn update_duals(
    alpha: &Tensor3<f64>,
    gamma: f64,
    y_plus: &Tensor3<i64>,
    y_minus: &Tensor3<i64>,
    z: &Tensor4<bool>,
    capacities: &[f64],
) -> Tensor3<f64> {
    let n = alpha.len();
    let mut out = alpha.clone();
    for s in 0..n {
        for (t, row) in out[s].iter_mut().enumerate() {
            for (v, a) in row.iter_mut().enumerate() {
                let moves = z[s].iter().filter(|dest| dest[v][t]).count() as f64;
                let g = (y_plus[s][v][t] + y_minus[s][v][t]) as f64 - capacities[v] * moves;
                *a = (*a + gamma * g).max(0.0);
            }
        }
    }
    out
}

/// Parking indicators implied by a route that satisfies the flow constraints.
pub fn route_sigma(instance: &ProblemInstance, z: &Tensor4<bool>) -> Tensor3<bool> {
    let (n, h) = (instance.n_stations(), instance.horizon);
    let mut sigma = tensor3(instance.n_vehicles(), n, h, false);
    for (v, &origin) in instance.vehicle_origins().iter().enumerate() {
        let mut at = origin;
        for t in 0..h {
            match (0..n).find(|&s2| z[at][s2][v][t]) {
                Some(next) => at = next,
                None => sigma[v][at][t] = true,
            }
        }
    }
    sigma
}

fn presence(instance: &ProblemInstance, z: &Tensor4<bool>) -> Tensor3<bool> {
    let (n, nv, h) = (instance.n_stations(), instance.n_vehicles(), instance.horizon);
    let mut out = tensor3(n, nv, h, false);
    for s in 0..n {
        for v in 0..nv {
            for t in 0..h {
                out[s][v][t] = (0..n).any(|s2| z[s][s2][v][t]);
            }
        }
    }
    out
}

fn routing_cost(instance: &ProblemInstance, z: &Tensor4<bool>) -> f64 {
    let n = instance.n_stations();
    let mut total = 0.0;
    for s in 0..n {
        for s2 in 0..n {
            let moves = z[s][s2].iter().flatten().filter(|&&b| b).count();
            total += moves as f64 * instance.economics.routing_cost[s][s2];
        }
    }
    total
}

/// Best repositioning for a fixed route, returned as a complete plan.
pub fn extract_primal(
    instance: &ProblemInstance,
    z: &Tensor4<bool>,
    limits: &SolveLimits,
) -> Result<Extraction, LddError> {
    let here = presence(instance, z);
    let (value, mut solution) = extract_fixed(instance, &here, limits)?;
    solution.z = z.clone();
    solution.sigma = route_sigma(instance, z);
    Ok(Extraction { p: value - routing_cost(instance, z), solution })
}

fn extract_fixed(
    instance: &ProblemInstance,
    here: &Tensor3<bool>,
    limits: &SolveLimits,
) -> Result<(f64, Solution), LddError> {
    let builder = ModelBuilder {
        instance,
        repositioning: true,
        vehicles: true,
        trailers: true,
        routing: false,
        coupling: Coupling::Fixed(here),
        objective: ObjectiveKind::Profit,
    };
    let (model, r) = solve(builder, limits)?;
    match r.incumbent {
        Some(x) => Ok((r.incumbent_value, model.decode(&x))),
        // The idle plan is always feasible; fall back to it if the search ran out.
        None if r.status != SolveStatus::Infeasible => Ok((0.0, Solution::idle(instance))),
        None => Err(LddError::Infeasible("extraction")),
    }
}

/// Runs the dual loop until the certified gap closes or a limit is hit.
pub fn run_ldd(instance: &ProblemInstance, params: &LddParams) -> Result<LddResult, LddError> {
    instance.validate()?;
    if !(params.delta > 0.0) {
        return Err(LddError::BadDelta);
    }
    let start = Instant::now();
    let capacities: Vec<f64> = instance.vehicles.iter().map(|v| v.capacity as f64).collect();
    let mut alpha = zero_alpha(instance);
    let mut best_primal = f64::INFINITY;
    let mut best_dual = f64::NEG_INFINITY;
    let mut best_solution = Solution::idle(instance);
    let mut trace = Vec::new();
    let mut converged = false;
    let mut cache: HashMap<Tensor3<bool>, (f64, Solution)> = HashMap::new();
    let mut state = DualState {
        alpha: alpha.clone(),
        gamma: params.gamma0,
        delta: params.delta,
        iteration: 0,
        rho1: 0.0,
        rho2: 0.0,
        primal_value: 0.0,
        best_primal,
        best_dual,
    };

    for k in 0..params.max_iterations {
        let limits = slave_limits(params, start);
        let (rep, route) = std::thread::scope(|scope| {
            let a = &alpha;
            let rep = scope.spawn(move || solve_reposition_slave(instance, a, &limits));
            let route = solve_routing_slave(instance, a, &limits);
            (rep.join().expect("repositioning slave panicked"), route)
        });
        let (rep, route) = (rep?, route?);
        let dual = rep.rho1 + route.rho2;
        best_dual = best_dual.max(dual);

        let here = presence(instance, &route.z);
        let (value, plan) = match cache.get(&here) {
            Some(hit) => hit.clone(),
            None => {
                let fresh = extract_fixed(instance, &here, &slave_limits(params, start))?;
                cache.insert(here, fresh.clone());
                fresh
            }
        };
        let p = value - routing_cost(instance, &route.z);
        if -p < best_primal {
            best_primal = -p;
            best_solution = plan;
            best_solution.z = route.z.clone();
            best_solution.sigma = route_sigma(instance, &route.z);
        }
        let point = GapPoint { iteration: k, dual, primal: -p, best_dual, best_primal };
        trace.push(point);
        let gamma = params.step(k);
        state = DualState {
            alpha: alpha.clone(),
            gamma,
            delta: params.delta,
            iteration: k,
            rho1: rep.rho1,
            rho2: route.rho2,
            primal_value: p,
            best_primal,
            best_dual,
        };
        log::debug!("ldd iteration {k}: dual {dual:.6} primal {:.6} gap {:.6}", -p, point.gap());
        if point.gap() <= (params.delta * best_primal.abs()).max(params.delta_abs) {
            converged = true;
            break;
        }
        if params.time_limit.is_some_and(|lim| start.elapsed() >= lim) {
            break;
        }
        alpha = update_duals(&alpha, gamma, &rep.plan.y_plus, &rep.plan.y_minus, &route.z, &capacities);
    }

    Ok(LddResult {
        solution: best_solution,
        primal_value: -best_primal,
        dual_bound: -best_dual,
        iterations_used: trace.len(),
        gap_trace: trace,
        converged,
        final_state: state,
    })
}

fn slave_limits(params: &LddParams, start: Instant) -> SolveLimits {
    let mut limits = params.slave_limits;
    if let Some(total) = params.time_limit {
        let left = total.saturating_sub(start.elapsed()).max(Duration::from_millis(1));
        limits.time = Some(limits.time.map_or(left, |t| t.min(left)));
    }
    limits
}

/// A plan for the full instance assembled from main-station and cluster solves.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusteredResult {
    pub solution: Solution,
    pub profit: f64,
    /// The dual loop over main stations, when the reduced problem has vehicles.
    pub reduced: Option<LddResult>,
    /// Trailer tasks dropped because their value on the full instance broke the budget.
    pub dropped_tasks: usize,
}

/// Runs the dual loop over main stations, plans trailers inside each cluster,
/// then maps both back to `instance`.
///
/// Vehicle routes start from the vehicle's real station and visit cluster
/// representatives afterwards. With routes and trailer tasks fixed, handling
/// quantities and customer flows are re-optimized on the full instance, so the
/// returned plan is feasible for it.
pub fn run_clustered_ldd(
    instance: &ProblemInstance,
    clustering: &MainStationClustering,
    params: &LddParams,
) -> Result<ClusteredResult, LddError> {
    instance.validate()?;
    let split = reduce_instance(instance, clustering);
    let reduced = &split.reduced;
    let trailer_index: HashMap<&str, usize> =
        instance.trailers.iter().enumerate().map(|(i, w)| (w.id.as_str(), i)).collect();

    let mut ldd = None;
    let reduced_sol = if reduced.n_vehicles() > 0 {
        let r = run_ldd(reduced, params)?;
        let sol = r.solution.clone();
        ldd = Some(r);
        Some(sol)
    } else if reduced.n_trailers() > 0 {
        Some(solve_mode(reduced, Mode::TrailersOnly, &params.slave_limits)?)
    } else {
        None
    };

    let (n, h) = (instance.n_stations(), instance.horizon);
    let mut z = tensor4(n, n, instance.n_vehicles(), h, false);
    let mut tasks: Vec<(usize, usize, usize, usize)> = Vec::new();
    if let Some(sol) = &reduced_sol {
        let reps = &clustering.representatives;
        for (v, &origin) in instance.vehicle_origins().iter().enumerate() {
            let mut at = origin;
            for t in 0..h {
                let c = clustering.assignment[at];
                if let Some(c2) = (0..reduced.n_stations()).find(|&c2| sol.z[c][c2][v][t]) {
                    let next = if c2 == c { at } else { reps[c2] };
                    z[at][next][v][t] = true;
                    at = next;
                }
            }
        }
        for_each_task(sol, |s, s2, w, t| {
            tasks.push((reps[s], reps[s2], trailer_index[reduced.trailers[w].id.as_str()], t));
        });
    }
    for sub in &split.subinstances {
        if sub.instance.n_trailers() == 0 {
            continue;
        }
        let sol = solve_mode(&sub.instance, Mode::TrailersOnly, &params.slave_limits)?;
        for_each_task(&sol, |s, s2, w, t| {
            tasks.push((sub.stations[s], sub.stations[s2], trailer_index[sub.instance.trailers[w].id.as_str()], t));
        });
    }
    let before = tasks.len();
    fit_budget(instance, &mut tasks);
    let dropped_tasks = before - tasks.len();

    let (profit, solution) = solve_fixed_structure(instance, &z, &tasks, &params.slave_limits)?;
    Ok(ClusteredResult { solution, profit, reduced: ldd, dropped_tasks })
}

fn solve_mode(instance: &ProblemInstance, mode: Mode, limits: &SolveLimits) -> Result<Solution, LddError> {
    let model = build_milp(instance, mode)?;
    let r = solve_milp(&model.problem, limits)?;
    Ok(r.incumbent.map_or_else(|| Solution::idle(instance), |x| model.decode(&x)))
}

fn for_each_task(sol: &Solution, mut f: impl FnMut(usize, usize, usize, usize)) {
    for (s, row) in sol.b.iter().enumerate() {
        for (s2, per_w) in row.iter().enumerate() {
            for (w, per_t) in per_w.iter().enumerate() {
                for (t, &on) in per_t.iter().enumerate() {
                    if on {
                        f(s, s2, w, t);
                    }
                }
            }
        }
    }
}

/// Drops the most valuable tasks until the budget holds at full-instance prices.
fn fit_budget(instance: &ProblemInstance, tasks: &mut Vec<(usize, usize, usize, usize)>) {
    let values = instance.task_values();
    let price = |&(s, s2, _, t): &(usize, usize, usize, usize)| values[s][s2][t];
    let budget = instance.economics.budget;
    loop {
        let over: Option<usize> = match instance.economics.budget_scope {
            BudgetScope::Horizon => {
                let total: f64 = tasks.iter().map(price).sum();
                (total > budget + 1e-9).then_some(usize::MAX)
            }
            BudgetScope::Epoch => (0..instance.horizon)
                .find(|&t| tasks.iter().filter(|k| k.3 == t).map(price).sum::<f64>() > budget + 1e-9),
        };
        let Some(scope) = over else { return };
        let worst = tasks
            .iter()
            .enumerate()
            .filter(|(_, k)| scope == usize::MAX || k.3 == scope)
            .max_by(|(i, a), (j, b)| price(a).total_cmp(&price(b)).then(j.cmp(i)))
            .map(|(i, _)| i)
            .expect("an over-budget scope has tasks");
        tasks.remove(worst);
    }
}

/// Best handling and flows for fixed vehicle routes and trailer tasks.
fn solve_fixed_structure(
    instance: &ProblemInstance,
    z: &Tensor4<bool>,
    tasks: &[(usize, usize, usize, usize)],
    limits: &SolveLimits,
) -> Result<(f64, Solution), LddError> {
    let here = presence(instance, z);
    let mut model = ModelBuilder {
        instance,
        repositioning: true,
        vehicles: true,
        trailers: true,
        routing: false,
        coupling: Coupling::Fixed(&here),
        objective: ObjectiveKind::Profit,
    }
    .build();
    let (n, nw, h) = (instance.n_stations(), instance.n_trailers(), instance.horizon);
    let p = &mut model.problem;
    let l = &model.layout;
    let mut fix = |j: Option<usize>, v: f64| {
        if let Some(j) = j {
            p.lower[j] = v;
            p.upper[j] = v;
        }
    };
    for s in 0..n {
        for s2 in 0..n {
            for w in 0..nw {
                for t in 0..h {
                    let on = tasks.contains(&(s, s2, w, t));
                    fix(l.b(s, s2, w, t), f64::from(u8::from(on)));
                }
            }
        }
    }
    for s in 0..n {
        for w in 0..nw {
            for t in 0..h {
                if !tasks.iter().any(|&(o, _, k, e)| o == s && k == w && e == t) {
                    fix(l.a_plus(s, w, t), 0.0);
                }
                if !tasks.iter().any(|&(_, d, k, e)| d == s && k == w && e == t) {
                    fix(l.a_minus(s, w, t), 0.0);
                }
            }
        }
    }
    let r = solve_milp(&model.problem, limits)?;
    match r.incumbent {
        Some(x) => {
            let mut sol = model.decode(&x);
            sol.z = z.clone();
            sol.sigma = route_sigma(instance, z);
            Ok((r.incumbent_value - routing_cost(instance, z), sol))
        }
        None if r.status != SolveStatus::Infeasible => Ok((0.0, Solution::idle(instance))),
        None => Err(LddError::Infeasible("fixed-structure")),
    }
}
