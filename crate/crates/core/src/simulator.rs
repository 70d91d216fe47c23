//! Rolling-horizon simulation: plan one epoch ahead with a policy, realize
//! sampled demand, and advance the system.
//!
//! Within an epoch events happen in a fixed order: vehicle and trailer pickups,
//! customer departures (served pro rata when bikes run short), vehicle and
//! trailer dropoffs, then landing of bikes hired in the previous epoch. A bike
//! returned to a full station goes to the nearest station with a free dock.

use std::collections::HashMap;
use std::fmt;
use std::io;
use std::str::FromStr;

use serde::{Deserialize, Serialize, Serializer};
use thiserror::Error;

use crate::clustering::{compute_main_stations, default_k, reduce_instance, ClusterError, MainStationClustering};
use crate::demand::{sample_scenario_with, DemandModel, SamplingMode};
use crate::incentives::{allocate_tasks, generate_bids, TrailerTask};
use crate::ldd::{run_ldd, LddError, LddParams};
use crate::milp::{solve_milp, MilpError, SolveLimits};
use crate::model::{build_milp, BudgetScope, DemandTensor, ModelError, Mode, ProblemInstance, Solution};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("plan is infeasible against the current state: {}", .0.join("; "))]
    InfeasiblePlan(Vec<String>),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Solver(#[from] MilpError),
    #[error(transparent)]
    Ldd(#[from] LddError),
    #[error(transparent)]
    Cluster(#[from] ClusterError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Policy {
    Drrpvt,
    Drrpv,
    Drrpt,
    Noop,
}

impl Policy {
    pub const ALL: [Policy; 4] = [Policy::Drrpvt, Policy::Drrpv, Policy::Drrpt, Policy::Noop];

    pub fn label(self) -> &'static str {
        match self {
            Policy::Drrpvt => "DRRPVT",
            Policy::Drrpv => "DRRPV",
            Policy::Drrpt => "DRRPT",
            Policy::Noop => "NOOP",
        }
    }

    pub fn mode(self) -> Option<Mode> {
        match self {
            Policy::Drrpvt => Some(Mode::Joint),
            Policy::Drrpv => Some(Mode::VehiclesOnly),
            Policy::Drrpt => Some(Mode::TrailersOnly),
            Policy::Noop => None,
        }
    }
}

impl fmt::Display for Policy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for Policy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Policy::ALL
            .into_iter()
            .find(|p| p.label().eq_ignore_ascii_case(s))
            .ok_or_else(|| format!("unknown policy {s:?}"))
    }
}

/// Bikes hired in one epoch and landing at `destination` in `arrival_epoch`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Transit {
    pub destination: usize,
    pub arrival_epoch: usize,
    pub count: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SystemState {
    pub epoch: usize,
    pub station_bikes: Vec<u32>,
    pub vehicle_loads: Vec<u32>,
    pub vehicle_positions: Vec<usize>,
    pub in_transit: Vec<Transit>,
}

impl SystemState {
    pub fn initial(instance: &ProblemInstance) -> Self {
        let in_transit = (0..instance.n_stations())
            .filter_map(|s| {
                let count = instance.arrivals_at_start(s).round() as u32;
                (count > 0).then_some(Transit { destination: s, arrival_epoch: 0, count })
            })
            .collect();
        Self {
            epoch: 0,
            station_bikes: instance.stations.iter().map(|s| s.initial_bikes).collect(),
            vehicle_loads: instance.vehicles.iter().map(|v| v.initial_load).collect(),
            vehicle_positions: instance.vehicle_origins(),
            in_transit,
        }
    }

    /// Bikes at stations, on vehicles and in transit.
    pub fn total_bikes(&self) -> u64 {
        let sum = |it: &mut dyn Iterator<Item = u32>| it.map(u64::from).sum::<u64>();
        sum(&mut self.station_bikes.iter().copied())
            + sum(&mut self.vehicle_loads.iter().copied())
            + sum(&mut self.in_transit.iter().map(|t| t.count))
    }
}

/// What one vehicle does this epoch: handle bikes at `station`, then drive to `next_station`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct VehicleAction {
    pub vehicle: usize,
    pub station: usize,
    pub pickup: u32,
    pub dropoff: u32,
    pub next_station: usize,
}

/// A trailer task awarded for this epoch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrailerAction {
    pub trailer: usize,
    pub origin: usize,
    pub destination: usize,
    pub quantity: u32,
    pub value: f64,
    pub payment: f64,
}

/// The first-epoch slice of a plan. Vehicles without an action stay parked.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EpochPlan {
    pub vehicles: Vec<VehicleAction>,
    pub trailers: Vec<TrailerAction>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ServedTrip {
    pub origin: usize,
    pub destination: usize,
    pub count: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub demand: u64,
    pub served: u64,
    pub lost: u64,
    /// Returns moved from a full station to a neighbor.
    pub redirected: u64,
    pub revenue: f64,
    pub routing_cost: f64,
    pub trailer_payments: f64,
    /// Conserved bike count after the epoch.
    pub total_bikes: u64,
    pub station_demand: Vec<u32>,
    pub station_served: Vec<u32>,
    pub trips: Vec<ServedTrip>,
    pub vehicle_actions: Vec<VehicleAction>,
    pub trailer_actions: Vec<TrailerAction>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Totals {
    pub demand: u64,
    pub served: u64,
    pub lost: u64,
    pub redirected: u64,
    pub revenue: f64,
    pub routing_cost: f64,
    pub trailer_payments: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationReport {
    pub policy: Policy,
    pub seed: u64,
    pub totals: Totals,
    pub profit: f64,
    pub epochs: Vec<EpochRecord>,
    pub final_state: SystemState,
}

impl SimulationReport {
    fn new(policy: Policy, seed: u64, epochs: Vec<EpochRecord>, final_state: SystemState) -> Self {
        let mut t = Totals::default();
        for e in &epochs {
            t.demand += e.demand;
            t.served += e.served;
            t.lost += e.lost;
            t.redirected += e.redirected;
            t.revenue += e.revenue;
            t.routing_cost += e.routing_cost;
            t.trailer_payments += e.trailer_payments;
        }
        let profit = t.revenue - t.routing_cost - t.trailer_payments;
        Self { policy, seed, totals: t, profit, epochs, final_state }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn write_epoch_csv<W: io::Write>(&self, out: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record([
            "epoch",
            "demand",
            "served",
            "lost",
            "redirected",
            "revenue",
            "routing_cost",
            "trailer_payments",
            "vehicle_moves",
            "trailer_tasks",
            "total_bikes",
        ])?;
        for e in &self.epochs {
            let moves = e.vehicle_actions.iter().filter(|a| a.next_station != a.station).count();
            w.write_record([
                e.epoch.to_string(),
                e.demand.to_string(),
                e.served.to_string(),
                e.lost.to_string(),
                e.redirected.to_string(),
                e.revenue.to_string(),
                e.routing_cost.to_string(),
                e.trailer_payments.to_string(),
                moves.to_string(),
                e.trailer_actions.len().to_string(),
                e.total_bikes.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    /// Realized departures against served departures per station and epoch.
    pub fn write_scatter_csv<W: io::Write>(&self, out: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["actual", "served", "station", "epoch"])?;
        for e in &self.epochs {
            for (s, (&d, &sv)) in e.station_demand.iter().zip(&e.station_served).enumerate() {
                w.write_record([d.to_string(), sv.to_string(), s.to_string(), e.epoch.to_string()])?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

/// Checks a plan slice against the state; returns one message per problem.
pub fn plan_violations(instance: &ProblemInstance, state: &SystemState, plan: &EpochPlan) -> Vec<String> {
    let n = instance.n_stations();
    let mut out = Vec::new();
    let mut taken = vec![0u64; n];
    let mut added = vec![0u64; n];
    let mut seen = vec![false; instance.n_vehicles()];
    for a in &plan.vehicles {
        let Some(v) = instance.vehicles.get(a.vehicle) else {
            out.push(format!("unknown vehicle {}", a.vehicle));
            continue;
        };
        if std::mem::replace(&mut seen[a.vehicle], true) {
            out.push(format!("vehicle {} has two actions", a.vehicle));
        }
        if a.station != state.vehicle_positions[a.vehicle] {
            out.push(format!("vehicle {} is not at station {}", a.vehicle, a.station));
            continue;
        }
        if a.next_station >= n {
            out.push(format!("vehicle {} heads to unknown station {}", a.vehicle, a.next_station));
        }
        let load = state.vehicle_loads[a.vehicle] as u64;
        if load + a.pickup as u64 > v.capacity as u64 {
            out.push(format!("vehicle {} overloaded", a.vehicle));
        }
        if a.dropoff as u64 > load + a.pickup as u64 {
            out.push(format!("vehicle {} drops more than it carries", a.vehicle));
        }
        taken[a.station] += a.pickup as u64;
        added[a.station] += a.dropoff as u64;
    }
    let mut busy = vec![false; instance.n_trailers()];
    for a in &plan.trailers {
        let Some(w) = instance.trailers.get(a.trailer) else {
            out.push(format!("unknown trailer {}", a.trailer));
            continue;
        };
        if a.origin >= n || a.destination >= n {
            out.push(format!("trailer {} uses an unknown station", a.trailer));
            continue;
        }
        if std::mem::replace(&mut busy[a.trailer], true) {
            out.push(format!("trailer {} has two tasks", a.trailer));
        }
        if a.quantity > w.capacity {
            out.push(format!("trailer {} over capacity", a.trailer));
        }
        if instance.distances[a.origin][a.destination] > w.max_distance_km {
            out.push(format!("trailer {} task exceeds its range", a.trailer));
        }
        if !(a.payment >= 0.0) {
            out.push(format!("trailer {} has a negative payment", a.trailer));
        }
        taken[a.origin] += a.quantity as u64;
        added[a.destination] += a.quantity as u64;
    }
    for s in 0..n {
        let bikes = state.station_bikes[s] as u64;
        if taken[s] > bikes {
            out.push(format!("station {s}: pickups {} exceed stock {bikes}", taken[s]));
        } else if bikes - taken[s] + added[s] > instance.stations[s].capacity as u64 {
            out.push(format!("station {s}: dropoffs exceed free docks"));
        }
    }
    out
}

/// Splits `total` across `counts` proportionally; leftovers go to the largest
/// remainders, ties to the lowest index.
pub fn largest_remainder(counts: &[u32], total: u32) -> Vec<u32> {
    let sum: u64 = counts.iter().map(|&c| c as u64).sum();
    if sum <= total as u64 {
        return counts.to_vec();
    }
    let mut out: Vec<u32> = counts.iter().map(|&c| (c as u64 * total as u64 / sum) as u32).collect();
    let mut left = total as u64 - out.iter().map(|&c| c as u64).sum::<u64>();
    let mut order: Vec<usize> = (0..counts.len()).collect();
    order.sort_by_key(|&i| (std::cmp::Reverse(counts[i] as u64 * total as u64 % sum), i));
    for i in order {
        if left == 0 {
            break;
        }
        out[i] += 1;
        left -= 1;
    }
    out
}

/// Advances one epoch. `realized[s][s2]` counts departures requested this epoch.
pub fn step(
    instance: &ProblemInstance,
    state: &SystemState,
    plan: &EpochPlan,
    realized: &[Vec<u32>],
) -> Result<(SystemState, EpochRecord), SimError> {
    let n = instance.n_stations();
    let t = state.epoch;
    if t >= instance.horizon {
        return Err(SimError::Dimension(format!("epoch {t} beyond horizon {}", instance.horizon)));
    }
    if realized.len() != n || realized.iter().any(|r| r.len() != n) {
        return Err(SimError::Dimension(format!("realized demand must be {n}x{n}")));
    }
    let violations = plan_violations(instance, state, plan);
    if !violations.is_empty() {
        return Err(SimError::InfeasiblePlan(violations));
    }

    let mut next = state.clone();
    next.epoch = t + 1;
    let bikes = &mut next.station_bikes;

    // (1) pickups
    for a in &plan.vehicles {
        bikes[a.station] -= a.pickup;
        next.vehicle_loads[a.vehicle] += a.pickup;
    }
    for a in &plan.trailers {
        bikes[a.origin] -= a.quantity;
    }

    // (2) departures
    let mut rec_trips = Vec::new();
    let mut station_demand = vec![0u32; n];
    let mut station_served = vec![0u32; n];
    let mut revenue = 0.0;
    let mut departures = vec![0u32; n];
    for s in 0..n {
        let served = largest_remainder(&realized[s], bikes[s]);
        station_demand[s] = realized[s].iter().sum();
        station_served[s] = served.iter().sum();
        bikes[s] -= station_served[s];
        for (s2, &c) in served.iter().enumerate() {
            if c > 0 {
                revenue += c as f64 * instance.economics.revenue[s][s2][t];
                departures[s2] += c;
                rec_trips.push(ServedTrip { origin: s, destination: s2, count: c });
            }
        }
    }

    // (3) dropoffs
    let mut routing_cost = 0.0;
    for a in &plan.vehicles {
        bikes[a.station] += a.dropoff;
        next.vehicle_loads[a.vehicle] -= a.dropoff;
        next.vehicle_positions[a.vehicle] = a.next_station;
        routing_cost += instance.economics.routing_cost[a.station][a.next_station];
    }
    let mut payments = 0.0;
    for a in &plan.trailers {
        bikes[a.destination] += a.quantity;
        payments += a.payment;
    }

    // (4) arrivals
    let mut landing = vec![0u32; n];
    let mut pending = Vec::new();
    for tr in std::mem::take(&mut next.in_transit) {
        if tr.arrival_epoch <= t {
            landing[tr.destination] += tr.count;
        } else {
            pending.push(tr);
        }
    }
    let mut redirected = 0u64;
    let mut stranded = vec![0u32; n];
    for d in 0..n {
        let mut count = landing[d];
        let free = instance.stations[d].capacity - bikes[d];
        let here = count.min(free);
        bikes[d] += here;
        count -= here;
        if count == 0 {
            continue;
        }
        let mut near: Vec<usize> = (0..n).filter(|&o| o != d).collect();
        near.sort_by(|&a, &b| instance.distances[d][a].total_cmp(&instance.distances[d][b]).then(a.cmp(&b)));
        for o in near {
            let put = count.min(instance.stations[o].capacity - bikes[o]);
            bikes[o] += put;
            count -= put;
            redirected += put as u64;
            if count == 0 {
                break;
            }
        }
        // Every dock in the system is taken; try again next epoch.
        stranded[d] += count;
    }
    for s in 0..n {
        if stranded[s] > 0 {
            pending.push(Transit { destination: s, arrival_epoch: t + 1, count: stranded[s] });
        }
        if departures[s] > 0 {
            pending.push(Transit { destination: s, arrival_epoch: t + 1, count: departures[s] });
        }
    }
    next.in_transit = pending;

    let demand: u64 = station_demand.iter().map(|&d| d as u64).sum();
    let served: u64 = station_served.iter().map(|&d| d as u64).sum();
    let record = EpochRecord {
        epoch: t,
        demand,
        served,
        lost: demand - served,
        redirected,
        revenue,
        routing_cost,
        trailer_payments: payments,
        total_bikes: next.total_bikes(),
        station_demand,
        station_served,
        trips: rec_trips,
        vehicle_actions: plan.vehicles.clone(),
        trailer_actions: plan.trailers.clone(),
    };
    Ok((next, record))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Planner {
    /// One MILP over all stations in the policy's mode.
    Exact,
    /// Vehicles over main stations, trailers within clusters.
    Clustered,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReducedSolver {
    Ldd,
    Milp,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub policy: Policy,
    pub seed: u64,
    /// Epochs each plan looks ahead, including the one executed.
    pub lookahead: usize,
    pub planner: Planner,
    pub reduced_solver: ReducedSolver,
    /// Main-station count; defaults to one per five stations.
    pub k: Option<usize>,
    pub ldd: LddParams,
    pub limits: SolveLimits,
    pub bids_per_task: usize,
    pub sampling: SamplingMode,
}

impl SimConfig {
    /// Node limits rather than wall-clock limits keep runs reproducible.
    pub fn new(policy: Policy, seed: u64) -> Self {
        let limits = SolveLimits { nodes: Some(2_000), ..SolveLimits::default() };
        Self {
            policy,
            seed,
            lookahead: 2,
            planner: Planner::Clustered,
            reduced_solver: ReducedSolver::Ldd,
            k: None,
            ldd: LddParams { max_iterations: 30, slave_limits: limits, ..LddParams::default() },
            limits,
            bids_per_task: 3,
            sampling: SamplingMode::Poisson,
        }
    }
}

/// Simulates the whole horizon with the default configuration for `policy`.
pub fn run_policy(instance: &ProblemInstance, policy: Policy, seed: u64) -> Result<SimulationReport, SimError> {
    run_policy_with(instance, &SimConfig::new(policy, seed))
}

pub fn run_policy_with(instance: &ProblemInstance, config: &SimConfig) -> Result<SimulationReport, SimError> {
    instance.validate()?;
    let n = instance.n_stations();
    let model = DemandModel::from_tensor(instance.demand.clone(), instance.epoch_minutes);
    let scenario = sample_scenario_with(&model, config.sampling, config.seed);
    let clustering = match (config.policy, config.planner) {
        (Policy::Noop, _) | (_, Planner::Exact) => None,
        (_, Planner::Clustered) => {
            let k = config.k.unwrap_or_else(|| default_k(n));
            Some(compute_main_stations(&instance.stations, k, config.seed)?)
        }
    };

    let mut state = SystemState::initial(instance);
    let mut budget_left = instance.economics.budget;
    let mut epochs = Vec::with_capacity(instance.horizon);
    for t in 0..instance.horizon {
        let budget = match instance.economics.budget_scope {
            BudgetScope::Horizon => budget_left,
            BudgetScope::Epoch => instance.economics.budget,
        };
        let mut plan = match config.policy {
            Policy::Noop => EpochPlan::default(),
            _ => plan_epoch(instance, &state, config, clustering.as_ref(), budget)?,
        };
        fit_plan(instance, &state, &mut plan);
        let paid = run_auction(&mut plan, budget, config.bids_per_task, auction_seed(config.seed, t));
        budget_left -= paid;
        let realized: Vec<Vec<u32>> = (0..n)
            .map(|s| (0..n).map(|s2| scenario.get(s, s2, t).round() as u32).collect())
            .collect();
        let (next, record) = step(instance, &state, &plan, &realized)?;
        epochs.push(record);
        state = next;
    }
    Ok(SimulationReport::new(config.policy, config.seed, epochs, state))
}

/// Independent replications over `seeds`, at most `jobs` at a time.
pub fn run_replications(
    instance: &ProblemInstance,
    config: &SimConfig,
    seeds: &[u64],
    jobs: usize,
) -> Vec<Result<SimulationReport, SimError>> {
    let mut out = Vec::with_capacity(seeds.len());
    for chunk in seeds.chunks(jobs.max(1)) {
        let results: Vec<_> = std::thread::scope(|scope| {
            let handles: Vec<_> = chunk
                .iter()
                .map(|&seed| {
                    let cfg = SimConfig { seed, ..config.clone() };
                    scope.spawn(move || run_policy_with(instance, &cfg))
                })
                .collect();
            handles.into_iter().map(|h| h.join().expect("replication panicked")).collect()
        });
        out.extend(results);
    }
    out
}

fn auction_seed(seed: u64, epoch: usize) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(epoch as u64 + 1)
}

/// Awards the plan's trailer tasks; unawarded tasks are dropped.
fn run_auction(plan: &mut EpochPlan, budget: f64, bids_per_task: usize, seed: u64) -> f64 {
    if plan.trailers.is_empty() {
        return 0.0;
    }
    let tasks: Vec<TrailerTask> = plan
        .trailers
        .iter()
        .map(|a| TrailerTask {
            origin: a.origin.to_string(),
            destination: a.destination.to_string(),
            epoch: 0,
            quantity: a.quantity,
            value: a.value,
        })
        .collect();
    let bids = generate_bids(&tasks, bids_per_task, seed);
    let allocation = allocate_tasks(&tasks, &bids, budget.max(0.0));
    let mut kept = Vec::new();
    for (a, award) in plan.trailers.iter().zip(&allocation.awards) {
        if award.winner.is_some() {
            kept.push(TrailerAction { payment: award.payment, ..*a });
        }
    }
    plan.trailers = kept;
    allocation.total_paid
}

/// Trims a plan so it can run against the actual state: actions start where the
/// vehicle really is, and quantities respect stock, loads and free docks.
pub fn fit_plan(instance: &ProblemInstance, state: &SystemState, plan: &mut EpochPlan) {
    let n = instance.n_stations();
    let mut stock: Vec<u32> = state.station_bikes.clone();
    let mut free: Vec<u32> = (0..n).map(|s| instance.stations[s].capacity - state.station_bikes[s]).collect();
    let mut seen = vec![false; instance.n_vehicles()];
    let mut vehicles = Vec::new();
    for a in &plan.vehicles {
        if a.vehicle >= seen.len() || std::mem::replace(&mut seen[a.vehicle], true) || a.next_station >= n {
            continue;
        }
        let s = state.vehicle_positions[a.vehicle];
        let load = state.vehicle_loads[a.vehicle];
        let pickup = a.pickup.min(stock[s]).min(instance.vehicles[a.vehicle].capacity - load);
        stock[s] -= pickup;
        free[s] += pickup;
        let dropoff = a.dropoff.min(load + pickup).min(free[s]);
        free[s] -= dropoff;
        vehicles.push(VehicleAction { station: s, pickup, dropoff, ..*a });
    }
    let mut busy = vec![false; instance.n_trailers()];
    let mut trailers = Vec::new();
    for a in &plan.trailers {
        if a.trailer >= busy.len() || a.origin >= n || a.destination >= n || busy[a.trailer] {
            continue;
        }
        let w = &instance.trailers[a.trailer];
        if instance.distances[a.origin][a.destination] > w.max_distance_km {
            continue;
        }
        let q = a.quantity.min(w.capacity).min(stock[a.origin]).min(free[a.destination]);
        if q == 0 || a.origin == a.destination {
            continue;
        }
        stock[a.origin] -= q;
        free[a.origin] += q;
        free[a.destination] -= q;
        busy[a.trailer] = true;
        trailers.push(TrailerAction { quantity: q, ..*a });
    }
    plan.vehicles = vehicles;
    plan.trailers = trailers;
}

/// The state as a fresh instance covering the next `lookahead` epochs.
pub fn planning_instance(
    instance: &ProblemInstance,
    state: &SystemState,
    lookahead: usize,
    budget: f64,
) -> ProblemInstance {
    let t0 = state.epoch;
    let h = lookahead.max(1).min(instance.horizon - t0);
    let n = instance.n_stations();
    let slice = |m: &Vec<Vec<Vec<f64>>>| -> Vec<Vec<Vec<f64>>> {
        m.iter().map(|row| row.iter().map(|c| c[t0..t0 + h].to_vec()).collect()).collect()
    };
    let mut inst = instance.clone();
    for (s, st) in inst.stations.iter_mut().enumerate() {
        st.initial_bikes = state.station_bikes[s];
    }
    for (v, veh) in inst.vehicles.iter_mut().enumerate() {
        veh.initial_station = instance.stations[state.vehicle_positions[v]].id.clone();
        veh.initial_load = state.vehicle_loads[v];
    }
    inst.demand = DemandTensor(slice(&instance.demand.0));
    inst.economics.revenue = slice(&instance.economics.revenue);
    inst.economics.budget = budget.max(0.0);
    inst.horizon = h;
    let mut arrivals = vec![0.0; n];
    for tr in state.in_transit.iter().filter(|tr| tr.arrival_epoch <= t0) {
        arrivals[tr.destination] += tr.count as f64;
    }
    inst.initial_arrivals = if arrivals.iter().any(|&a| a > 0.0) { arrivals } else { Vec::new() };
    inst
}

fn solve_exact(instance: &ProblemInstance, mode: Mode, limits: &SolveLimits) -> Result<Solution, SimError> {
    let model = build_milp(instance, mode)?;
    let r = solve_milp(&model.problem, limits)?;
    Ok(r.incumbent.map_or_else(|| Solution::idle(instance), |x| model.decode(&x)))
}

/// Reads the first-epoch actions out of a plan. `station` maps plan stations to
/// instance stations and `trailer` maps plan trailers to instance trailers.
fn first_epoch(
    sol: &Solution,
    state: &SystemState,
    station: &dyn Fn(usize) -> usize,
    trailer: &dyn Fn(usize) -> usize,
    with_vehicles: bool,
) -> EpochPlan {
    let mut plan = EpochPlan::default();
    let n = sol.z.len();
    if with_vehicles {
        for v in 0..state.vehicle_positions.len() {
            for s in 0..n {
                for s2 in 0..n {
                    if sol.z[s][s2][v][0] {
                        let here = state.vehicle_positions[v];
                        plan.vehicles.push(VehicleAction {
                            vehicle: v,
                            station: here,
                            pickup: sol.y_plus[s][v][0].max(0) as u32,
                            dropoff: sol.y_minus[s][v][0].max(0) as u32,
                            next_station: if s2 == s { here } else { station(s2) },
                        });
                    }
                }
            }
        }
    }
    for (s, row) in sol.b.iter().enumerate() {
        for (s2, per_w) in row.iter().enumerate() {
            for (w, per_t) in per_w.iter().enumerate() {
                if per_t[0] && sol.a_plus[s][w][0] > 0 {
                    plan.trailers.push(TrailerAction {
                        trailer: trailer(w),
                        origin: station(s),
                        destination: station(s2),
                        quantity: sol.a_plus[s][w][0] as u32,
                        value: sol.task_values[s][s2][0],
                        payment: 0.0,
                    });
                }
            }
        }
    }
    plan
}

fn plan_epoch(
    instance: &ProblemInstance,
    state: &SystemState,
    config: &SimConfig,
    clustering: Option<&MainStationClustering>,
    budget: f64,
) -> Result<EpochPlan, SimError> {
    let mode = config.policy.mode().expect("planning policies have a mode");
    let mut pi = planning_instance(instance, state, config.lookahead, budget);
    let Some(cl) = clustering else {
        let sol = solve_exact(&pi, mode, &config.limits)?;
        return Ok(first_epoch(&sol, state, &|s| s, &|w| w, mode.uses_vehicles()));
    };
    if !mode.uses_trailers() {
        pi.trailers.clear();
    }
    if !mode.uses_vehicles() {
        pi.vehicles.clear();
    }
    let trailer_index: HashMap<&str, usize> =
        instance.trailers.iter().enumerate().map(|(i, w)| (w.id.as_str(), i)).collect();
    let split = reduce_instance(&pi, cl);
    let reps = &cl.representatives;
    let reduced = &split.reduced;

    let mut plan = EpochPlan::default();
    let sol = if reduced.n_vehicles() > 0 {
        Some(match config.reduced_solver {
            ReducedSolver::Ldd => run_ldd(reduced, &config.ldd)?.solution,
            ReducedSolver::Milp => solve_exact(reduced, Mode::Joint, &config.limits)?,
        })
    } else if reduced.n_trailers() > 0 {
        Some(solve_exact(reduced, Mode::TrailersOnly, &config.limits)?)
    } else {
        None
    };
    if let Some(sol) = sol {
        let by_id = |w: usize| trailer_index[reduced.trailers[w].id.as_str()];
        plan = first_epoch(&sol, state, &|c| reps[c], &by_id, true);
    }
    for sub in &split.subinstances {
        if sub.instance.n_trailers() == 0 {
            continue;
        }
        let sol = solve_exact(&sub.instance, Mode::TrailersOnly, &config.limits)?;
        let by_id = |w: usize| trailer_index[sub.instance.trailers[w].id.as_str()];
        let part = first_epoch(&sol, state, &|s| sub.stations[s], &by_id, false);
        plan.trailers.extend(part.trailers);
    }
    Ok(plan)
}

/// A relative change, or undefined when the baseline is zero.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Ratio {
    Value(f64),
    Undefined,
}

impl Ratio {
    pub fn of(new: f64, base: f64) -> Self {
        if base == 0.0 {
            Ratio::Undefined
        } else {
            Ratio::Value((new - base) / base)
        }
    }

    pub fn value(self) -> Option<f64> {
        match self {
            Ratio::Value(v) => Some(v),
            Ratio::Undefined => None,
        }
    }

    pub fn abs(self) -> Self {
        match self {
            Ratio::Value(v) => Ratio::Value(v.abs()),
            u => u,
        }
    }
}

impl fmt::Display for Ratio {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Ratio::Value(v) => write!(f, "{v}"),
            Ratio::Undefined => f.write_str("undefined"),
        }
    }
}

impl Serialize for Ratio {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            Ratio::Value(v) => s.serialize_f64(*v),
            Ratio::Undefined => s.serialize_str("undefined"),
        }
    }
}

/// Profit gains `G` and lost-demand changes `L` of the joint policy over each
/// restricted one. `L` is negative when lost demand falls.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Comparison {
    pub g_v: Ratio,
    pub l_v: Ratio,
    pub g_t: Ratio,
    pub l_t: Ratio,
}

impl Comparison {
    pub fn write_csv<W: io::Write>(&self, out: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["G_v", "L_v", "G_t", "L_t", "L_v_magnitude", "L_t_magnitude"])?;
        w.write_record([self.g_v, self.l_v, self.g_t, self.l_t, self.l_v.abs(), self.l_t.abs()].map(|r| r.to_string()))?;
        w.flush()?;
        Ok(())
    }
}

pub fn compare_metrics(u_vt: f64, u_v: f64, u_t: f64, e_vt: f64, e_v: f64, e_t: f64) -> Comparison {
    Comparison {
        g_v: Ratio::of(u_vt, u_v),
        l_v: Ratio::of(e_vt, e_v),
        g_t: Ratio::of(u_vt, u_t),
        l_t: Ratio::of(e_vt, e_t),
    }
}

/// Compares three reports of the same instance and seed.
pub fn compare_reports(vt: &SimulationReport, v: &SimulationReport, t: &SimulationReport) -> Comparison {
    compare_metrics(
        vt.profit,
        v.profit,
        t.profit,
        vt.totals.lost as f64,
        v.totals.lost as f64,
        t.totals.lost as f64,
    )
}
