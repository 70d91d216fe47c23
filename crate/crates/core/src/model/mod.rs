//! Domain model: instances, solutions, the profit objective, the constraint
//! checker and the MILP builder.
//!
//! Index conventions used throughout: `s`, `s2` stations, `v` vehicles, `w`
//! trailers, `t` decision epochs `0..horizon`. Inventories `d_station` and
//! `d_vehicle` have `horizon + 1` entries; entry `t` is the state at the start of
//! epoch `t`.

mod build;
mod check;

use std::collections::HashSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::demand::transition_fraction;

pub use build::{build_milp, MilpModel, Mode, VarLayout};
pub(crate) use build::{Coupling, ModelBuilder, ObjectiveKind};
pub use check::{check_solution, ConstraintId, ConstraintViolation, Location};

/// Default absolute tolerance for real-valued constraints.
pub const DEFAULT_TOL: f64 = 1e-6;

pub type Matrix = Vec<Vec<f64>>;
pub type Tensor3<T> = Vec<Vec<Vec<T>>>;
pub type Tensor4<T> = Vec<Vec<Vec<Vec<T>>>>;

pub fn tensor3<T: Clone>(a: usize, b: usize, c: usize, fill: T) -> Tensor3<T> {
    vec![vec![vec![fill; c]; b]; a]
}

pub fn tensor4<T: Clone>(a: usize, b: usize, c: usize, d: usize, fill: T) -> Tensor4<T> {
    vec![vec![vec![vec![fill; d]; c]; b]; a]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Station {
    pub id: String,
    pub latitude: f64,
    pub longitude: f64,
    pub capacity: u32,
    pub initial_bikes: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Vehicle {
    pub id: String,
    pub capacity: u32,
    pub initial_station: String,
    pub initial_load: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Trailer {
    pub id: String,
    pub capacity: u32,
    pub max_distance_km: f64,
}

/// Expected (or realized) customer requests `F[s][s2][t]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct DemandTensor(pub Tensor3<f64>);

impl DemandTensor {
    pub fn zeros(n_stations: usize, horizon: usize) -> Self {
        Self(tensor3(n_stations, n_stations, horizon, 0.0))
    }

    pub fn n_stations(&self) -> usize {
        self.0.len()
    }

    pub fn horizon(&self) -> usize {
        self.0.first().and_then(|r| r.first()).map_or(0, Vec::len)
    }

    pub fn get(&self, s: usize, s2: usize, t: usize) -> f64 {
        self.0[s][s2][t]
    }

    /// Total requests leaving `s` in epoch `t`.
    pub fn outflow(&self, s: usize, t: usize) -> f64 {
        self.0[s].iter().map(|row| row[t]).sum()
    }

    pub fn epoch_total(&self, t: usize) -> f64 {
        (0..self.n_stations()).map(|s| self.outflow(s, t)).sum()
    }

    pub fn total(&self) -> f64 {
        (0..self.horizon()).map(|t| self.epoch_total(t)).sum()
    }
}

/// Whether the trailer budget caps the whole horizon or each epoch separately.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BudgetScope {
    #[default]
    Horizon,
    Epoch,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EconomicModel {
    /// Revenue per hired bike, `[s][s2][t]`.
    #[serde(rename = "R")]
    pub revenue: Tensor3<f64>,
    /// Vehicle routing cost per traversal, `[s][s2]`, zero on the diagonal.
    #[serde(rename = "P")]
    pub routing_cost: Matrix,
    /// Value of one unit of lost demand.
    pub xi: f64,
    pub budget: f64,
    #[serde(default)]
    pub budget_scope: BudgetScope,
}

/// A complete repositioning problem over a finite horizon.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemInstance {
    pub stations: Vec<Station>,
    pub vehicles: Vec<Vehicle>,
    pub trailers: Vec<Trailer>,
    pub demand: DemandTensor,
    pub economics: EconomicModel,
    /// Road distances in kilometers, `[s][s2]`.
    pub distances: Matrix,
    pub horizon: usize,
    #[serde(default = "default_epoch_minutes")]
    pub epoch_minutes: u32,
    /// Bikes of trips already under way that land during epoch 0, per station.
    /// Empty means none.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub initial_arrivals: Vec<f64>,
}

fn default_epoch_minutes() -> u32 {
    30
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("dimension mismatch in {tensor}: expected {expected}, found {found}")]
    Dimension {
        tensor: String,
        expected: String,
        found: String,
    },
    #[error("invalid instance: {0}")]
    InvalidInstance(String),
}

fn dim_err(tensor: &str, expected: impl ToString, found: impl ToString) -> ModelError {
    ModelError::Dimension {
        tensor: tensor.to_string(),
        expected: expected.to_string(),
        found: found.to_string(),
    }
}

pub(crate) fn check_shape3<T>(name: &str, v: &Tensor3<T>, a: usize, b: usize, c: usize) -> Result<(), ModelError> {
    if v.len() != a {
        return Err(dim_err(name, format!("{a} x {b} x {c}"), format!("outer length {}", v.len())));
    }
    for (i, m) in v.iter().enumerate() {
        if m.len() != b {
            return Err(dim_err(name, format!("{a} x {b} x {c}"), format!("[{i}] has length {}", m.len())));
        }
        for (j, r) in m.iter().enumerate() {
            if r.len() != c {
                return Err(dim_err(name, format!("{a} x {b} x {c}"), format!("[{i}][{j}] has length {}", r.len())));
            }
        }
    }
    Ok(())
}

pub(crate) fn check_shape2<T>(name: &str, v: &[Vec<T>], a: usize, b: usize) -> Result<(), ModelError> {
    if v.len() != a {
        return Err(dim_err(name, format!("{a} x {b}"), format!("outer length {}", v.len())));
    }
    for (i, r) in v.iter().enumerate() {
        if r.len() != b {
            return Err(dim_err(name, format!("{a} x {b}"), format!("[{i}] has length {}", r.len())));
        }
    }
    Ok(())
}

impl ProblemInstance {
    pub fn n_stations(&self) -> usize {
        self.stations.len()
    }

    pub fn n_vehicles(&self) -> usize {
        self.vehicles.len()
    }

    pub fn n_trailers(&self) -> usize {
        self.trailers.len()
    }

    pub fn station_index(&self, id: &str) -> Option<usize> {
        self.stations.iter().position(|s| s.id == id)
    }

    /// Index of each vehicle's starting station. Panics on an unvalidated instance.
    pub fn vehicle_origins(&self) -> Vec<usize> {
        self.vehicles
            .iter()
            .map(|v| self.station_index(&v.initial_station).expect("validated instance"))
            .collect()
    }

    pub fn arrivals_at_start(&self, s: usize) -> f64 {
        self.initial_arrivals.get(s).copied().unwrap_or(0.0)
    }

    /// Checks every cross-reference and per-type invariant.
    pub fn validate(&self) -> Result<(), ModelError> {
        let n = self.n_stations();
        let t = self.horizon;
        if n == 0 {
            return Err(ModelError::InvalidInstance("instance has no stations".into()));
        }
        if t == 0 {
            return Err(ModelError::InvalidInstance("horizon is zero".into()));
        }
        let mut seen = HashSet::new();
        for st in &self.stations {
            if !seen.insert(st.id.as_str()) {
                return Err(ModelError::InvalidInstance(format!("duplicate station id {}", st.id)));
            }
            if st.initial_bikes > st.capacity {
                return Err(ModelError::InvalidInstance(format!(
                    "station {} starts with {} bikes but has {} docks",
                    st.id, st.initial_bikes, st.capacity
                )));
            }
        }
        for v in &self.vehicles {
            if v.capacity == 0 || v.initial_load > v.capacity {
                return Err(ModelError::InvalidInstance(format!("vehicle {} has bad capacity/load", v.id)));
            }
            if self.station_index(&v.initial_station).is_none() {
                return Err(ModelError::InvalidInstance(format!(
                    "vehicle {} starts at unknown station {}",
                    v.id, v.initial_station
                )));
            }
        }
        for w in &self.trailers {
            if w.capacity == 0 || !(w.max_distance_km > 0.0) {
                return Err(ModelError::InvalidInstance(format!("trailer {} has bad capacity/range", w.id)));
            }
        }
        check_shape3("demand", &self.demand.0, n, n, t)?;
        check_shape3("R", &self.economics.revenue, n, n, t)?;
        check_shape2("P", &self.economics.routing_cost, n, n)?;
        check_shape2("distances", &self.distances, n, n)?;
        if !self.initial_arrivals.is_empty() && self.initial_arrivals.len() != n {
            return Err(dim_err("initial_arrivals", n, self.initial_arrivals.len()));
        }
        let nonneg3 = |x: &Tensor3<f64>| x.iter().flatten().flatten().all(|&v| v >= 0.0 && v.is_finite());
        if !nonneg3(&self.demand.0) || !nonneg3(&self.economics.revenue) {
            return Err(ModelError::InvalidInstance("demand and revenue must be finite and non-negative".into()));
        }
        for s in 0..n {
            if self.economics.routing_cost[s][s] != 0.0 || self.distances[s][s] != 0.0 {
                return Err(ModelError::InvalidInstance(format!("station {s} has a non-zero self cost or distance")));
            }
            for s2 in 0..n {
                let (p, d) = (self.economics.routing_cost[s][s2], self.distances[s][s2]);
                if !(p >= 0.0) || !(d >= 0.0) || !p.is_finite() || !d.is_finite() {
                    return Err(ModelError::InvalidInstance(format!("bad cost or distance at ({s}, {s2})")));
                }
                if (d - self.distances[s2][s]).abs() > 1e-9 {
                    return Err(ModelError::InvalidInstance(format!("distance matrix asymmetric at ({s}, {s2})")));
                }
            }
        }
        let e = &self.economics;
        if !(e.xi >= 0.0) || !(e.budget >= 0.0) {
            return Err(ModelError::InvalidInstance("xi and budget must be non-negative".into()));
        }
        if self.initial_arrivals.iter().any(|&a| !(a >= 0.0)) {
            return Err(ModelError::InvalidInstance("initial arrivals must be non-negative".into()));
        }
        Ok(())
    }

    /// Station inventories under no repositioning when customers take
    /// `min(demand, bikes)` pro rata; arrivals land one epoch after departure and
    /// are clipped at the dock count. `[s][t]` for `t in 0..=horizon`.
    pub fn reference_inventories(&self) -> Matrix {
        let n = self.n_stations();
        let horizon = self.horizon;
        let mut d = vec![vec![0.0; horizon + 1]; n];
        let mut landing: Vec<f64> = (0..n).map(|s| self.arrivals_at_start(s)).collect();
        for s in 0..n {
            d[s][0] = self.stations[s].initial_bikes as f64;
        }
        for t in 0..horizon {
            let mut departures = vec![0.0; n];
            let mut next_landing = vec![0.0; n];
            for s in 0..n {
                let bikes = d[s][t];
                for s2 in 0..n {
                    let f = self.demand.get(s, s2, t);
                    let served = f.min(bikes * transition_fraction(&self.demand, s, s2, t));
                    departures[s] += served;
                    next_landing[s2] += served;
                }
            }
            for s in 0..n {
                let cap = self.stations[s].capacity as f64;
                d[s][t + 1] = (d[s][t] - departures[s] + landing[s]).clamp(0.0, cap);
            }
            landing = next_landing;
        }
        d
    }

    /// Trailer task values `[s][s2][t]` priced at the reference inventories.
    pub fn task_values(&self) -> Tensor3<f64> {
        let d = self.reference_inventories();
        let n = self.n_stations();
        let mut out = tensor3(n, n, self.horizon, 0.0);
        for t in 0..self.horizon {
            let inv: Vec<f64> = (0..n).map(|s| d[s][t]).collect();
            let m = trailer_task_values(self, &inv, t);
            for s in 0..n {
                for s2 in 0..n {
                    out[s][s2][t] = m[s][s2];
                }
            }
        }
        out
    }
}

/// Value of moving bikes from `s` to `s2` by trailer in epoch `t`:
/// `xi * max(0, F[s][s2][t] - d[s])`, the unmet requests on that origin pair.
pub fn trailer_task_values(instance: &ProblemInstance, d_station_t: &[f64], t: usize) -> Matrix {
    let n = instance.n_stations();
    let xi = instance.economics.xi;
    (0..n)
        .map(|s| {
            (0..n)
                .map(|s2| xi * (instance.demand.get(s, s2, t) - d_station_t[s]).max(0.0))
                .collect()
        })
        .collect()
}

/// Every decision variable over the horizon, plus derived state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Solution {
    /// Hired-bike flow `[s][s2][t]`.
    pub x: Tensor3<f64>,
    /// Vehicle pickups `[s][v][t]`.
    pub y_plus: Tensor3<i64>,
    /// Vehicle dropoffs `[s][v][t]`.
    pub y_minus: Tensor3<i64>,
    /// Vehicle operates at `s` in `t` and arrives at `s2` for `t + 1`; `[s][s2][v][t]`.
    pub z: Tensor4<bool>,
    /// Trailer pickups `[s][w][t]`.
    pub a_plus: Tensor3<i64>,
    /// Trailer dropoffs `[s][w][t]`.
    pub a_minus: Tensor3<i64>,
    /// Trailer task from `s` to `s2` in `t`; `[s][s2][w][t]`.
    pub b: Tensor4<bool>,
    /// Vehicle parked (not operating) at `s` during `t`; `[v][s][t]`.
    pub sigma: Tensor3<bool>,
    /// Station inventories `[s][t]`, `t in 0..=horizon`.
    pub d_station: Matrix,
    /// Vehicle loads `[v][t]`, `t in 0..=horizon`.
    pub d_vehicle: Matrix,
    /// Trailer task values `[s][s2][t]` the plan was priced with.
    pub task_values: Tensor3<f64>,
}

impl Solution {
    /// The do-nothing plan: no customers served, vehicles parked, trailers idle.
    pub fn idle(instance: &ProblemInstance) -> Self {
        let (n, nv, nw, h) = (
            instance.n_stations(),
            instance.n_vehicles(),
            instance.n_trailers(),
            instance.horizon,
        );
        let origins = instance.vehicle_origins();
        let mut sigma = tensor3(nv, n, h, false);
        for (v, &s) in origins.iter().enumerate() {
            for t in 0..h {
                sigma[v][s][t] = true;
            }
        }
        let d_station = (0..n)
            .map(|s| {
                let init = instance.stations[s].initial_bikes as f64;
                (0..=h)
                    .map(|t| if t == 0 { init } else { init + instance.arrivals_at_start(s) })
                    .collect()
            })
            .collect();
        let d_vehicle = instance
            .vehicles
            .iter()
            .map(|v| vec![v.initial_load as f64; h + 1])
            .collect();
        Self {
            x: tensor3(n, n, h, 0.0),
            y_plus: tensor3(n, nv, h, 0),
            y_minus: tensor3(n, nv, h, 0),
            z: tensor4(n, n, nv, h, false),
            a_plus: tensor3(n, nw, h, 0),
            a_minus: tensor3(n, nw, h, 0),
            b: tensor4(n, n, nw, h, false),
            sigma,
            d_station,
            d_vehicle,
            task_values: instance.task_values(),
        }
    }

    /// Verifies every tensor matches the instance's index sets.
    pub fn check_dimensions(&self, instance: &ProblemInstance) -> Result<(), ModelError> {
        let (n, nv, nw, h) = (
            instance.n_stations(),
            instance.n_vehicles(),
            instance.n_trailers(),
            instance.horizon,
        );
        check_shape3("x", &self.x, n, n, h)?;
        check_shape3("y_plus", &self.y_plus, n, nv, h)?;
        check_shape3("y_minus", &self.y_minus, n, nv, h)?;
        check_shape3("a_plus", &self.a_plus, n, nw, h)?;
        check_shape3("a_minus", &self.a_minus, n, nw, h)?;
        check_shape3("sigma", &self.sigma, nv, n, h)?;
        check_shape3("task_values", &self.task_values, n, n, h)?;
        check_shape2("d_station", &self.d_station, n, h + 1)?;
        check_shape2("d_vehicle", &self.d_vehicle, nv, h + 1)?;
        if self.z.len() != n {
            return Err(dim_err("z", n, self.z.len()));
        }
        for m in &self.z {
            check_shape3("z", m, n, nv, h)?;
        }
        if self.b.len() != n {
            return Err(dim_err("b", n, self.b.len()));
        }
        for m in &self.b {
            check_shape3("b", m, n, nw, h)?;
        }
        Ok(())
    }

    pub fn vehicle_moves(&self) -> usize {
        self.z.iter().flatten().flatten().flatten().filter(|&&z| z).count()
    }

    pub fn trailer_tasks(&self) -> usize {
        self.b.iter().flatten().flatten().flatten().filter(|&&b| b).count()
    }
}

/// Profit of `sol`: revenue of hired bikes minus vehicle routing cost minus
/// trailer task values.
pub fn evaluate_objective(instance: &ProblemInstance, sol: &Solution) -> Result<f64, ModelError> {
    sol.check_dimensions(instance)?;
    Ok(objective_terms(instance, sol, &instance.task_values()).profit())
}

/// The three components of the profit objective.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ObjectiveTerms {
    pub revenue: f64,
    pub routing_cost: f64,
    pub trailer_value: f64,
}

impl ObjectiveTerms {
    pub fn profit(&self) -> f64 {
        self.revenue - self.routing_cost - self.trailer_value
    }
}

pub(crate) fn objective_terms(instance: &ProblemInstance, sol: &Solution, task_values: &Tensor3<f64>) -> ObjectiveTerms {
    let n = instance.n_stations();
    let e = &instance.economics;
    let mut terms = ObjectiveTerms::default();
    for s in 0..n {
        for s2 in 0..n {
            for t in 0..instance.horizon {
                terms.revenue += e.revenue[s][s2][t] * sol.x[s][s2][t];
                for v in 0..instance.n_vehicles() {
                    if sol.z[s][s2][v][t] {
                        terms.routing_cost += e.routing_cost[s][s2];
                    }
                }
                for w in 0..instance.n_trailers() {
                    if sol.b[s][s2][w][t] {
                        terms.trailer_value += task_values[s][s2][t];
                    }
                }
            }
        }
    }
    terms
}

#[cfg(test)]
pub(crate) mod fixtures {
    use super::*;

    /// Two stations 1 km apart, one vehicle at station 0, one trailer.
    pub fn two_station(horizon: usize) -> ProblemInstance {
        let n = 2;
        ProblemInstance {
            stations: vec![
                Station { id: "A".into(), latitude: 42.36, longitude: -71.06, capacity: 6, initial_bikes: 4 },
                Station { id: "B".into(), latitude: 42.37, longitude: -71.06, capacity: 6, initial_bikes: 1 },
            ],
            vehicles: vec![Vehicle { id: "v0".into(), capacity: 4, initial_station: "A".into(), initial_load: 0 }],
            trailers: vec![Trailer { id: "w0".into(), capacity: 3, max_distance_km: 5.0 }],
            demand: DemandTensor(tensor3(n, n, horizon, 0.0)),
            economics: EconomicModel {
                revenue: tensor3(n, n, horizon, 0.0),
                routing_cost: vec![vec![0.0, 1.5], vec![1.5, 0.0]],
                xi: 1.0,
                budget: 100.0,
                budget_scope: BudgetScope::Horizon,
            },
            distances: vec![vec![0.0, 1.0], vec![1.0, 0.0]],
            horizon,
            epoch_minutes: 30,
            initial_arrivals: Vec::new(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::fixtures::two_station;
    use super::*;

    #[test]
    fn idle_plan_has_zero_profit() {
        let inst = two_station(2);
        let sol = Solution::idle(&inst);
        assert_eq!(evaluate_objective(&inst, &sol).unwrap(), 0.0);
    }

    #[test]
    fn single_revenue_term() {
        let mut inst = two_station(2);
        inst.economics.revenue[0][1][0] = 3.0;
        let mut sol = Solution::idle(&inst);
        sol.x[0][1][0] = 2.0;
        assert_eq!(evaluate_objective(&inst, &sol).unwrap(), 6.0);
    }

    #[test]
    fn revenue_minus_route_minus_task() {
        // Task value 2.0 on (B -> A) at t = 0: xi * (F - d) = 1 * (3 - 1).
        let mut inst = two_station(2);
        inst.demand.0[1][0][0] = 3.0;
        inst.economics.revenue[0][1][1] = 5.0;
        let mut sol = Solution::idle(&inst);
        assert_eq!(sol.task_values[1][0][0], 2.0);
        sol.x[0][1][1] = 2.0;
        sol.z[0][1][0][0] = true;
        sol.b[1][0][0][0] = true;
        assert!((evaluate_objective(&inst, &sol).unwrap() - 6.5).abs() < 1e-12);
    }

    #[test]
    fn objective_rejects_bad_shapes() {
        let inst = two_station(2);
        let mut sol = Solution::idle(&inst);
        sol.y_plus.pop();
        match evaluate_objective(&inst, &sol) {
            Err(ModelError::Dimension { tensor, .. }) => assert_eq!(tensor, "y_plus"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn task_value_rule() {
        let mut inst = two_station(1);
        inst.demand.0[0][1][0] = 5.0;
        assert_eq!(trailer_task_values(&inst, &[3.0, 0.0], 0)[0][1], 2.0);
        assert_eq!(trailer_task_values(&inst, &[6.0, 0.0], 0)[0][1], 0.0);
        inst.economics.xi = 2.0;
        inst.demand.0[0][1][0] = 7.0;
        assert_eq!(trailer_task_values(&inst, &[3.0, 0.0], 0)[0][1], 8.0);
    }

    #[test]
    fn reference_inventories_follow_lagged_arrivals() {
        let mut inst = two_station(3);
        inst.demand.0[0][1][0] = 2.0;
        let d = inst.reference_inventories();
        assert_eq!(d[0], vec![4.0, 2.0, 2.0, 2.0]);
        assert_eq!(d[1], vec![1.0, 1.0, 3.0, 3.0]);
    }

    #[test]
    fn validation_catches_bad_references() {
        let mut inst = two_station(1);
        inst.vehicles[0].initial_station = "Z".into();
        assert!(inst.validate().is_err());
        let mut inst = two_station(1);
        inst.stations[0].initial_bikes = 9;
        assert!(inst.validate().is_err());
        let mut inst = two_station(1);
        inst.horizon = 0;
        assert!(inst.validate().is_err());
        assert!(two_station(1).validate().is_ok());
    }
}
