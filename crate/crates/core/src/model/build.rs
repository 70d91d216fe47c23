use serde::{Deserialize, Serialize};

use super::{ModelError, ProblemInstance, Solution, Tensor3};
use crate::demand::transition_fraction;
use crate::milp::{MilpProblem, Relation, Sense};

/// Which repositioning resources a plan may use.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Mode {
    Joint,
    VehiclesOnly,
    TrailersOnly,
}

impl Mode {
    pub const ALL: [Mode; 3] = [Mode::Joint, Mode::VehiclesOnly, Mode::TrailersOnly];

    pub fn uses_vehicles(self) -> bool {
        self != Mode::TrailersOnly
    }

    pub fn uses_trailers(self) -> bool {
        self != Mode::VehiclesOnly
    }
}

/// How vehicle handling `y` is tied to vehicle presence.
#[derive(Debug, Clone, Copy)]
pub(crate) enum Coupling<'a> {
    /// No tie (the tie has been priced into the objective instead).
    Free,
    /// `y+ + y- <= C * sum z` with `z` as variables.
    Linked,
    /// Same row with presence fixed from a given route, indexed `[s][v][t]`.
    Fixed(&'a Tensor3<bool>),
}

#[derive(Debug, Clone, Copy)]
pub(crate) enum ObjectiveKind<'a> {
    /// Revenue minus routing cost minus trailer task values.
    Profit,
    /// Profit minus `alpha * (y+ + y- - C * sum z)` with `alpha[s][t][v]`,
    /// restricted to whichever variables are present.
    Lagrangian(&'a Tensor3<f64>),
}

/// Assembles a MILP over any subset of the variable families.
pub(crate) struct ModelBuilder<'a> {
    pub instance: &'a ProblemInstance,
    /// Flows, station inventories and the handling variables of enabled resources.
    pub repositioning: bool,
    pub vehicles: bool,
    pub trailers: bool,
    /// Vehicle movement `z` and parking `sigma`.
    pub routing: bool,
    pub coupling: Coupling<'a>,
    pub objective: ObjectiveKind<'a>,
}

/// Maps every variable family to its column range.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VarLayout {
    pub n_stations: usize,
    pub n_vehicles: usize,
    pub n_trailers: usize,
    pub horizon: usize,
    pub n_vars: usize,
    x: Option<usize>,
    y_plus: Option<usize>,
    y_minus: Option<usize>,
    z: Option<usize>,
    sigma: Option<usize>,
    a_plus: Option<usize>,
    a_minus: Option<usize>,
    b: Option<usize>,
    d_station: Option<usize>,
    d_vehicle: Option<usize>,
    origins: Vec<usize>,
    initial_bikes: Vec<f64>,
    initial_loads: Vec<f64>,
    arrivals: Vec<f64>,
    task_values: Tensor3<f64>,
}

fn block(next: &mut usize, present: bool, size: usize) -> Option<usize> {
    present.then(|| {
        let off = *next;
        *next += size;
        off
    })
}

impl VarLayout {
    fn new(instance: &ProblemInstance, b: &ModelBuilder<'_>) -> Self {
        let (n, nv, nw, h) = (
            instance.n_stations(),
            instance.n_vehicles(),
            instance.n_trailers(),
            instance.horizon,
        );
        let rep = b.repositioning;
        let mut next = 0;
        let x = block(&mut next, rep, n * n * h);
        let y_plus = block(&mut next, rep && b.vehicles, n * nv * h);
        let y_minus = block(&mut next, rep && b.vehicles, n * nv * h);
        let z = block(&mut next, b.routing, n * n * nv * h);
        let sigma = block(&mut next, b.routing, nv * n * h);
        let a_plus = block(&mut next, rep && b.trailers, n * nw * h);
        let a_minus = block(&mut next, rep && b.trailers, n * nw * h);
        let bb = block(&mut next, rep && b.trailers, n * n * nw * h);
        let d_station = block(&mut next, rep, n * (h + 1));
        let d_vehicle = block(&mut next, rep && b.vehicles, nv * (h + 1));
        Self {
            n_stations: n,
            n_vehicles: nv,
            n_trailers: nw,
            horizon: h,
            n_vars: next,
            x,
            y_plus,
            y_minus,
            z,
            sigma,
            a_plus,
            a_minus,
            b: bb,
            d_station,
            d_vehicle,
            origins: instance.vehicle_origins(),
            initial_bikes: instance.stations.iter().map(|s| s.initial_bikes as f64).collect(),
            initial_loads: instance.vehicles.iter().map(|v| v.initial_load as f64).collect(),
            arrivals: (0..n).map(|s| instance.arrivals_at_start(s)).collect(),
            task_values: instance.task_values(),
        }
    }

    pub fn x(&self, s: usize, s2: usize, t: usize) -> Option<usize> {
        self.x.map(|o| o + (s * self.n_stations + s2) * self.horizon + t)
    }

    pub fn y_plus(&self, s: usize, v: usize, t: usize) -> Option<usize> {
        self.y_plus.map(|o| o + (s * self.n_vehicles + v) * self.horizon + t)
    }

    pub fn y_minus(&self, s: usize, v: usize, t: usize) -> Option<usize> {
        self.y_minus.map(|o| o + (s * self.n_vehicles + v) * self.horizon + t)
    }

    pub fn z(&self, s: usize, s2: usize, v: usize, t: usize) -> Option<usize> {
        self.z
            .map(|o| o + ((s * self.n_stations + s2) * self.n_vehicles + v) * self.horizon + t)
    }

    pub fn sigma(&self, v: usize, s: usize, t: usize) -> Option<usize> {
        self.sigma.map(|o| o + (v * self.n_stations + s) * self.horizon + t)
    }

    pub fn a_plus(&self, s: usize, w: usize, t: usize) -> Option<usize> {
        self.a_plus.map(|o| o + (s * self.n_trailers + w) * self.horizon + t)
    }

    pub fn a_minus(&self, s: usize, w: usize, t: usize) -> Option<usize> {
        self.a_minus.map(|o| o + (s * self.n_trailers + w) * self.horizon + t)
    }

    pub fn b(&self, s: usize, s2: usize, w: usize, t: usize) -> Option<usize> {
        self.b
            .map(|o| o + ((s * self.n_stations + s2) * self.n_trailers + w) * self.horizon + t)
    }

    pub fn d_station(&self, s: usize, t: usize) -> Option<usize> {
        self.d_station.map(|o| o + s * (self.horizon + 1) + t)
    }

    pub fn d_vehicle(&self, v: usize, t: usize) -> Option<usize> {
        self.d_vehicle.map(|o| o + v * (self.horizon + 1) + t)
    }

    pub fn has_routing(&self) -> bool {
        self.z.is_some()
    }

    /// Route presence `sum_s2 z[s][s2][v][t]` read from an assignment, `[s][v][t]`.
    pub fn presence(&self, x: &[f64]) -> Tensor3<bool> {
        let (n, nv, h) = (self.n_stations, self.n_vehicles, self.horizon);
        let mut out = super::tensor3(n, nv, h, false);
        for s in 0..n {
            for v in 0..nv {
                for t in 0..h {
                    out[s][v][t] = (0..n).any(|s2| self.z(s, s2, v, t).is_some_and(|j| x[j] > 0.5));
                }
            }
        }
        out
    }

    /// Column vector for `sol`. Families absent from the layout are ignored.
    pub fn encode(&self, sol: &Solution) -> Vec<f64> {
        let (n, nv, nw, h) = (self.n_stations, self.n_vehicles, self.n_trailers, self.horizon);
        let mut out = vec![0.0; self.n_vars];
        let mut put = |j: Option<usize>, v: f64| {
            if let Some(j) = j {
                out[j] = v;
            }
        };
        let flag = |b: bool| if b { 1.0 } else { 0.0 };
        for s in 0..n {
            for t in 0..=h {
                put(self.d_station(s, t), sol.d_station[s][t]);
            }
            for t in 0..h {
                for s2 in 0..n {
                    put(self.x(s, s2, t), sol.x[s][s2][t]);
                    for v in 0..nv {
                        put(self.z(s, s2, v, t), flag(sol.z[s][s2][v][t]));
                    }
                    for w in 0..nw {
                        put(self.b(s, s2, w, t), flag(sol.b[s][s2][w][t]));
                    }
                }
                for v in 0..nv {
                    put(self.y_plus(s, v, t), sol.y_plus[s][v][t] as f64);
                    put(self.y_minus(s, v, t), sol.y_minus[s][v][t] as f64);
                    put(self.sigma(v, s, t), flag(sol.sigma[v][s][t]));
                }
                for w in 0..nw {
                    put(self.a_plus(s, w, t), sol.a_plus[s][w][t] as f64);
                    put(self.a_minus(s, w, t), sol.a_minus[s][w][t] as f64);
                }
            }
        }
        for v in 0..nv {
            for t in 0..=h {
                put(self.d_vehicle(v, t), sol.d_vehicle[v][t]);
            }
        }
        out
    }

    /// Solution for a column vector. Families absent from the layout take
    /// their idle values: no moves, vehicles parked where they start.
    pub fn decode(&self, x: &[f64]) -> Solution {
        let (n, nv, nw, h) = (self.n_stations, self.n_vehicles, self.n_trailers, self.horizon);
        let real = |j: Option<usize>, default: f64| j.map_or(default, |j| x[j]);
        let int = |j: Option<usize>| j.map_or(0, |j| x[j].round() as i64);
        let bit = |j: Option<usize>| j.is_some_and(|j| x[j] > 0.5);
        use super::{tensor3 as t3, tensor4 as t4};
        let mut sol = Solution {
            x: t3(n, n, h, 0.0),
            y_plus: t3(n, nv, h, 0),
            y_minus: t3(n, nv, h, 0),
            z: t4(n, n, nv, h, false),
            a_plus: t3(n, nw, h, 0),
            a_minus: t3(n, nw, h, 0),
            b: t4(n, n, nw, h, false),
            sigma: t3(nv, n, h, false),
            d_station: vec![vec![0.0; h + 1]; n],
            d_vehicle: vec![vec![0.0; h + 1]; nv],
            task_values: self.task_values.clone(),
        };
        for s in 0..n {
            for t in 0..=h {
                let idle = if t == 0 { self.initial_bikes[s] } else { self.initial_bikes[s] + self.arrivals[s] };
                sol.d_station[s][t] = real(self.d_station(s, t), idle);
            }
            for t in 0..h {
                for s2 in 0..n {
                    sol.x[s][s2][t] = real(self.x(s, s2, t), 0.0);
                    for v in 0..nv {
                        sol.z[s][s2][v][t] = bit(self.z(s, s2, v, t));
                    }
                    for w in 0..nw {
                        sol.b[s][s2][w][t] = bit(self.b(s, s2, w, t));
                    }
                }
                for v in 0..nv {
                    sol.y_plus[s][v][t] = int(self.y_plus(s, v, t));
                    sol.y_minus[s][v][t] = int(self.y_minus(s, v, t));
                    sol.sigma[v][s][t] = match self.sigma(v, s, t) {
                        Some(j) => x[j] > 0.5,
                        None => self.origins[v] == s,
                    };
                }
                for w in 0..nw {
                    sol.a_plus[s][w][t] = int(self.a_plus(s, w, t));
                    sol.a_minus[s][w][t] = int(self.a_minus(s, w, t));
                }
            }
        }
        for v in 0..nv {
            for t in 0..=h {
                sol.d_vehicle[v][t] = real(self.d_vehicle(v, t), self.initial_loads[v]);
            }
        }
        sol
    }
}

/// A MILP together with the map between its columns and a [`Solution`].
#[derive(Debug, Clone)]
pub struct MilpModel {
    pub problem: MilpProblem,
    pub layout: VarLayout,
}

impl MilpModel {
    pub fn encode(&self, sol: &Solution) -> Vec<f64> {
        self.layout.encode(sol)
    }

    pub fn decode(&self, x: &[f64]) -> Solution {
        self.layout.decode(x)
    }
}

/// Builds the profit-maximizing MILP for `mode`.
pub fn build_milp(instance: &ProblemInstance, mode: Mode) -> Result<MilpModel, ModelError> {
    instance.validate()?;
    let builder = ModelBuilder {
        instance,
        repositioning: true,
        vehicles: mode.uses_vehicles(),
        trailers: mode.uses_trailers(),
        routing: mode.uses_vehicles(),
        coupling: if mode.uses_vehicles() { Coupling::Linked } else { Coupling::Free },
        objective: ObjectiveKind::Profit,
    };
    Ok(builder.build())
}

struct Rows<'p> {
    problem: &'p mut MilpProblem,
}

impl Rows<'_> {
    fn add(&mut self, terms: Vec<(Option<usize>, f64)>, rel: Relation, rhs: f64, label: &str) {
        let terms: Vec<(usize, f64)> = terms
            .into_iter()
            .filter_map(|(j, a)| j.filter(|_| a != 0.0).map(|j| (j, a)))
            .collect();
        self.problem.add_constraint(terms, rel, rhs, label);
    }
}

impl ModelBuilder<'_> {
    pub fn build(&self) -> MilpModel {
        let inst = self.instance;
        let layout = VarLayout::new(inst, self);
        let (n, nv, nw, h) = (layout.n_stations, layout.n_vehicles, layout.n_trailers, layout.horizon);
        let econ = &inst.economics;
        let cap = |s: usize| inst.stations[s].capacity as f64;
        let vcap = |v: usize| inst.vehicles[v].capacity as f64;
        let wcap = |w: usize| inst.trailers[w].capacity as f64;
        let alpha = match self.objective {
            ObjectiveKind::Profit => None,
            ObjectiveKind::Lagrangian(a) => Some(a),
        };

        let mut p = MilpProblem::new(Sense::Maximize);
        p.objective = vec![0.0; layout.n_vars];
        p.lower = vec![0.0; layout.n_vars];
        p.upper = vec![0.0; layout.n_vars];
        p.integer = vec![false; layout.n_vars];
        p.names = vec![String::new(); layout.n_vars];
        let mut set = |j: Option<usize>, cost: f64, lo: f64, hi: f64, int: bool, name: String| {
            if let Some(j) = j {
                p.objective[j] = cost;
                p.lower[j] = lo;
                p.upper[j] = hi;
                p.integer[j] = int;
                p.names[j] = name;
            }
        };

        for s in 0..n {
            for t in 0..=h {
                let (lo, hi) = if t == 0 {
                    let d0 = layout.initial_bikes[s];
                    (d0, d0)
                } else {
                    (0.0, cap(s))
                };
                set(layout.d_station(s, t), 0.0, lo, hi, false, format!("d_station[{s},{t}]"));
            }
            for t in 0..h {
                for s2 in 0..n {
                    let f = inst.demand.get(s, s2, t);
                    set(layout.x(s, s2, t), econ.revenue[s][s2][t], 0.0, f, false, format!("x[{s},{s2},{t}]"));
                    for v in 0..nv {
                        let price = alpha.map_or(0.0, |a| vcap(v) * a[s][t][v]);
                        let cost = price - econ.routing_cost[s][s2];
                        set(layout.z(s, s2, v, t), cost, 0.0, 1.0, true, format!("z[{s},{s2},{v},{t}]"));
                    }
                    for w in 0..nw {
                        let reachable = inst.distances[s][s2] <= inst.trailers[w].max_distance_km;
                        let hi = if reachable { 1.0 } else { 0.0 };
                        let cost = -layout.task_values[s][s2][t];
                        set(layout.b(s, s2, w, t), cost, 0.0, hi, true, format!("b[{s},{s2},{w},{t}]"));
                    }
                }
                for v in 0..nv {
                    let present = match self.coupling {
                        Coupling::Fixed(zs) => zs[s][v][t],
                        _ => true,
                    };
                    let hi = if present { vcap(v).min(cap(s)) } else { 0.0 };
                    let cost = -alpha.map_or(0.0, |a| a[s][t][v]);
                    set(layout.y_plus(s, v, t), cost, 0.0, hi, true, format!("y_plus[{s},{v},{t}]"));
                    set(layout.y_minus(s, v, t), cost, 0.0, hi, true, format!("y_minus[{s},{v},{t}]"));
                    set(layout.sigma(v, s, t), 0.0, 0.0, 1.0, true, format!("sigma[{v},{s},{t}]"));
                }
                for w in 0..nw {
                    let hi = wcap(w).min(cap(s));
                    set(layout.a_plus(s, w, t), 0.0, 0.0, hi, true, format!("a_plus[{s},{w},{t}]"));
                    set(layout.a_minus(s, w, t), 0.0, 0.0, hi, true, format!("a_minus[{s},{w},{t}]"));
                }
            }
        }
        for v in 0..nv {
            for t in 0..=h {
                let (lo, hi) = if t == 0 {
                    (layout.initial_loads[v], layout.initial_loads[v])
                } else {
                    (0.0, vcap(v))
                };
                set(layout.d_vehicle(v, t), 0.0, lo, hi, false, format!("d_vehicle[{v},{t}]"));
            }
        }

        let mut rows = Rows { problem: &mut p };
        let l = &layout;
        use Relation::{Eq, Ge, Le};

        if self.repositioning {
            for s in 0..n {
                for t in 0..h {
                    // C1: d[t+1] = d[t] + arrivals - departures + net handling.
                    let mut terms = vec![(l.d_station(s, t + 1), 1.0), (l.d_station(s, t), -1.0)];
                    let rhs = if t == 0 { l.arrivals[s] } else { 0.0 };
                    for o in 0..n {
                        if t > 0 {
                            terms.push((l.x(o, s, t - 1), -1.0));
                        }
                        terms.push((l.x(s, o, t), 1.0));
                    }
                    for v in 0..nv {
                        terms.push((l.y_minus(s, v, t), -1.0));
                        terms.push((l.y_plus(s, v, t), 1.0));
                    }
                    for w in 0..nw {
                        terms.push((l.a_minus(s, w, t), -1.0));
                        terms.push((l.a_plus(s, w, t), 1.0));
                    }
                    rows.add(terms, Eq, rhs, "C1");

                    // C2: x <= frac * d. A zero fraction already has x fixed at 0.
                    for s2 in 0..n {
                        let frac = transition_fraction(&inst.demand, s, s2, t);
                        if frac > 0.0 {
                            rows.add(vec![(l.x(s, s2, t), 1.0), (l.d_station(s, t), -frac)], Le, 0.0, "C2");
                        }
                    }
                }
            }
        }

        if self.repositioning && self.trailers && nw > 0 {
            // C4: trailer budget.
            let budget_row = |ts: &mut dyn Iterator<Item = usize>| {
                let mut terms = Vec::new();
                for t in ts {
                    for s in 0..n {
                        for s2 in 0..n {
                            for w in 0..nw {
                                terms.push((l.b(s, s2, w, t), l.task_values[s][s2][t]));
                            }
                        }
                    }
                }
                terms
            };
            match econ.budget_scope {
                super::BudgetScope::Horizon => rows.add(budget_row(&mut (0..h)), Le, econ.budget, "C4"),
                super::BudgetScope::Epoch => {
                    for t in 0..h {
                        rows.add(budget_row(&mut std::iter::once(t)), Le, econ.budget, "C4");
                    }
                }
            }
        }

        if self.repositioning && self.vehicles {
            for v in 0..nv {
                for t in 0..h {
                    // C5: load balance.
                    let mut terms = vec![(l.d_vehicle(v, t + 1), 1.0), (l.d_vehicle(v, t), -1.0)];
                    for s in 0..n {
                        terms.push((l.y_plus(s, v, t), -1.0));
                        terms.push((l.y_minus(s, v, t), 1.0));
                    }
                    rows.add(terms, Eq, 0.0, "C5");
                }
            }
        }

        if self.routing {
            for v in 0..nv {
                for s in 0..n {
                    for t in 0..h {
                        // C6: vehicle flow conservation; parking carries position.
                        let mut terms: Vec<_> = (0..n).map(|s2| (l.z(s, s2, v, t), 1.0)).collect();
                        terms.push((l.sigma(v, s, t), 1.0));
                        let rhs = if t == 0 {
                            if l.origins[v] == s { 1.0 } else { 0.0 }
                        } else {
                            terms.extend((0..n).map(|s0| (l.z(s0, s, v, t - 1), -1.0)));
                            terms.push((l.sigma(v, s, t - 1), -1.0));
                            0.0
                        };
                        rows.add(terms, Eq, rhs, "C6");
                    }
                }
            }
            // C7 only binds with two or more vehicles; C6 already limits each one.
            if nv > 1 {
                for s in 0..n {
                    for t in 0..h {
                        let mut terms = Vec::new();
                        for s2 in 0..n {
                            for v in 0..nv {
                                terms.push((l.z(s, s2, v, t), 1.0));
                            }
                        }
                        rows.add(terms, Le, 1.0, "C7");
                    }
                }
            }
        }

        if self.repositioning && self.vehicles {
            for s in 0..n {
                for v in 0..nv {
                    for t in 0..h {
                        let handled = vec![(l.y_plus(s, v, t), 1.0), (l.y_minus(s, v, t), 1.0)];
                        match self.coupling {
                            Coupling::Linked => {
                                // C8.
                                let mut terms = handled.clone();
                                terms.extend((0..n).map(|s2| (l.z(s, s2, v, t), -vcap(v))));
                                rows.add(terms, Le, 0.0, "C8");
                            }
                            Coupling::Fixed(zs) if zs[s][v][t] => {
                                rows.add(handled.clone(), Le, vcap(v), "C8");
                            }
                            _ => {}
                        }
                        // C15: handling bounded by stock and free docks.
                        rows.add(vec![(l.y_plus(s, v, t), 1.0), (l.d_station(s, t), -1.0)], Le, 0.0, "C15");
                        rows.add(vec![(l.y_minus(s, v, t), 1.0), (l.d_station(s, t), 1.0)], Le, cap(s), "C15");
                    }
                }
            }
        }

        if self.repositioning && self.trailers && nw > 0 {
            for t in 0..h {
                for s in 0..n {
                    for w in 0..nw {
                        // C9: pickups only on an active task, within capacity.
                        // The stock bound is implied by C10.
                        let mut terms = vec![(l.a_plus(s, w, t), 1.0)];
                        terms.extend((0..n).map(|s2| (l.b(s, s2, w, t), -wcap(w))));
                        rows.add(terms, Le, 0.0, "C9");
                    }
                    // C10, C11.
                    let mut picked: Vec<_> = (0..nw).map(|w| (l.a_plus(s, w, t), 1.0)).collect();
                    picked.push((l.d_station(s, t), -1.0));
                    rows.add(picked, Le, 0.0, "C10");
                    let mut dropped: Vec<_> = (0..nw).map(|w| (l.a_minus(s, w, t), 1.0)).collect();
                    dropped.push((l.d_station(s, t), 1.0));
                    rows.add(dropped, Le, cap(s), "C11");
                }
                for w in 0..nw {
                    // C13: at most one task per trailer and epoch.
                    let mut terms = Vec::new();
                    for s in 0..n {
                        for s2 in 0..n {
                            terms.push((l.b(s, s2, w, t), 1.0));
                        }
                    }
                    rows.add(terms, Le, 1.0, "C13");
                    // C14: a-[s2] = sum_s b[s][s2] * a+[s], linearized.
                    let c = wcap(w);
                    for s2 in 0..n {
                        let into: Vec<_> = (0..n).map(|s| (l.b(s, s2, w, t), -c)).collect();
                        let total: Vec<_> = (0..n).map(|s| (l.a_plus(s, w, t), -1.0)).collect();
                        let am = (l.a_minus(s2, w, t), 1.0);
                        let mut r1 = vec![am];
                        r1.extend(into.iter().copied());
                        rows.add(r1, Le, 0.0, "C14");
                        let mut r2 = vec![am];
                        r2.extend(total.iter().copied());
                        rows.add(r2, Le, 0.0, "C14");
                        let mut r3 = vec![am];
                        r3.extend(total.iter().copied());
                        r3.extend(into.iter().copied());
                        rows.add(r3, Ge, -c, "C14");
                    }
                }
            }
        }

        MilpModel { problem: p, layout }
    }
}
