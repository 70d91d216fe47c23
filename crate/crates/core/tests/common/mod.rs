//! Test-side oracles: a small random instance family and an exhaustive
//! enumeration of every integer decision assignment on it.

#![allow(dead_code)]

use std::collections::HashMap;

use drrpvt::model::{
    BudgetScope, DemandTensor, EconomicModel, ProblemInstance, Station, Trailer, Vehicle,
};
use minilp::{ComparisonOp, LinearExpr, OptimizationDirection, Problem};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Upper limit on enumerated leaves per instance, before the LP cache.
pub const LEAF_LIMIT: f64 = 2.0e7;

/// Random instance with 1 vehicle, 1 trailer, integer data, at most 4 stations,
/// 3 epochs and capacities of 4. Resampled until enumeration stays small.
/// Every fifth seed has exactly 4 stations and 3 epochs, with unit vehicle and
/// trailer capacities to keep it enumerable.
pub fn tiny_instance(seed: u64) -> ProblemInstance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    loop {
        let mut inst = draw_tiny(&mut rng, seed % 5 == 0);
        if seed % 5 == 0 {
            inst.vehicles[0].capacity = 1;
            inst.trailers[0].capacity = 1;
        }
        if leaf_estimate(&inst) <= LEAF_LIMIT {
            return inst;
        }
    }
}

fn draw_tiny(rng: &mut ChaCha8Rng, largest: bool) -> ProblemInstance {
    let (n, h) = if largest { (4, 3) } else { (rng.gen_range(2..=4), rng.gen_range(1..=3)) };
    draw_sized(rng, n, h)
}

fn draw_sized(rng: &mut ChaCha8Rng, n: usize, h: usize) -> ProblemInstance {
    let stations: Vec<Station> = (0..n)
        .map(|i| {
            let capacity = rng.gen_range(1..=4);
            Station {
                id: format!("s{i}"),
                latitude: 0.0,
                longitude: i as f64 * 0.01,
                capacity,
                initial_bikes: rng.gen_range(0..=capacity),
            }
        })
        .collect();
    let mut dist = vec![vec![0.0; n]; n];
    let mut cost = vec![vec![0.0; n]; n];
    for s in 0..n {
        for s2 in s + 1..n {
            let d = rng.gen_range(1..=3) as f64;
            let p = rng.gen_range(0..=2) as f64;
            dist[s][s2] = d;
            dist[s2][s] = d;
            cost[s][s2] = p;
            cost[s2][s] = p;
        }
    }
    let mut demand = DemandTensor::zeros(n, h);
    let mut revenue = vec![vec![vec![0.0; h]; n]; n];
    for s in 0..n {
        for s2 in 0..n {
            for t in 0..h {
                if rng.gen_bool(0.45) {
                    demand.0[s][s2][t] = rng.gen_range(1..=3) as f64;
                }
                revenue[s][s2][t] = rng.gen_range(1..=3) as f64;
            }
        }
    }
    ProblemInstance {
        vehicles: vec![Vehicle {
            id: "v0".into(),
            capacity: rng.gen_range(1..=4),
            initial_station: stations[rng.gen_range(0..n)].id.clone(),
            initial_load: 0,
        }],
        trailers: vec![Trailer {
            id: "w0".into(),
            capacity: rng.gen_range(1..=4),
            max_distance_km: rng.gen_range(1..=3) as f64,
        }],
        stations,
        demand,
        economics: EconomicModel {
            revenue,
            routing_cost: cost,
            xi: rng.gen_range(1..=2) as f64,
            budget: rng.gen_range(0..=6) as f64,
            budget_scope: BudgetScope::Horizon,
        },
        distances: dist,
        horizon: h,
        epoch_minutes: 30,
        initial_arrivals: Vec::new(),
    }
}

/// Random instance with 5 or 6 stations and 3 epochs, sized for exact solution
/// rather than enumeration. The vehicle starts loaded so it can act from the
/// first epoch; the trailer carries one bike over unit distance.
pub fn small_instance(seed: u64) -> ProblemInstance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_0003);
    let n = rng.gen_range(5..=6);
    let mut inst = draw_sized(&mut rng, n, 3);
    inst.economics.budget = rng.gen_range(0..=2) as f64;
    inst.trailers[0].capacity = 1;
    inst.trailers[0].max_distance_km = 1.0;
    inst.vehicles[0].initial_load = rng.gen_range(0..=inst.vehicles[0].capacity);
    inst
}

fn leaf_estimate(inst: &ProblemInstance) -> f64 {
    let n = inst.stations.len() as f64;
    let cv = inst.vehicles[0].capacity as f64;
    let cw = inst.trailers[0].capacity as f64;
    let reach = inst
        .distances
        .iter()
        .flatten()
        .filter(|&&d| d <= inst.trailers[0].max_distance_km)
        .count() as f64;
    let vehicle = 1.0 + n * (cv + 1.0) * (cv + 2.0) / 2.0;
    let trailer = 1.0 + reach * (cw + 1.0);
    (vehicle * trailer).powi(inst.horizon as i32)
}

/// Reference inventories under no repositioning, recomputed independently:
/// customers take `min(F, d * F / sum F)` and land one epoch later, clipped to
/// the dock count.
pub fn oracle_task_values(inst: &ProblemInstance) -> Vec<Vec<Vec<f64>>> {
    let n = inst.stations.len();
    let h = inst.horizon;
    let f = &inst.demand.0;
    let mut d: Vec<f64> = inst.stations.iter().map(|s| s.initial_bikes as f64).collect();
    let mut landing: Vec<f64> = (0..n).map(|s| inst.initial_arrivals.get(s).copied().unwrap_or(0.0)).collect();
    let mut values = vec![vec![vec![0.0; h]; n]; n];
    for t in 0..h {
        for s in 0..n {
            for s2 in 0..n {
                values[s][s2][t] = inst.economics.xi * (f[s][s2][t] - d[s]).max(0.0);
            }
        }
        let mut next_landing = vec![0.0; n];
        let mut out = vec![0.0; n];
        for s in 0..n {
            let total: f64 = (0..n).map(|s2| f[s][s2][t]).sum();
            for s2 in 0..n {
                if total > 0.0 {
                    let served = f[s][s2][t].min(d[s] * f[s][s2][t] / total);
                    out[s] += served;
                    next_landing[s2] += served;
                }
            }
        }
        for s in 0..n {
            d[s] = (d[s] - out[s] + landing[s]).clamp(0.0, inst.stations[s].capacity as f64);
        }
        landing = next_landing;
    }
    values
}

/// Per-epoch decision of the single vehicle.
#[derive(Clone, Copy, Debug)]
enum VehicleMove {
    Park,
    Operate { to: usize, pick: i64, drop: i64 },
}

/// Per-epoch decision of the single trailer.
#[derive(Clone, Copy, Debug)]
enum TrailerMove {
    Idle,
    Task { from: usize, to: usize, load: i64 },
}

/// Best profit over every integer assignment of `(y, z, sigma, a, b)`; the
/// continuous flows are optimized per assignment by an LP. `None` if nothing
/// is feasible.
pub struct BruteForce<'a> {
    inst: &'a ProblemInstance,
    values: Vec<Vec<Vec<f64>>>,
    cache: HashMap<Vec<i64>, Option<f64>>,
    pub leaves: usize,
    pub lp_solves: usize,
}

impl<'a> BruteForce<'a> {
    pub fn new(inst: &'a ProblemInstance) -> Self {
        assert_eq!(inst.vehicles.len(), 1);
        assert_eq!(inst.trailers.len(), 1);
        Self { inst, values: oracle_task_values(inst), cache: HashMap::new(), leaves: 0, lp_solves: 0 }
    }

    pub fn solve(&mut self) -> Option<f64> {
        let n = self.inst.stations.len();
        let h = self.inst.horizon;
        let origin = self.inst.stations.iter().position(|s| s.id == self.inst.vehicles[0].initial_station).unwrap();
        let mut acc = Acc {
            delta: vec![vec![0; h]; n],
            lo: vec![vec![0; h]; n],
            cut: vec![vec![0; h]; n],
            cost: 0.0,
            spend: 0.0,
        };
        let load = self.inst.vehicles[0].initial_load as i64;
        self.epoch(0, origin, load, &mut acc)
    }

    fn vehicle_moves(&self, at: usize, load: i64) -> Vec<(VehicleMove, i64)> {
        let n = self.inst.stations.len();
        let cv = self.inst.vehicles[0].capacity as i64;
        let hi = cv.min(self.inst.stations[at].capacity as i64);
        let mut out = vec![(VehicleMove::Park, load)];
        for to in 0..n {
            for pick in 0..=hi {
                for drop in 0..=hi {
                    let next = load + pick - drop;
                    if pick + drop <= cv && (0..=cv).contains(&next) {
                        out.push((VehicleMove::Operate { to, pick, drop }, next));
                    }
                }
            }
        }
        out
    }

    fn trailer_moves(&self) -> Vec<TrailerMove> {
        let n = self.inst.stations.len();
        let w = &self.inst.trailers[0];
        let mut out = vec![TrailerMove::Idle];
        for from in 0..n {
            for to in 0..n {
                if self.inst.distances[from][to] > w.max_distance_km {
                    continue;
                }
                let hi = (w.capacity as i64)
                    .min(self.inst.stations[from].capacity as i64)
                    .min(self.inst.stations[to].capacity as i64);
                for load in 0..=hi {
                    out.push(TrailerMove::Task { from, to, load });
                }
            }
        }
        out
    }

    fn epoch(&mut self, t: usize, at: usize, load: i64, acc: &mut Acc) -> Option<f64> {
        if t == self.inst.horizon {
            return self.leaf(acc);
        }
        let mut best: Option<f64> = None;
        let trailer = self.trailer_moves();
        for (vm, next_load) in self.vehicle_moves(at, load) {
            for &tm in &trailer {
                let saved = acc.snapshot(t);
                let (cost0, spend0) = (acc.cost, acc.spend);
                let mut next_at = at;
                if let VehicleMove::Operate { to, pick, drop } = vm {
                    acc.delta[at][t] += drop - pick;
                    acc.lo[at][t] = acc.lo[at][t].max(pick);
                    acc.cut[at][t] = acc.cut[at][t].max(drop);
                    acc.cost += self.inst.economics.routing_cost[at][to];
                    next_at = to;
                }
                if let TrailerMove::Task { from, to, load } = tm {
                    acc.delta[from][t] -= load;
                    acc.delta[to][t] += load;
                    acc.lo[from][t] = acc.lo[from][t].max(load);
                    acc.cut[to][t] = acc.cut[to][t].max(load);
                    acc.spend += self.values[from][to][t];
                }
                let consistent = (0..self.inst.stations.len()).all(|s| {
                    acc.lo[s][t] <= self.inst.stations[s].capacity as i64 - acc.cut[s][t]
                });
                if consistent && acc.spend <= self.inst.economics.budget + 1e-9 {
                    if let Some(v) = self.epoch(t + 1, next_at, next_load, acc) {
                        best = Some(best.map_or(v, |b| b.max(v)));
                    }
                }
                acc.restore(t, saved);
                acc.cost = cost0;
                acc.spend = spend0;
            }
        }
        best
    }

    fn leaf(&mut self, acc: &Acc) -> Option<f64> {
        self.leaves += 1;
        let key: Vec<i64> = acc
            .delta
            .iter()
            .chain(&acc.lo)
            .chain(&acc.cut)
            .flatten()
            .copied()
            .collect();
        let flows = match self.cache.get(&key) {
            Some(v) => *v,
            None => {
                self.lp_solves += 1;
                let v = flow_lp(self.inst, acc);
                self.cache.insert(key, v);
                v
            }
        };
        flows.map(|r| r - acc.cost - acc.spend)
    }
}

struct Acc {
    delta: Vec<Vec<i64>>,
    lo: Vec<Vec<i64>>,
    cut: Vec<Vec<i64>>,
    cost: f64,
    spend: f64,
}

impl Acc {
    fn snapshot(&self, t: usize) -> Vec<(i64, i64, i64)> {
        (0..self.delta.len()).map(|s| (self.delta[s][t], self.lo[s][t], self.cut[s][t])).collect()
    }

    fn restore(&mut self, t: usize, saved: Vec<(i64, i64, i64)>) {
        for (s, (d, l, c)) in saved.into_iter().enumerate() {
            self.delta[s][t] = d;
            self.lo[s][t] = l;
            self.cut[s][t] = c;
        }
    }
}

/// Maximum revenue over hired flows given the net handling `delta`, the stock
/// floor `lo` and the dock reservation `cut` at every station and epoch.
fn flow_lp(inst: &ProblemInstance, acc: &Acc) -> Option<f64> {
    let n = inst.stations.len();
    let h = inst.horizon;
    let f = &inst.demand.0;
    let cap: Vec<f64> = inst.stations.iter().map(|s| s.capacity as f64).collect();
    let d0: Vec<f64> = inst.stations.iter().map(|s| s.initial_bikes as f64).collect();
    for s in 0..n {
        if (acc.lo[s][0] as f64) > d0[s] || d0[s] > cap[s] - acc.cut[s][0] as f64 {
            return None;
        }
    }
    let mut lp = Problem::new(OptimizationDirection::Maximize);
    // d[s][t] for t = 1..=h.
    let d: Vec<Vec<_>> = (0..n)
        .map(|s| {
            (1..=h)
                .map(|t| {
                    let (lo, hi) = if t < h {
                        (acc.lo[s][t] as f64, cap[s] - acc.cut[s][t] as f64)
                    } else {
                        (0.0, cap[s])
                    };
                    lp.add_var(0.0, (lo, hi))
                })
                .collect()
        })
        .collect();
    let mut x = vec![vec![vec![None; h]; n]; n];
    for s in 0..n {
        for t in 0..h {
            let total: f64 = (0..n).map(|s2| f[s][s2][t]).sum();
            for s2 in 0..n {
                if f[s][s2][t] > 0.0 {
                    let var = lp.add_var(inst.economics.revenue[s][s2][t], (0.0, f[s][s2][t]));
                    let frac = f[s][s2][t] / total;
                    if t == 0 {
                        lp.add_constraint(&[(var, 1.0)], ComparisonOp::Le, frac * d0[s]);
                    } else {
                        lp.add_constraint(&[(var, 1.0), (d[s][t - 1], -frac)], ComparisonOp::Le, 0.0);
                    }
                    x[s][s2][t] = Some(var);
                }
            }
        }
    }
    for s in 0..n {
        for t in 0..h {
            // d[t+1] - d[t] + out(t) - in(t-1) = delta (+ initial arrivals).
            let mut e = LinearExpr::empty();
            e.add(d[s][t], 1.0);
            let mut rhs = acc.delta[s][t] as f64;
            if t == 0 {
                rhs += d0[s] + inst.initial_arrivals.get(s).copied().unwrap_or(0.0);
            } else {
                e.add(d[s][t - 1], -1.0);
            }
            for o in 0..n {
                if let Some(v) = x[s][o][t] {
                    e.add(v, 1.0);
                }
                if t > 0 {
                    if let Some(v) = x[o][s][t - 1] {
                        e.add(v, -1.0);
                    }
                }
            }
            lp.add_constraint(e, ComparisonOp::Eq, rhs);
        }
    }
    match lp.solve() {
        Ok(sol) => Some(sol.objective()),
        Err(minilp::Error::Infeasible) => None,
        Err(e) => panic!("oracle LP failed: {e}"),
    }
}
