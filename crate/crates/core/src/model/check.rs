use std::fmt;

use serde::{Deserialize, Serialize};

use super::{BudgetScope, ModelError, ProblemInstance, Solution};
use crate::demand::transition_fraction;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ConstraintId {
    C1,
    C2,
    C3,
    C4,
    C5,
    C6,
    C7,
    C8,
    C9,
    C10,
    C11,
    C12,
    C13,
    C14,
    C15,
}

impl ConstraintId {
    pub const ALL: [ConstraintId; 15] = [
        Self::C1,
        Self::C2,
        Self::C3,
        Self::C4,
        Self::C5,
        Self::C6,
        Self::C7,
        Self::C8,
        Self::C9,
        Self::C10,
        Self::C11,
        Self::C12,
        Self::C13,
        Self::C14,
        Self::C15,
    ];
}

impl fmt::Display for ConstraintId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self:?}")
    }
}

/// Where a violation occurred. Unused coordinates are `None`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Location {
    pub station: Option<usize>,
    pub other_station: Option<usize>,
    pub vehicle: Option<usize>,
    pub trailer: Option<usize>,
    pub epoch: Option<usize>,
}

impl Location {
    fn st(s: usize, t: usize) -> Self {
        Self { station: Some(s), epoch: Some(t), ..Self::default() }
    }

    fn pair(s: usize, s2: usize, t: usize) -> Self {
        Self { station: Some(s), other_station: Some(s2), epoch: Some(t), ..Self::default() }
    }

    fn vehicle(self, v: usize) -> Self {
        Self { vehicle: Some(v), ..self }
    }

    fn trailer(self, w: usize) -> Self {
        Self { trailer: Some(w), ..self }
    }
}

impl fmt::Display for Location {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = [
            ("s", self.station),
            ("s'", self.other_station),
            ("v", self.vehicle),
            ("w", self.trailer),
            ("t", self.epoch),
        ]
        .iter()
        .filter_map(|(k, v)| v.map(|v| format!("{k}={v}")))
        .collect();
        write!(f, "({})", parts.join(", "))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConstraintViolation {
    pub constraint: ConstraintId,
    pub location: Location,
    pub magnitude: f64,
}

impl fmt::Display for ConstraintViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} violated at {} by {}", self.constraint, self.location, self.magnitude)
    }
}

struct Collector {
    tol: f64,
    out: Vec<ConstraintViolation>,
}

impl Collector {
    /// Records a violation when `excess` is above tolerance.
    fn check(&mut self, constraint: ConstraintId, location: Location, excess: f64) {
        if excess > self.tol || excess.is_nan() {
            self.out.push(ConstraintViolation { constraint, location, magnitude: excess });
        }
    }

    fn le(&mut self, constraint: ConstraintId, location: Location, lhs: f64, rhs: f64) {
        self.check(constraint, location, lhs - rhs);
    }

    fn eq(&mut self, constraint: ConstraintId, location: Location, lhs: f64, rhs: f64) {
        self.check(constraint, location, (lhs - rhs).abs());
    }
}

/// Lists every violated constraint of `sol` against `instance`.
///
/// `tol` is an absolute slack applied to every comparison; integer and binary
/// quantities are exact so any positive tolerance below 1 leaves them strict.
pub fn check_solution(
    instance: &ProblemInstance,
    sol: &Solution,
    tol: f64,
) -> Result<Vec<ConstraintViolation>, ModelError> {
    sol.check_dimensions(instance)?;
    use ConstraintId::*;
    let n = instance.n_stations();
    let nv = instance.n_vehicles();
    let nw = instance.n_trailers();
    let h = instance.horizon;
    let origins = instance.vehicle_origins();
    let econ = &instance.economics;
    let d = &sol.d_station;
    let dv = &sol.d_vehicle;
    let cap = |s: usize| instance.stations[s].capacity as f64;
    let vcap = |v: usize| instance.vehicles[v].capacity as f64;
    let wcap = |w: usize| instance.trailers[w].capacity as f64;
    let zsum = |s: usize, v: usize, t: usize| (0..n).filter(|&s2| sol.z[s][s2][v][t]).count();
    let bsum_from = |s: usize, w: usize, t: usize| (0..n).filter(|&s2| sol.b[s][s2][w][t]).count();
    let mut c = Collector { tol, out: Vec::new() };

    // C1: station inventory balance, with the initial inventory pinned.
    for s in 0..n {
        c.eq(C1, Location::st(s, 0), d[s][0], instance.stations[s].initial_bikes as f64);
        for t in 0..h {
            let arrivals = if t == 0 {
                instance.arrivals_at_start(s)
            } else {
                (0..n).map(|s0| sol.x[s0][s][t - 1]).sum()
            };
            let departures: f64 = (0..n).map(|s2| sol.x[s][s2][t]).sum();
            let vehicles: i64 = (0..nv).map(|v| sol.y_minus[s][v][t] - sol.y_plus[s][v][t]).sum();
            let trailers: i64 = (0..nw).map(|w| sol.a_minus[s][w][t] - sol.a_plus[s][w][t]).sum();
            let rhs = d[s][t] + arrivals - departures + (vehicles + trailers) as f64;
            c.eq(C1, Location::st(s, t), d[s][t + 1], rhs);
        }
    }

    // C2: flows follow the demand's transition fractions.
    for s in 0..n {
        for s2 in 0..n {
            for t in 0..h {
                let frac = transition_fraction(&instance.demand, s, s2, t);
                c.le(C2, Location::pair(s, s2, t), sol.x[s][s2][t], d[s][t] * frac);
            }
        }
    }

    // C3: task values are the instance's.
    let values = instance.task_values();
    for s in 0..n {
        for s2 in 0..n {
            for t in 0..h {
                c.eq(C3, Location::pair(s, s2, t), sol.task_values[s][s2][t], values[s][s2][t]);
            }
        }
    }

    // C4: trailer budget.
    let spend_in = |t: usize| -> f64 {
        let mut total = 0.0;
        for s in 0..n {
            for s2 in 0..n {
                for w in 0..nw {
                    if sol.b[s][s2][w][t] {
                        total += sol.task_values[s][s2][t];
                    }
                }
            }
        }
        total
    };
    match econ.budget_scope {
        BudgetScope::Horizon => {
            let spend: f64 = (0..h).map(spend_in).sum();
            c.le(C4, Location::default(), spend, econ.budget);
        }
        BudgetScope::Epoch => {
            for t in 0..h {
                let loc = Location { epoch: Some(t), ..Location::default() };
                c.le(C4, loc, spend_in(t), econ.budget);
            }
        }
    }

    // C5: vehicle load balance.
    for v in 0..nv {
        let loc0 = Location { vehicle: Some(v), epoch: Some(0), ..Location::default() };
        c.eq(C5, loc0, dv[v][0], instance.vehicles[v].initial_load as f64);
        for t in 0..h {
            let net: i64 = (0..n).map(|s| sol.y_plus[s][v][t] - sol.y_minus[s][v][t]).sum();
            let loc = Location { vehicle: Some(v), epoch: Some(t), ..Location::default() };
            c.eq(C5, loc, dv[v][t + 1], dv[v][t] + net as f64);
        }
    }

    // C6: vehicle flow conservation.
    for v in 0..nv {
        for s in 0..n {
            for t in 0..h {
                let out = zsum(s, v, t) + usize::from(sol.sigma[v][s][t]);
                let inflow = if t == 0 {
                    usize::from(origins[v] == s)
                } else {
                    (0..n).filter(|&s0| sol.z[s0][s][v][t - 1]).count() + usize::from(sol.sigma[v][s][t - 1])
                };
                c.eq(C6, Location::st(s, t).vehicle(v), out as f64, inflow as f64);
            }
        }
    }

    // C7: at most one operating vehicle per station and epoch.
    for s in 0..n {
        for t in 0..h {
            let count: usize = (0..nv).map(|v| zsum(s, v, t)).sum();
            c.le(C7, Location::st(s, t), count as f64, 1.0);
        }
    }

    // C8: vehicles only handle bikes where they operate.
    for s in 0..n {
        for v in 0..nv {
            for t in 0..h {
                let handled = (sol.y_plus[s][v][t] + sol.y_minus[s][v][t]) as f64;
                c.le(C8, Location::st(s, t).vehicle(v), handled, vcap(v) * zsum(s, v, t) as f64);
            }
        }
    }

    for s in 0..n {
        for t in 0..h {
            let mut picked = 0i64;
            let mut dropped = 0i64;
            for w in 0..nw {
                // C9: trailer pickup bounded by its task, the stock, and its capacity.
                let limit = bsum_from(s, w, t) as f64 * d[s][t].min(wcap(w));
                c.le(C9, Location::st(s, t).trailer(w), sol.a_plus[s][w][t] as f64, limit);
                picked += sol.a_plus[s][w][t];
                dropped += sol.a_minus[s][w][t];
            }
            // C10, C11: station-level trailer totals.
            c.le(C10, Location::st(s, t), picked as f64, d[s][t]);
            c.le(C11, Location::st(s, t), dropped as f64, cap(s) - d[s][t]);
        }
    }

    for w in 0..nw {
        let dmax = instance.trailers[w].max_distance_km;
        for t in 0..h {
            let mut tasks = 0usize;
            for s in 0..n {
                for s2 in 0..n {
                    if sol.b[s][s2][w][t] {
                        tasks += 1;
                        // C12: trailer range.
                        c.le(C12, Location::pair(s, s2, t).trailer(w), instance.distances[s][s2], dmax);
                    }
                }
            }
            // C13: one task per trailer and epoch.
            let loc = Location { trailer: Some(w), epoch: Some(t), ..Location::default() };
            c.le(C13, loc, tasks as f64, 1.0);
            // C14: drop exactly what the task picked up.
            for s2 in 0..n {
                let carried: i64 = (0..n)
                    .filter(|&s| sol.b[s][s2][w][t])
                    .map(|s| sol.a_plus[s][w][t])
                    .sum();
                c.eq(C14, Location::st(s2, t).trailer(w), sol.a_minus[s2][w][t] as f64, carried as f64);
            }
        }
    }

    // C15: domains and capacities.
    for s in 0..n {
        for s2 in 0..n {
            for t in 0..h {
                let x = sol.x[s][s2][t];
                let loc = Location::pair(s, s2, t);
                c.le(C15, loc, -x, 0.0);
                c.le(C15, loc, x, instance.demand.get(s, s2, t));
            }
        }
        for t in 0..=h {
            c.le(C15, Location::st(s, t), -d[s][t], 0.0);
            c.le(C15, Location::st(s, t), d[s][t], cap(s));
        }
        for t in 0..h {
            for v in 0..nv {
                let loc = Location::st(s, t).vehicle(v);
                let (yp, ym) = (sol.y_plus[s][v][t] as f64, sol.y_minus[s][v][t] as f64);
                c.le(C15, loc, -yp, 0.0);
                c.le(C15, loc, -ym, 0.0);
                c.le(C15, loc, yp, d[s][t].min(vcap(v)));
                c.le(C15, loc, ym, (cap(s) - d[s][t]).min(vcap(v)));
            }
            for w in 0..nw {
                let loc = Location::st(s, t).trailer(w);
                c.le(C15, loc, -(sol.a_plus[s][w][t] as f64), 0.0);
                c.le(C15, loc, -(sol.a_minus[s][w][t] as f64), 0.0);
            }
        }
    }
    for v in 0..nv {
        for t in 0..=h {
            let loc = Location { vehicle: Some(v), epoch: Some(t), ..Location::default() };
            c.le(C15, loc, -dv[v][t], 0.0);
            c.le(C15, loc, dv[v][t], vcap(v));
        }
    }

    Ok(c.out)
}
