//! Main stations: geographic k-means over stations and reduction of an instance
//! to its cluster representatives plus per-cluster trailer subinstances.

use std::io;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{tensor3, DemandTensor, EconomicModel, ProblemInstance, Station};

pub const EARTH_RADIUS_KM: f64 = 6371.0;

/// Great-circle distance between two `(latitude, longitude)` points in degrees.
pub fn haversine_km(a: (f64, f64), b: (f64, f64)) -> f64 {
    let (lat1, lon1) = (a.0.to_radians(), a.1.to_radians());
    let (lat2, lon2) = (b.0.to_radians(), b.1.to_radians());
    let h = ((lat2 - lat1) / 2.0).sin().powi(2) + lat1.cos() * lat2.cos() * ((lon2 - lon1) / 2.0).sin().powi(2);
    2.0 * EARTH_RADIUS_KM * h.sqrt().min(1.0).asin()
}

fn coords(s: &Station) -> (f64, f64) {
    (s.latitude, s.longitude)
}

/// Symmetric haversine distance matrix.
pub fn distance_matrix(stations: &[Station]) -> Vec<Vec<f64>> {
    let n = stations.len();
    let mut d = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in i + 1..n {
            let km = haversine_km(coords(&stations[i]), coords(&stations[j]));
            d[i][j] = km;
            d[j][i] = km;
        }
    }
    d
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MainStationClustering {
    pub station_ids: Vec<String>,
    /// Cluster of each station, aligned with `station_ids`.
    pub assignment: Vec<usize>,
    /// Station index of each cluster's medoid.
    pub representatives: Vec<usize>,
    pub k: usize,
}

impl MainStationClustering {
    pub fn members(&self, cluster: usize) -> Vec<usize> {
        (0..self.assignment.len()).filter(|&s| self.assignment[s] == cluster).collect()
    }

    /// Writes `station_id,cluster_id,representative_flag`.
    pub fn write_csv<W: io::Write>(&self, out: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["station_id", "cluster_id", "representative_flag"])?;
        for (s, id) in self.station_ids.iter().enumerate() {
            let c = self.assignment[s];
            let rep = u8::from(self.representatives[c] == s);
            w.write_record([id.clone(), c.to_string(), rep.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ClusterError {
    #[error("cluster count {k} outside 1..={n}")]
    BadK { k: usize, n: usize },
}

/// The default cluster count: one main station per five stations.
pub fn default_k(n_stations: usize) -> usize {
    n_stations.div_ceil(5).max(1)
}

fn project(stations: &[Station]) -> Vec<[f64; 2]> {
    let lat0 = stations.iter().map(|s| s.latitude).sum::<f64>() / stations.len() as f64;
    let kx = EARTH_RADIUS_KM * lat0.to_radians().cos();
    stations
        .iter()
        .map(|s| [kx * s.longitude.to_radians(), EARTH_RADIUS_KM * s.latitude.to_radians()])
        .collect()
}

fn sq(a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)
}

fn nearest(p: [f64; 2], centers: &[[f64; 2]]) -> usize {
    let mut best = 0;
    for (c, &ctr) in centers.iter().enumerate() {
        if sq(p, ctr) < sq(p, centers[best]) {
            best = c;
        }
    }
    best
}

/// k-means on a local equirectangular projection with seeded k-means++
/// initialization; representatives are haversine medoids.
pub fn compute_main_stations(stations: &[Station], k: usize, seed: u64) -> Result<MainStationClustering, ClusterError> {
    let n = stations.len();
    if k == 0 || k > n {
        return Err(ClusterError::BadK { k, n });
    }
    let pts = project(stations);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut centers = vec![pts[rng.gen_range(0..n)]];
    while centers.len() < k {
        let w: Vec<f64> = pts.iter().map(|&p| sq(p, centers[nearest(p, &centers)])).collect();
        let total: f64 = w.iter().sum();
        let pick = if total > 0.0 {
            let mut r = rng.gen_range(0.0..total);
            let mut idx = n - 1;
            for (i, &wi) in w.iter().enumerate() {
                if r < wi {
                    idx = i;
                    break;
                }
                r -= wi;
            }
            idx
        } else {
            rng.gen_range(0..n)
        };
        centers.push(pts[pick]);
    }

    let mut assign = vec![usize::MAX; n];
    for _ in 0..200 {
        let next: Vec<usize> = pts.iter().map(|&p| nearest(p, &centers)).collect();
        let changed = next != assign;
        assign = next;
        let mut sums = vec![[0.0, 0.0, 0.0]; k];
        for (i, &c) in assign.iter().enumerate() {
            sums[c][0] += pts[i][0];
            sums[c][1] += pts[i][1];
            sums[c][2] += 1.0;
        }
        let mut repaired = false;
        for c in 0..k {
            if sums[c][2] > 0.0 {
                centers[c] = [sums[c][0] / sums[c][2], sums[c][1] / sums[c][2]];
            } else {
                // Reseed an empty cluster at the point farthest from its center.
                let far = (0..n)
                    .max_by(|&i, &j| {
                        let di = sq(pts[i], centers[assign[i]]);
                        let dj = sq(pts[j], centers[assign[j]]);
                        di.total_cmp(&dj).then(j.cmp(&i))
                    })
                    .expect("non-empty");
                centers[c] = pts[far];
                assign[far] = c;
                repaired = true;
            }
        }
        if !changed && !repaired {
            break;
        }
    }

    // Renumber clusters by their smallest member so labels do not depend on
    // initialization order.
    let mut first = vec![usize::MAX; k];
    for (i, &c) in assign.iter().enumerate() {
        first[c] = first[c].min(i);
    }
    let mut order: Vec<usize> = (0..k).filter(|&c| first[c] != usize::MAX).collect();
    order.sort_by_key(|&c| first[c]);
    let mut relabel = vec![0; k];
    for (new, &old) in order.iter().enumerate() {
        relabel[old] = new;
    }
    let assignment: Vec<usize> = assign.iter().map(|&c| relabel[c]).collect();
    let k = order.len();

    let representatives = (0..k)
        .map(|c| {
            let members: Vec<usize> = (0..n).filter(|&s| assignment[s] == c).collect();
            let cost = |m: usize| -> f64 {
                members.iter().map(|&o| haversine_km(coords(&stations[m]), coords(&stations[o]))).sum()
            };
            let mut best = members[0];
            let mut best_cost = cost(best);
            for &m in &members[1..] {
                let c = cost(m);
                if c < best_cost {
                    best = m;
                    best_cost = c;
                }
            }
            best
        })
        .collect();

    Ok(MainStationClustering {
        station_ids: stations.iter().map(|s| s.id.clone()).collect(),
        assignment,
        representatives,
        k,
    })
}

/// Like [`compute_main_stations`], raising `k` until every cluster's diameter
/// fits within `range_km`.
pub fn compute_main_stations_within(
    stations: &[Station],
    k: usize,
    seed: u64,
    range_km: f64,
) -> Result<MainStationClustering, ClusterError> {
    let n = stations.len();
    let mut k = k;
    loop {
        let c = compute_main_stations(stations, k, seed)?;
        let fits = (0..c.k).all(|cl| {
            let m = c.members(cl);
            m.iter().all(|&i| {
                m.iter().all(|&j| haversine_km(coords(&stations[i]), coords(&stations[j])) <= range_km)
            })
        });
        if fits || k == n {
            return Ok(c);
        }
        k += 1;
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubInstance {
    pub cluster: usize,
    /// Original station index of each subinstance station.
    pub stations: Vec<usize>,
    pub instance: ProblemInstance,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReducedInstance {
    /// Vehicles over cluster representatives.
    pub reduced: ProblemInstance,
    /// Trailers within each multi-station cluster.
    pub subinstances: Vec<SubInstance>,
}

/// Splits `instance` into a vehicle problem over main stations and one trailer
/// problem per multi-station cluster.
///
/// Docks, bikes and cross-cluster demand are summed per cluster. Revenue per
/// aggregated cell is the demand-weighted mean. Demand inside a multi-station
/// cluster goes to that cluster's subinstance, so reduced plus subinstance demand
/// equals the original. Trailers are dealt round-robin to multi-station clusters
/// and the budget follows them; if every cluster is a singleton they stay in the
/// reduced instance.
pub fn reduce_instance(instance: &ProblemInstance, clustering: &MainStationClustering) -> ReducedInstance {
    let n = instance.n_stations();
    let h = instance.horizon;
    let k = clustering.k;
    let cl = &clustering.assignment;
    let members: Vec<Vec<usize>> = (0..k).map(|c| clustering.members(c)).collect();
    let multi: Vec<usize> = (0..k).filter(|&c| members[c].len() > 1).collect();
    let keep_trailers = multi.is_empty();
    let reps = &clustering.representatives;

    let stations: Vec<Station> = (0..k)
        .map(|c| {
            let rep = &instance.stations[reps[c]];
            Station {
                id: rep.id.clone(),
                latitude: rep.latitude,
                longitude: rep.longitude,
                capacity: members[c].iter().map(|&s| instance.stations[s].capacity).sum(),
                initial_bikes: members[c].iter().map(|&s| instance.stations[s].initial_bikes).sum(),
            }
        })
        .collect();

    let mut demand = tensor3(k, k, h, 0.0);
    let mut weighted = tensor3(k, k, h, 0.0);
    let mut plain = tensor3(k, k, h, 0.0);
    let mut cells = vec![vec![0usize; k]; k];
    for s in 0..n {
        for s2 in 0..n {
            let (c, c2) = (cl[s], cl[s2]);
            if c == c2 && members[c].len() > 1 {
                continue;
            }
            cells[c][c2] += 1;
            for t in 0..h {
                let f = instance.demand.get(s, s2, t);
                let r = instance.economics.revenue[s][s2][t];
                demand[c][c2][t] += f;
                weighted[c][c2][t] += f * r;
                plain[c][c2][t] += r;
            }
        }
    }
    let mut revenue = tensor3(k, k, h, 0.0);
    for c in 0..k {
        for c2 in 0..k {
            for t in 0..h {
                revenue[c][c2][t] = if demand[c][c2][t] > 0.0 {
                    weighted[c][c2][t] / demand[c][c2][t]
                } else if cells[c][c2] > 0 {
                    plain[c][c2][t] / cells[c][c2] as f64
                } else {
                    0.0
                };
            }
        }
    }
    let pick = |m: &Vec<Vec<f64>>| -> Vec<Vec<f64>> {
        (0..k).map(|c| (0..k).map(|c2| m[reps[c]][reps[c2]]).collect()).collect()
    };
    let arrivals = if instance.initial_arrivals.is_empty() {
        Vec::new()
    } else {
        (0..k).map(|c| members[c].iter().map(|&s| instance.initial_arrivals[s]).sum()).collect()
    };
    let vehicles = instance
        .vehicles
        .iter()
        .map(|v| {
            let s = instance.station_index(&v.initial_station).expect("validated instance");
            let mut v = v.clone();
            v.initial_station = instance.stations[reps[cl[s]]].id.clone();
            v
        })
        .collect();
    let reduced = ProblemInstance {
        stations,
        vehicles,
        trailers: if keep_trailers { instance.trailers.clone() } else { Vec::new() },
        demand: DemandTensor(demand),
        economics: EconomicModel {
            revenue,
            routing_cost: pick(&instance.economics.routing_cost),
            xi: instance.economics.xi,
            budget: if keep_trailers { instance.economics.budget } else { 0.0 },
            budget_scope: instance.economics.budget_scope,
        },
        distances: pick(&instance.distances),
        horizon: h,
        epoch_minutes: instance.epoch_minutes,
        initial_arrivals: arrivals,
    };

    let n_trailers = instance.n_trailers();
    let subinstances = multi
        .iter()
        .enumerate()
        .map(|(slot, &c)| {
            let m = &members[c];
            let trailers: Vec<_> = (0..n_trailers)
                .filter(|w| w % multi.len() == slot)
                .map(|w| instance.trailers[w].clone())
                .collect();
            let share = if n_trailers > 0 { trailers.len() as f64 / n_trailers as f64 } else { 0.0 };
            let sub3 = |t3: &Vec<Vec<Vec<f64>>>| -> Vec<Vec<Vec<f64>>> {
                m.iter().map(|&s| m.iter().map(|&s2| t3[s][s2].clone()).collect()).collect()
            };
            let sub2 = |t2: &Vec<Vec<f64>>| -> Vec<Vec<f64>> {
                m.iter().map(|&s| m.iter().map(|&s2| t2[s][s2]).collect()).collect()
            };
            let instance = ProblemInstance {
                stations: m.iter().map(|&s| instance.stations[s].clone()).collect(),
                vehicles: Vec::new(),
                trailers,
                demand: DemandTensor(sub3(&instance.demand.0)),
                economics: EconomicModel {
                    revenue: sub3(&instance.economics.revenue),
                    routing_cost: sub2(&instance.economics.routing_cost),
                    xi: instance.economics.xi,
                    budget: instance.economics.budget * share,
                    budget_scope: instance.economics.budget_scope,
                },
                distances: sub2(&instance.distances),
                horizon: h,
                epoch_minutes: instance.epoch_minutes,
                initial_arrivals: if instance.initial_arrivals.is_empty() {
                    Vec::new()
                } else {
                    m.iter().map(|&s| instance.initial_arrivals[s]).collect()
                },
            };
            SubInstance { cluster: c, stations: m.clone(), instance }
        })
        .collect();

    ReducedInstance { reduced, subinstances }
}
