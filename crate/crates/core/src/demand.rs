//! Empirical demand fitting, scenario sampling and transition fractions.

use std::collections::{BTreeSet, HashMap};

use chrono::{NaiveDate, NaiveDateTime, Timelike};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{tensor3, DemandTensor, Tensor3};

/// One historical trip.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TripRecord {
    pub start_time: NaiveDateTime,
    pub end_time: NaiveDateTime,
    pub start_station: String,
    pub end_station: String,
}

/// Hours of the day covered by the planning horizon, `[start_hour, end_hour)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DayWindow {
    pub start_hour: u32,
    pub end_hour: u32,
}

impl DayWindow {
    pub fn minutes(&self) -> u32 {
        (self.end_hour - self.start_hour) * 60
    }
}

/// Counts of trips dropped while fitting.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FitDiagnostics {
    pub read: usize,
    pub retained: usize,
    pub outside_window: usize,
    pub unknown_station: usize,
    pub ends_before_start: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DemandModel {
    /// Mean daily trip counts per epoch.
    pub demand: DemandTensor,
    pub epoch_minutes: u32,
    pub day_window: DayWindow,
    /// Retained trips of each observed day as `(s, s2, t)` cells, for bootstrap draws.
    #[serde(default)]
    pub days: Vec<Vec<(usize, usize, usize)>>,
    #[serde(default)]
    pub diagnostics: FitDiagnostics,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SamplingMode {
    /// Independent Poisson count per cell with the fitted mean.
    #[default]
    Poisson,
    /// A whole historical day drawn uniformly.
    Bootstrap,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum DemandError {
    #[error("station set is empty")]
    NoStations,
    #[error("invalid day window {start}:00-{end}:00")]
    BadWindow { start: u32, end: u32 },
    #[error("epoch length {epoch} min does not divide the {window} min window")]
    EpochMismatch { epoch: u32, window: u32 },
}

impl DemandModel {
    /// Wraps a known mean tensor, e.g. from a synthetic instance.
    pub fn from_tensor(demand: DemandTensor, epoch_minutes: u32) -> Self {
        let minutes = demand.horizon() as u32 * epoch_minutes;
        Self {
            demand,
            epoch_minutes,
            day_window: DayWindow { start_hour: 0, end_hour: minutes.div_ceil(60) },
            days: Vec::new(),
            diagnostics: FitDiagnostics::default(),
        }
    }

    pub fn horizon(&self) -> usize {
        self.demand.horizon()
    }
}

/// `F[s][s2][t] / sum_k F[s][k][t]`, with an all-zero row giving 0.
pub fn transition_fraction(f: &DemandTensor, s: usize, s2: usize, t: usize) -> f64 {
    let total = f.outflow(s, t);
    if total > 0.0 {
        f.get(s, s2, t) / total
    } else {
        0.0
    }
}

fn epoch_of(time: &NaiveDateTime, window: DayWindow, epoch_minutes: u32) -> Option<usize> {
    let minute = time.hour() * 60 + time.minute();
    let start = window.start_hour * 60;
    if minute < start || minute >= window.end_hour * 60 {
        return None;
    }
    Some(((minute - start) / epoch_minutes) as usize)
}

/// Mean daily OD counts per epoch from historical trips.
///
/// The number of days is the count of distinct start dates among trips with
/// valid times. Trips are binned by departure epoch.
pub fn fit_empirical(
    trips: &[TripRecord],
    epoch_minutes: u32,
    day_window: DayWindow,
    station_ids: &[String],
) -> Result<DemandModel, DemandError> {
    if station_ids.is_empty() {
        return Err(DemandError::NoStations);
    }
    if day_window.start_hour >= day_window.end_hour || day_window.end_hour > 24 {
        return Err(DemandError::BadWindow { start: day_window.start_hour, end: day_window.end_hour });
    }
    let window = day_window.minutes();
    if epoch_minutes == 0 || window % epoch_minutes != 0 {
        return Err(DemandError::EpochMismatch { epoch: epoch_minutes, window });
    }
    let n = station_ids.len();
    let horizon = (window / epoch_minutes) as usize;
    let index: HashMap<&str, usize> = station_ids.iter().enumerate().map(|(i, s)| (s.as_str(), i)).collect();

    let mut diag = FitDiagnostics { read: trips.len(), ..FitDiagnostics::default() };
    let mut dates = BTreeSet::new();
    let mut cells: Vec<(NaiveDate, usize, usize, usize)> = Vec::new();
    for trip in trips {
        if trip.end_time < trip.start_time {
            diag.ends_before_start += 1;
            continue;
        }
        dates.insert(trip.start_time.date());
        let (Some(&s), Some(&s2)) = (index.get(trip.start_station.as_str()), index.get(trip.end_station.as_str())) else {
            diag.unknown_station += 1;
            continue;
        };
        let Some(t) = epoch_of(&trip.start_time, day_window, epoch_minutes) else {
            diag.outside_window += 1;
            continue;
        };
        diag.retained += 1;
        cells.push((trip.start_time.date(), s, s2, t));
    }

    let mut counts = tensor3(n, n, horizon, 0.0);
    let day_index: HashMap<NaiveDate, usize> = dates.iter().enumerate().map(|(i, d)| (*d, i)).collect();
    let mut days = vec![Vec::new(); dates.len()];
    for &(date, s, s2, t) in &cells {
        counts[s][s2][t] += 1.0;
        days[day_index[&date]].push((s, s2, t));
    }
    for day in &mut days {
        day.sort_unstable();
    }
    if !dates.is_empty() {
        let k = dates.len() as f64;
        counts.iter_mut().flatten().flatten().for_each(|c| *c /= k);
    }
    Ok(DemandModel {
        demand: DemandTensor(counts),
        epoch_minutes,
        day_window,
        days,
        diagnostics: diag,
    })
}

/// Integer demand realization, one independent Poisson draw per cell.
pub fn sample_scenario(model: &DemandModel, seed: u64) -> DemandTensor {
    sample_scenario_with(model, SamplingMode::Poisson, seed)
}

pub fn sample_scenario_with(model: &DemandModel, mode: SamplingMode, seed: u64) -> DemandTensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let f = &model.demand;
    let (n, h) = (f.n_stations(), f.horizon());
    let mut out: Tensor3<f64> = tensor3(n, n, h, 0.0);
    match mode {
        SamplingMode::Poisson => {
            for s in 0..n {
                for s2 in 0..n {
                    for t in 0..h {
                        let mean = f.get(s, s2, t);
                        if mean > 0.0 {
                            out[s][s2][t] = Poisson::new(mean).expect("positive mean").sample(&mut rng);
                        }
                    }
                }
            }
        }
        SamplingMode::Bootstrap => {
            if !model.days.is_empty() {
                let day = &model.days[rng.gen_range(0..model.days.len())];
                for &(s, s2, t) in day {
                    out[s][s2][t] += 1.0;
                }
            }
        }
    }
    DemandTensor(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::NaiveDate;
    use proptest::prelude::*;

    fn at(day: u32, h: u32, m: u32) -> NaiveDateTime {
        NaiveDate::from_ymd_opt(2024, 5, day).unwrap().and_hms_opt(h, m, 0).unwrap()
    }

    fn trip(day: u32, h: u32, m: u32, from: &str, to: &str) -> TripRecord {
        TripRecord {
            start_time: at(day, h, m),
            end_time: at(day, h, m) + chrono::Duration::minutes(20),
            start_station: from.into(),
            end_station: to.into(),
        }
    }

    fn ids() -> Vec<String> {
        vec!["a".into(), "b".into(), "c".into()]
    }

    const WINDOW: DayWindow = DayWindow { start_hour: 6, end_hour: 9 };

    #[test]
    fn fractions() {
        let mut f = DemandTensor::zeros(3, 1);
        f.0[0][1][0] = 4.0;
        assert_eq!(transition_fraction(&f, 0, 1, 0), 1.0);
        assert_eq!(transition_fraction(&f, 1, 0, 0), 0.0);
        f.0[2][0][0] = 2.0;
        f.0[2][1][0] = 3.0;
        assert!((transition_fraction(&f, 2, 0, 0) - 0.4).abs() < 1e-15);
        assert!((transition_fraction(&f, 2, 1, 0) - 0.6).abs() < 1e-15);
    }

    #[test]
    fn fit_empty_and_single() {
        let m = fit_empirical(&[], 30, WINDOW, &ids()).unwrap();
        assert_eq!(m.demand.total(), 0.0);
        assert_eq!(m.horizon(), 6);
        let m = fit_empirical(&[trip(1, 7, 10, "a", "c")], 30, WINDOW, &ids()).unwrap();
        assert_eq!(m.demand.get(0, 2, 2), 1.0);
        assert_eq!(m.demand.total(), 1.0);
    }

    #[test]
    fn fit_drops_and_counts() {
        let trips = vec![
            trip(1, 6, 0, "a", "b"),
            trip(1, 5, 59, "a", "b"),
            trip(2, 9, 0, "a", "b"),
            trip(2, 6, 45, "a", "zz"),
            trip(2, 6, 45, "b", "a"),
        ];
        let m = fit_empirical(&trips, 30, WINDOW, &ids()).unwrap();
        let d = m.diagnostics;
        assert_eq!((d.read, d.retained, d.outside_window, d.unknown_station), (5, 2, 2, 1));
        assert_eq!(m.demand.get(0, 1, 0), 0.5);
        assert_eq!(m.demand.get(1, 0, 1), 0.5);
    }

    #[test]
    fn fit_rejects_bad_input() {
        assert_eq!(fit_empirical(&[], 30, WINDOW, &[]), Err(DemandError::NoStations));
        assert!(matches!(
            fit_empirical(&[], 45, DayWindow { start_hour: 6, end_hour: 7 }, &ids()),
            Err(DemandError::EpochMismatch { .. })
        ));
    }

    #[test]
    fn poisson_sampling() {
        let mut f = DemandTensor::zeros(2, 1);
        f.0[0][1][0] = 2.0;
        let model = DemandModel::from_tensor(f, 30);
        assert_eq!(sample_scenario(&model, 5), sample_scenario(&model, 5));
        let draws = 10_000;
        let mut sum = 0.0;
        for seed in 0..draws {
            let d = sample_scenario(&model, seed);
            assert_eq!(d.get(1, 0, 0), 0.0);
            sum += d.get(0, 1, 0);
        }
        let mean = sum / draws as f64;
        assert!((1.9..=2.1).contains(&mean), "{mean}");
    }

    #[test]
    fn bootstrap_draws_a_whole_day() {
        let trips = vec![trip(1, 6, 0, "a", "b"), trip(1, 6, 5, "a", "b"), trip(2, 7, 0, "c", "a")];
        let m = fit_empirical(&trips, 30, WINDOW, &ids()).unwrap();
        for seed in 0..20 {
            let d = sample_scenario_with(&m, SamplingMode::Bootstrap, seed);
            let one = d.get(0, 1, 0) == 2.0 && d.total() == 2.0;
            let two = d.get(2, 0, 2) == 1.0 && d.total() == 1.0;
            assert!(one || two);
        }
    }

    proptest! {
        #[test]
        fn fit_conserves_and_ignores_order(
            raw in prop::collection::vec((1u32..4, 4u32..10, 0u32..40, 0usize..3, 0usize..3), 0..40),
            rot in 0usize..40,
        ) {
            let names = ids();
            let mut trips: Vec<TripRecord> = raw
                .iter()
                .map(|&(d, h, m, a, b)| trip(d, h, m, &names[a], &names[b]))
                .collect();
            let m1 = fit_empirical(&trips, 30, WINDOW, &names).unwrap();
            let k = m1.days.len() as f64;
            prop_assert!((m1.demand.total() * k - m1.diagnostics.retained as f64).abs() < 1e-9);
            if !trips.is_empty() {
                let r = rot % trips.len();
                trips.rotate_left(r);
                trips.reverse();
            }
            let m2 = fit_empirical(&trips, 30, WINDOW, &names).unwrap();
            prop_assert_eq!(m1, m2);
        }

        #[test]
        fn fraction_rows_sum_to_one_or_zero(row in prop::collection::vec(0.0f64..5.0, 1..6)) {
            let n = row.len();
            let mut f = DemandTensor::zeros(n, 1);
            for (j, &v) in row.iter().enumerate() {
                f.0[0][j][0] = if v < 1.0 { 0.0 } else { v };
            }
            let total: f64 = (0..n).map(|j| transition_fraction(&f, 0, j, 0)).sum();
            if f.outflow(0, 0) > 0.0 {
                prop_assert!((total - 1.0).abs() < 1e-12);
            } else {
                prop_assert_eq!(total, 0.0);
            }
        }
    }
}
