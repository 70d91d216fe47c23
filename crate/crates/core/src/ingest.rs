//! Station and trip CSV readers, the synthetic instance generator, and the
//! versioned JSON instance format.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::io::{self, Read};
use std::path::{Path, PathBuf};

use chrono::{DateTime, NaiveDateTime};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::clustering::{distance_matrix, haversine_km};
use crate::demand::{DemandModel, TripRecord};
use crate::model::{
    tensor3, BudgetScope, DemandTensor, EconomicModel, ModelError, ProblemInstance, Station, Trailer, Vehicle,
};

pub const SCHEMA: &str = "drrpvt-instance/1";

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("cannot access {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("parse error at byte {offset}: {message}")]
    Parse { offset: usize, message: String },
    #[error("schema mismatch: expected {expected}, found {found}")]
    Schema { expected: String, found: String },
    #[error("unknown top-level fields: {}", .0.join(", "))]
    UnknownFields(Vec<String>),
    #[error("missing column {0}")]
    MissingColumn(String),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Invalid(#[from] ModelError),
    #[error("invalid configuration: {0}")]
    Config(String),
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> IngestError + '_ {
    move |source| IngestError::Io { path: path.to_path_buf(), source }
}

/// Maps canonical column names to the headers used by a particular export.
/// Columns not listed keep their canonical name.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ColumnMapping(pub BTreeMap<String, String>);

impl ColumnMapping {
    pub fn load(path: &Path) -> Result<Self, IngestError> {
        let text = fs::read_to_string(path).map_err(io_err(path))?;
        serde_json::from_str(&text).map_err(|e| parse_error(&text, &e))
    }

    fn header<'a>(&'a self, canonical: &'a str) -> &'a str {
        self.0.get(canonical).map_or(canonical, String::as_str)
    }

    fn locate(&self, headers: &csv::StringRecord, canonical: &str) -> Result<usize, IngestError> {
        let name = self.header(canonical);
        headers
            .iter()
            .position(|h| h.trim() == name)
            .ok_or_else(|| IngestError::MissingColumn(name.to_string()))
    }
}

/// A rejected input row. `row` counts data rows from 1.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RowDiagnostic {
    pub row: usize,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StationRecord {
    pub id: String,
    pub name: String,
    pub latitude: f64,
    pub longitude: f64,
    pub capacity: u32,
}

/// Parsed rows plus everything that was rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Table<T> {
    pub records: Vec<T>,
    pub diagnostics: Vec<RowDiagnostic>,
    pub rows_read: usize,
}

fn read_table<R: Read, T>(
    input: R,
    mapping: &ColumnMapping,
    columns: &[&str],
    parse: impl Fn(&[&str]) -> Result<T, String>,
) -> Result<Table<T>, IngestError> {
    let mut rdr = csv::ReaderBuilder::new().flexible(true).from_reader(input);
    let headers = rdr.headers()?.clone();
    let idx: Vec<usize> = columns.iter().map(|c| mapping.locate(&headers, c)).collect::<Result<_, _>>()?;
    let mut table = Table { records: Vec::new(), diagnostics: Vec::new(), rows_read: 0 };
    for (i, row) in rdr.records().enumerate() {
        table.rows_read += 1;
        let row_no = i + 1;
        let outcome = row.map_err(|e| e.to_string()).and_then(|r| {
            let fields: Vec<&str> = idx
                .iter()
                .map(|&j| r.get(j).map(str::trim).ok_or_else(|| format!("missing field {j}")))
                .collect::<Result<_, _>>()?;
            parse(&fields)
        });
        match outcome {
            Ok(rec) => table.records.push(rec),
            Err(message) => table.diagnostics.push(RowDiagnostic { row: row_no, message }),
        }
    }
    Ok(table)
}

fn num<T: std::str::FromStr>(field: &str, name: &str) -> Result<T, String> {
    field.parse().map_err(|_| format!("{name} {field:?} is not a valid number"))
}

/// Reads `id,name,latitude,longitude,capacity` rows.
pub fn read_stations_from<R: Read>(input: R, mapping: &ColumnMapping) -> Result<Table<StationRecord>, IngestError> {
    read_table(input, mapping, &["id", "name", "latitude", "longitude", "capacity"], |f| {
        let latitude: f64 = num(f[2], "latitude")?;
        let longitude: f64 = num(f[3], "longitude")?;
        if !(-90.0..=90.0).contains(&latitude) || !(-180.0..=180.0).contains(&longitude) {
            return Err(format!("coordinates ({latitude}, {longitude}) out of range"));
        }
        if f[0].is_empty() {
            return Err("empty station id".into());
        }
        Ok(StationRecord {
            id: f[0].to_string(),
            name: f[1].to_string(),
            latitude,
            longitude,
            capacity: num(f[4], "capacity")?,
        })
    })
}

pub fn read_stations(path: &Path, mapping: &ColumnMapping) -> Result<Table<StationRecord>, IngestError> {
    let file = fs::File::open(path).map_err(io_err(path))?;
    read_stations_from(file, mapping)
}

/// Accepts ISO-8601 with `T` or a space, optional fractional seconds, and an
/// optional offset (dropped, keeping local wall time).
pub fn parse_timestamp(s: &str) -> Option<NaiveDateTime> {
    const FORMATS: [&str; 4] = ["%Y-%m-%dT%H:%M:%S%.f", "%Y-%m-%d %H:%M:%S%.f", "%Y-%m-%dT%H:%M", "%Y-%m-%d %H:%M"];
    FORMATS
        .iter()
        .find_map(|f| NaiveDateTime::parse_from_str(s, f).ok())
        .or_else(|| DateTime::parse_from_rfc3339(s).ok().map(|d| d.naive_local()))
}

/// Reads `start_time,end_time,start_station,end_station` rows.
pub fn read_trips_from<R: Read>(input: R, mapping: &ColumnMapping) -> Result<Table<TripRecord>, IngestError> {
    read_table(input, mapping, &["start_time", "end_time", "start_station", "end_station"], |f| {
        let start_time = parse_timestamp(f[0]).ok_or_else(|| format!("bad start_time {:?}", f[0]))?;
        let end_time = parse_timestamp(f[1]).ok_or_else(|| format!("bad end_time {:?}", f[1]))?;
        Ok(TripRecord { start_time, end_time, start_station: f[2].to_string(), end_station: f[3].to_string() })
    })
}

pub fn read_trips(path: &Path, mapping: &ColumnMapping) -> Result<Table<TripRecord>, IngestError> {
    let file = fs::File::open(path).map_err(io_err(path))?;
    read_trips_from(file, mapping)
}

/// Fleet and price parameters used to turn stations and demand into an instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FleetConfig {
    pub n_vehicles: usize,
    pub vehicle_capacity: u32,
    pub n_trailers: usize,
    pub trailer_capacity: u32,
    pub trailer_range_km: f64,
    pub base_fare: f64,
    pub fare_per_km: f64,
    pub routing_cost_per_km: f64,
    pub xi: f64,
    pub budget: f64,
    pub fill_ratio: f64,
}

impl Default for FleetConfig {
    fn default() -> Self {
        Self {
            n_vehicles: 2,
            vehicle_capacity: 10,
            n_trailers: 7,
            trailer_capacity: 4,
            trailer_range_km: 2.0,
            base_fare: 1.0,
            fare_per_km: 0.5,
            routing_cost_per_km: 1.0,
            xi: 2.0,
            budget: 50.0,
            fill_ratio: 0.5,
        }
    }
}

/// Rounds to 9 significant digits, the precision of the canonical JSON form.
pub fn round_sig(v: f64) -> f64 {
    if v == 0.0 || !v.is_finite() {
        return v;
    }
    format!("{v:.8e}").parse().unwrap_or(v)
}

/// Assembles an instance from station records and a demand model.
pub fn build_instance(
    records: &[StationRecord],
    demand: &DemandModel,
    fleet: &FleetConfig,
) -> Result<ProblemInstance, IngestError> {
    let n = records.len();
    if n == 0 {
        return Err(IngestError::Config("no stations".into()));
    }
    if demand.demand.n_stations() != n {
        return Err(IngestError::Config(format!(
            "demand covers {} stations, expected {n}",
            demand.demand.n_stations()
        )));
    }
    let h = demand.horizon();
    let stations: Vec<Station> = records
        .iter()
        .map(|r| Station {
            id: r.id.clone(),
            latitude: r.latitude,
            longitude: r.longitude,
            capacity: r.capacity,
            initial_bikes: (fleet.fill_ratio * r.capacity as f64).round().clamp(0.0, r.capacity as f64) as u32,
        })
        .collect();
    let dist: Vec<Vec<f64>> = distance_matrix(&stations)
        .into_iter()
        .map(|row| row.into_iter().map(round_sig).collect())
        .collect();
    let mut revenue = tensor3(n, n, h, 0.0);
    for s in 0..n {
        for s2 in 0..n {
            let r = round_sig(fleet.base_fare + fleet.fare_per_km * dist[s][s2]);
            revenue[s][s2].iter_mut().for_each(|v| *v = r);
        }
    }
    let routing_cost = dist.iter().map(|row| row.iter().map(|&d| round_sig(fleet.routing_cost_per_km * d)).collect()).collect();
    let vehicles = (0..fleet.n_vehicles)
        .map(|i| Vehicle {
            id: format!("v{i}"),
            capacity: fleet.vehicle_capacity,
            initial_station: stations[i * n / fleet.n_vehicles.max(1)].id.clone(),
            initial_load: 0,
        })
        .collect();
    let trailers = (0..fleet.n_trailers)
        .map(|i| Trailer { id: format!("w{i}"), capacity: fleet.trailer_capacity, max_distance_km: fleet.trailer_range_km })
        .collect();
    let inst = ProblemInstance {
        stations,
        vehicles,
        trailers,
        demand: DemandTensor(demand.demand.0.iter().map(|m| m.iter().map(|r| r.iter().map(|&v| round_sig(v)).collect()).collect()).collect()),
        economics: EconomicModel {
            revenue,
            routing_cost,
            xi: fleet.xi,
            budget: fleet.budget,
            budget_scope: BudgetScope::Horizon,
        },
        distances: dist,
        horizon: h,
        epoch_minutes: demand.epoch_minutes,
        initial_arrivals: Vec::new(),
    };
    inst.validate()?;
    Ok(inst)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticConfig {
    pub n_stations: usize,
    pub horizon: usize,
    pub epoch_minutes: u32,
    /// Mean departures per station and epoch at the demand peak.
    pub demand_intensity: f64,
    /// Side of the square service area.
    pub extent_km: f64,
    /// Destinations per origin station.
    pub destinations: usize,
    pub seed: u64,
    pub fleet: FleetConfig,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            n_stations: 60,
            horizon: 6,
            epoch_minutes: 30,
            demand_intensity: 2.0,
            extent_km: 6.0,
            destinations: 3,
            seed: 0,
            fleet: FleetConfig::default(),
        }
    }
}

const CENTER: (f64, f64) = (42.36, -71.06);
const KM_PER_DEG_LAT: f64 = 111.195;

/// Parametric city: uniform station placement, capacities in `[15, 40]` at
/// half fill, and morning-commute demand flowing toward the station nearest
/// the center of the area.
pub fn generate_synthetic(config: &SyntheticConfig) -> Result<ProblemInstance, IngestError> {
    let n = config.n_stations;
    if n == 0 {
        return Err(IngestError::Config("n_stations must be positive".into()));
    }
    if config.horizon == 0 {
        return Err(IngestError::Config("horizon must be positive".into()));
    }
    if !(config.extent_km > 0.0) || !(config.demand_intensity >= 0.0) {
        return Err(IngestError::Config("extent and intensity must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let km_per_deg_lon = KM_PER_DEG_LAT * CENTER.0.to_radians().cos();
    let half = config.extent_km / 2.0;
    let records: Vec<StationRecord> = (0..n)
        .map(|i| {
            let dy = rng.gen_range(-half..half);
            let dx = rng.gen_range(-half..half);
            StationRecord {
                id: format!("S{i:03}"),
                name: format!("Station {i}"),
                latitude: round_sig(CENTER.0 + dy / KM_PER_DEG_LAT),
                longitude: round_sig(CENTER.1 + dx / km_per_deg_lon),
                capacity: rng.gen_range(15..=40),
            }
        })
        .collect();

    let hub = (0..n)
        .min_by(|&a, &b| {
            let da = haversine_km((records[a].latitude, records[a].longitude), CENTER);
            let db = haversine_km((records[b].latitude, records[b].longitude), CENTER);
            da.total_cmp(&db)
        })
        .expect("non-empty");
    let to_hub: Vec<f64> = records
        .iter()
        .map(|r| haversine_km((r.latitude, r.longitude), (records[hub].latitude, records[hub].longitude)))
        .collect();

    let h = config.horizon;
    let mut f = tensor3(n, n, h, 0.0);
    if n > 1 {
        for s in 0..n {
            // Destinations drawn without replacement, weighted toward the hub.
            let mut pool: Vec<usize> = (0..n).filter(|&o| o != s).collect();
            let mut picks = Vec::new();
            for _ in 0..config.destinations.min(pool.len()) {
                let w: Vec<f64> = pool.iter().map(|&o| 1.0 / (1.0 + to_hub[o])).collect();
                let mut r = rng.gen_range(0.0..w.iter().sum::<f64>());
                let mut k = pool.len() - 1;
                for (i, wi) in w.iter().enumerate() {
                    if r < *wi {
                        k = i;
                        break;
                    }
                    r -= wi;
                }
                picks.push((pool.remove(k), rng.gen_range(0.5..1.5)));
            }
            let total: f64 = picks.iter().map(|p| p.1).sum();
            for t in 0..h {
                let phase = (t as f64 + 0.5) / h as f64;
                let peak = 0.5 + (std::f64::consts::PI * phase).sin();
                for &(o, share) in &picks {
                    f[s][o][t] = round_sig(config.demand_intensity * peak * share / total);
                }
            }
        }
    }
    let model = DemandModel::from_tensor(DemandTensor(f), config.epoch_minutes);
    build_instance(&records, &model, &config.fleet)
}

const INSTANCE_FIELDS: [&str; 9] = [
    "stations",
    "vehicles",
    "trailers",
    "demand",
    "economics",
    "distances",
    "horizon",
    "epoch_minutes",
    "initial_arrivals",
];

fn parse_error(text: &str, e: &serde_json::Error) -> IngestError {
    if e.is_eof() {
        return IngestError::Parse { offset: text.len(), message: e.to_string() };
    }
    let line_start: usize = text.split_inclusive('\n').take(e.line().saturating_sub(1)).map(str::len).sum();
    IngestError::Parse { offset: line_start + e.column().saturating_sub(1), message: e.to_string() }
}

fn canonical_value(v: Value) -> Value {
    match v {
        Value::Number(n) if n.is_f64() => {
            let x = round_sig(n.as_f64().expect("f64"));
            serde_json::Number::from_f64(x).map_or(Value::Null, Value::Number)
        }
        Value::Array(a) => Value::Array(a.into_iter().map(canonical_value).collect()),
        Value::Object(m) => Value::Object(m.into_iter().map(|(k, v)| (k, canonical_value(v))).collect()),
        other => other,
    }
}

/// Canonical text: sorted keys, floats at 9 significant digits, schema tag.
pub fn to_canonical_json(instance: &ProblemInstance) -> String {
    let mut v = serde_json::to_value(instance).expect("instance serializes");
    if let Value::Object(m) = &mut v {
        m.insert("schema".into(), Value::String(SCHEMA.into()));
    }
    // serde_json's default map is ordered by key.
    let mut text = serde_json::to_string_pretty(&canonical_value(v)).expect("value serializes");
    text.push('\n');
    text
}

pub fn from_json_str(text: &str) -> Result<ProblemInstance, IngestError> {
    let v: Value = serde_json::from_str(text).map_err(|e| parse_error(text, &e))?;
    let Value::Object(mut m) = v else {
        return Err(IngestError::Parse { offset: 0, message: "top level is not an object".into() });
    };
    let found = m.remove("schema");
    match &found {
        Some(Value::String(s)) if s == SCHEMA => {}
        Some(Value::String(s)) => return Err(IngestError::Schema { expected: SCHEMA.into(), found: s.clone() }),
        Some(v) => return Err(IngestError::Schema { expected: SCHEMA.into(), found: v.to_string() }),
        None => return Err(IngestError::Schema { expected: SCHEMA.into(), found: "nothing".into() }),
    }
    let unknown: Vec<String> = m.keys().filter(|k| !INSTANCE_FIELDS.contains(&k.as_str())).cloned().collect();
    if !unknown.is_empty() {
        return Err(IngestError::UnknownFields(unknown));
    }
    let inst: ProblemInstance =
        serde_json::from_value(Value::Object(m)).map_err(|e| IngestError::Parse { offset: 0, message: e.to_string() })?;
    inst.validate()?;
    Ok(inst)
}

pub fn save_instance(instance: &ProblemInstance, path: &Path) -> Result<(), IngestError> {
    fs::write(path, to_canonical_json(instance)).map_err(io_err(path))
}

pub fn load_instance(path: &Path) -> Result<ProblemInstance, IngestError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    from_json_str(&text)
}

/// Station index by id, for joining trip files to station files.
pub fn station_index(records: &[StationRecord]) -> HashMap<&str, usize> {
    records.iter().enumerate().map(|(i, r)| (r.id.as_str(), i)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SyntheticConfig {
        SyntheticConfig { n_stations: 8, horizon: 3, seed: 11, ..SyntheticConfig::default() }
    }

    #[test]
    fn station_csv() {
        let m = ColumnMapping::default();
        let empty = read_stations_from("id,name,latitude,longitude,capacity\n".as_bytes(), &m).unwrap();
        assert!(empty.records.is_empty() && empty.rows_read == 0);
        let one = read_stations_from(
            "id,name,latitude,longitude,capacity\nA3,Park St,42.356,-71.062,19\n".as_bytes(),
            &m,
        )
        .unwrap();
        assert_eq!(
            one.records,
            vec![StationRecord { id: "A3".into(), name: "Park St".into(), latitude: 42.356, longitude: -71.062, capacity: 19 }]
        );
        let bad = read_stations_from(
            "id,name,latitude,longitude,capacity\nA3,x,42,-71,abc\nB1,y,42,-71,4\n".as_bytes(),
            &m,
        )
        .unwrap();
        assert_eq!(bad.records.len(), 1);
        assert_eq!(bad.diagnostics.len(), 1);
        assert_eq!(bad.diagnostics[0].row, 1);
        assert_eq!(bad.records.len() + bad.diagnostics.len(), bad.rows_read);
    }

    #[test]
    fn missing_column_is_named() {
        let err = read_stations_from("id,name,latitude,capacity\n".as_bytes(), &ColumnMapping::default()).unwrap_err();
        assert!(matches!(err, IngestError::MissingColumn(c) if c == "longitude"));
    }

    #[test]
    fn trip_csv_with_mapping() {
        let mut map = BTreeMap::new();
        map.insert("start_time".to_string(), "starttime".to_string());
        map.insert("end_time".to_string(), "stoptime".to_string());
        map.insert("start_station".to_string(), "start station id".to_string());
        map.insert("end_station".to_string(), "end station id".to_string());
        let text = "tripduration,starttime,stoptime,start station id,end station id\n\
                    600,2017-06-01 07:01:02,2017-06-01 07:11:02,3,7\n\
                    600,yesterday,2017-06-01 07:11:02,3,7\n\
                    600,2017-06-01T08:00:00Z,2017-06-01T08:10:00.5,7,3\n";
        let t = read_trips_from(text.as_bytes(), &ColumnMapping(map)).unwrap();
        assert_eq!(t.records.len(), 2);
        assert_eq!(t.diagnostics.len(), 1);
        assert_eq!(t.records[0].start_station, "3");
        assert_eq!(t.records[1].start_time, parse_timestamp("2017-06-01 08:00:00").unwrap());
    }

    #[test]
    fn synthetic_shape_and_determinism() {
        let cfg = SyntheticConfig { n_stations: 60, seed: 4, ..SyntheticConfig::default() };
        let a = generate_synthetic(&cfg).unwrap();
        assert_eq!((a.n_stations(), a.n_vehicles(), a.n_trailers()), (60, 2, 7));
        assert!(a.stations.iter().all(|s| (15..=40).contains(&s.capacity)));
        assert_eq!(to_canonical_json(&a), to_canonical_json(&generate_synthetic(&cfg).unwrap()));
        assert!(generate_synthetic(&SyntheticConfig { n_stations: 0, ..cfg }).is_err());
    }

    #[test]
    fn json_round_trip() {
        let inst = generate_synthetic(&small()).unwrap();
        let text = to_canonical_json(&inst);
        let back = from_json_str(&text).unwrap();
        assert_eq!(back, inst);
        assert_eq!(to_canonical_json(&back), text);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("inst.json");
        save_instance(&inst, &path).unwrap();
        assert_eq!(load_instance(&path).unwrap(), inst);
    }

    #[test]
    fn json_errors() {
        let inst = generate_synthetic(&small()).unwrap();
        let text = to_canonical_json(&inst);
        let extra = text.replacen('{', "{\n  \"colour\": 1,", 1);
        assert!(matches!(from_json_str(&extra), Err(IngestError::UnknownFields(f)) if f == vec!["colour".to_string()]));
        let truncated = &text[..text.len() / 2];
        match from_json_str(truncated) {
            Err(IngestError::Parse { offset, .. }) => assert_eq!(offset, truncated.len()),
            other => panic!("{other:?}"),
        }
        let old = text.replace(SCHEMA, "drrpvt-instance/0");
        assert!(matches!(from_json_str(&old), Err(IngestError::Schema { found, .. }) if found == "drrpvt-instance/0"));
    }
}
