use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn drrpvt(out: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_drrpvt"))
        .arg("--output-dir")
        .arg(out)
        .args(args)
        .output()
        .expect("binary runs")
}

fn paths(o: &Output) -> Vec<PathBuf> {
    String::from_utf8(o.stdout.clone()).unwrap().lines().map(PathBuf::from).collect()
}

fn error_of(o: &Output) -> Value {
    let text = String::from_utf8(o.stderr.clone()).unwrap();
    let line = text.lines().last().expect("one error line");
    serde_json::from_str(line).expect("error is json")
}

fn synth(dir: &Path) -> PathBuf {
    let o = drrpvt(dir, &["--seed", "3", "synth", "--stations", "6", "--horizon", "2", "--vehicles", "1", "--trailers", "2"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let p = paths(&o);
    assert_eq!(p, vec![dir.join("instance.json")]);
    p[0].clone()
}

#[test]
fn synth_is_reproducible() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let pa = synth(a.path());
    let pb = synth(b.path());
    assert_eq!(fs::read(pa).unwrap(), fs::read(pb).unwrap());
}

#[test]
fn solvers_agree_on_a_small_instance() {
    let dir = tempfile::tempdir().unwrap();
    let inst = synth(dir.path());
    let inst = inst.to_str().unwrap();
    let mut profits = Vec::new();
    for solver in ["milp", "ldd"] {
        let o = drrpvt(dir.path(), &["solve", "--instance", inst, "--solver", solver, "--time-limit", "60"]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        let summary = paths(&o).into_iter().find(|p| p.to_str().unwrap().contains("summary_")).unwrap();
        let s: Value = serde_json::from_str(&fs::read_to_string(summary).unwrap()).unwrap();
        assert_eq!(s["violations"].as_array().unwrap().len(), 0);
        profits.push(s["profit"].as_f64().unwrap());
    }
    // The decomposition's plan can only be as good as the exact optimum.
    assert!(profits[1] <= profits[0] + 1e-6, "{profits:?}");
}

#[test]
fn restricted_ldd_leaves_the_other_fleet_idle() {
    let dir = tempfile::tempdir().unwrap();
    let inst = synth(dir.path());
    let o = drrpvt(
        dir.path(),
        &["solve", "--instance", inst.to_str().unwrap(), "--solver", "ldd", "--clustering", "--mode", "trailers"],
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let s: Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("summary_ldd_clustered_trailers.json")).unwrap())
            .unwrap();
    assert_eq!(s["vehicle_moves"], 0);
    assert_eq!(s["violations"].as_array().unwrap().len(), 0);
}

#[test]
fn simulate_all_then_report() {
    let dir = tempfile::tempdir().unwrap();
    let inst = synth(dir.path());
    let o = drrpvt(dir.path(), &["--seed", "5", "simulate", "--instance", inst.to_str().unwrap(), "--policy", "all"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(paths(&o).len(), 10);
    let r = |p: &str| dir.path().join(format!("report_{p}_seed5.json"));
    let o = drrpvt(
        dir.path(),
        &[
            "report",
            "--joint",
            r("drrpvt").to_str().unwrap(),
            "--vehicles",
            r("drrpv").to_str().unwrap(),
            "--trailers",
            r("drrpt").to_str().unwrap(),
        ],
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(
        fs::read_to_string(dir.path().join("comparison.csv")).unwrap(),
        fs::read_to_string(dir.path().join("comparison_seed5.csv")).unwrap()
    );
}

#[test]
fn ingest_fits_demand_and_reports_rejected_rows() {
    let dir = tempfile::tempdir().unwrap();
    let stations = dir.path().join("stations.csv");
    let trips = dir.path().join("trips.csv");
    fs::write(
        &stations,
        "station_id,name,lat,lon,docks\n\
         a,Alpha,42.36,-71.06,10\n\
         b,Beta,42.37,-71.05,12\n\
         c,Gamma,bad,-71.04,8\n",
    )
    .unwrap();
    fs::write(
        &trips,
        "start_time,end_time,start_station,end_station\n\
         2024-05-01 07:10:00,2024-05-01 07:25:00,a,b\n\
         2024-05-01 07:40:00,2024-05-01 07:55:00,b,a\n\
         2024-05-02 08:05:00,2024-05-02 08:20:00,a,b\n\
         2024-05-02 12:00:00,2024-05-02 12:20:00,a,b\n\
         not a time,2024-05-02 12:20:00,a,b\n",
    )
    .unwrap();
    let mapping = dir.path().join("mapping.json");
    fs::write(&mapping, r#"{"id":"station_id","latitude":"lat","longitude":"lon","capacity":"docks"}"#).unwrap();
    let out = dir.path().join("out");
    let o = drrpvt(
        &out,
        &[
            "ingest",
            "--stations",
            stations.to_str().unwrap(),
            "--trips",
            trips.to_str().unwrap(),
            "--mapping",
            mapping.to_str().unwrap(),
            "--epoch-minutes",
            "60",
            "--start-hour",
            "7",
            "--end-hour",
            "9",
        ],
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let d: Value = serde_json::from_str(&fs::read_to_string(out.join("ingest_diagnostics.json")).unwrap()).unwrap();
    assert_eq!(d["stations"]["kept"], 2);
    assert_eq!(d["stations"]["rejected"].as_array().unwrap().len(), 1);
    assert_eq!(d["trips"]["rejected"].as_array().unwrap().len(), 1);
    assert_eq!(d["fit"]["outside_window"], 1);
    assert_eq!(d["horizon"], 2);
    let inst: Value = serde_json::from_str(&fs::read_to_string(out.join("instance.json")).unwrap()).unwrap();
    // Two observed days: a->b once in the 7:00 epoch and once in the 8:00 epoch.
    assert_eq!(inst["demand"][0][1], serde_json::json!([0.5, 0.5]));
}

#[test]
fn usage_errors_exit_two_with_json() {
    let dir = tempfile::tempdir().unwrap();
    let o = drrpvt(dir.path(), &["solve", "--no-such-flag"]);
    assert_eq!(o.status.code(), Some(2));
    assert_eq!(error_of(&o)["error"]["kind"], "usage");
    assert!(o.stdout.is_empty());

    let inst = synth(dir.path());
    let o = drrpvt(dir.path(), &["solve", "--instance", inst.to_str().unwrap(), "--clustering"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn runtime_errors_exit_one_with_json() {
    let dir = tempfile::tempdir().unwrap();
    let o = drrpvt(dir.path(), &["cluster", "--instance", "/definitely/missing.json"]);
    assert_eq!(o.status.code(), Some(1));
    let e = error_of(&o);
    assert_eq!(e["error"]["kind"], "ingest");
    assert!(e["error"]["message"].as_str().unwrap().contains("missing.json"));

    let inst = synth(dir.path());
    let o = drrpvt(dir.path(), &["cluster", "--instance", inst.to_str().unwrap(), "--k", "0"]);
    assert_eq!(o.status.code(), Some(1));
    assert_eq!(error_of(&o)["error"]["kind"], "clustering");
}

#[test]
fn help_goes_to_stdout_and_succeeds() {
    let dir = tempfile::tempdir().unwrap();
    let o = drrpvt(dir.path(), &["--help"]);
    assert!(o.status.success());
    assert!(String::from_utf8_lossy(&o.stdout).contains("simulate"));
}
