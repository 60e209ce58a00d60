use std::path::Path;
use std::process::{Command, Output};
use std::time::Instant;

use serde_json::Value;

fn mixsdp(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mixsdp")).args(args).current_dir(dir).output().unwrap()
}

fn json(bytes: &[u8]) -> Value {
    serde_json::from_slice(bytes).unwrap_or_else(|e| panic!("{e}: {}", String::from_utf8_lossy(bytes)))
}

fn read_json(path: &Path) -> Value {
    json(&std::fs::read(path).unwrap())
}

/// Drops wall-clock fields so that two runs can be compared exactly.
fn without_timings(v: &mut Value) {
    match v {
        Value::Object(map) => {
            map.retain(|k, _| !k.ends_with("seconds"));
            map.values_mut().for_each(without_timings);
        }
        Value::Array(items) => items.iter_mut().for_each(without_timings),
        _ => {}
    }
}

#[test]
fn gen_is_byte_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    for name in ["a.csv", "b.csv"] {
        let out = mixsdp(&["gen", "--k", "3", "--samples", "400", "--seed", "9", "--out", name], dir.path());
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    }
    let a = std::fs::read(dir.path().join("a.csv")).unwrap();
    let b = std::fs::read(dir.path().join("b.csv")).unwrap();
    assert_eq!(a, b);
    let truth_a = &read_json(&dir.path().join("a.csv.json"))["result"]["truth"];
    let truth_b = &read_json(&dir.path().join("b.csv.json"))["result"]["truth"];
    assert_eq!(truth_a, truth_b);
    assert_eq!(truth_a["means"].as_array().unwrap().len(), 3);
}

#[test]
fn gen_with_one_component_writes_one_label() {
    let dir = tempfile::tempdir().unwrap();
    let out = mixsdp(&["gen", "--k", "1", "--samples", "200", "--out", "one.csv"], dir.path());
    assert!(out.status.success());
    let text = std::fs::read_to_string(dir.path().join("one.csv")).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("x1,x2,label"));
    let labels: Vec<&str> = lines.map(|l| l.rsplit(',').next().unwrap()).collect();
    assert_eq!(labels.len(), 200);
    assert!(labels.iter().all(|l| *l == "0"));
}

#[test]
fn fit_of_a_single_gaussian_finds_one_component() {
    let dir = tempfile::tempdir().unwrap();
    assert!(mixsdp(&["gen", "--k", "1", "--samples", "2000", "--seed", "5", "--out", "one.csv"], dir.path())
        .status
        .success());
    let out = mixsdp(&["fit", "--data", "one.csv", "--header", "--labels", "--order", "3"], dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let report = json(&out.stdout);
    assert_eq!(report["result"]["khat"], 1);
    assert_eq!(report["result"]["components"].as_array().unwrap().len(), 1);
    assert_eq!(report["schema_version"], 1);
    assert_eq!(report["config"]["order"], 3);

    let truth = &read_json(&dir.path().join("one.csv.json"))["result"]["truth"];
    let mean = report["result"]["components"][0]["mean"].as_array().unwrap();
    for (m, t) in mean.iter().zip(truth["means"][0].as_array().unwrap()) {
        assert!((m.as_f64().unwrap() - t.as_f64().unwrap()).abs() < 0.02);
    }
}

#[test]
fn malformed_csv_is_an_input_error() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("bad.csv"), "0.1,0.2\n0.3,oops\n").unwrap();
    let out = mixsdp(&["fit", "--data", "bad.csv"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    let record = json(&out.stderr);
    assert_eq!(record["error"]["kind"], "input");
    assert_eq!(record["exit_code"], 2);
    assert_eq!(record["command"], "fit");

    let missing = mixsdp(&["project", "--data", "absent.csv"], dir.path());
    assert_eq!(missing.status.code(), Some(2));
}

#[test]
fn unknown_config_fields_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("c.json"), r#"{"order": 3, "ordr": 4}"#).unwrap();
    let out = mixsdp(&["fit", "--config", "c.json"], dir.path());
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn project_reports_ties_and_constant_coordinates() {
    let dir = tempfile::tempdir().unwrap();
    // first coordinate: two separated groups; second: constant
    let mut text = String::new();
    for i in 0..400 {
        let centre = if i % 2 == 0 { 0.2 } else { 0.8 };
        let jitter = ((i * 37) % 101) as f64 / 101.0 - 0.5;
        text.push_str(&format!("{},{}\n", centre + 0.1 * jitter, 0.5));
    }
    std::fs::write(dir.path().join("p.csv"), text).unwrap();
    let out = mixsdp(&["project", "--data", "p.csv"], dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let r = &json(&out.stdout)["result"];
    let coords = r["coordinates"].as_array().unwrap();
    assert_eq!(coords[1]["khat"], 1);
    assert_eq!(coords[1]["constant"], true);
    assert_eq!(coords[0]["constant"], false);
    let k0 = coords[0]["khat"].as_u64().unwrap();
    assert!(k0 > 1);
    assert_eq!(r["tie"], true);
    assert!(r["mode"].is_null());
    let mut expected = vec![1, k0];
    expected.sort();
    let candidates: Vec<u64> = r["mode_candidates"].as_array().unwrap().iter().map(|v| v.as_u64().unwrap()).collect();
    assert_eq!(candidates, expected);
}

#[test]
fn bench_smoke_run() {
    let dir = tempfile::tempdir().unwrap();
    let started = Instant::now();
    let out = mixsdp(
        &["bench", "--mixtures", "1", "--repeats", "2", "--samples", "300", "--out", "b.json", "--runs-csv", "runs.csv"],
        dir.path(),
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(started.elapsed().as_secs() < 60);
    let report = read_json(&dir.path().join("b.json"));
    let mixture = &report["result"]["mixtures"][0];
    let runs = mixture["runs"].as_array().unwrap();
    // two random runs and two extracted runs for each of k-means and EM
    assert_eq!(runs.len(), 8);
    assert_eq!(mixture["kmeans"]["random_iterations"]["count"], 2);
    let csv = std::fs::read_to_string(dir.path().join("runs.csv")).unwrap();
    assert_eq!(csv.lines().count(), 9);
    assert!(report["result"]["summary"]["kmeans_w2"]["fraction_better"].is_number());
}

#[test]
fn report_config_reproduces_the_result() {
    let dir = tempfile::tempdir().unwrap();
    assert!(mixsdp(&["gen", "--samples", "600", "--seed", "2", "--out", "m.csv"], dir.path()).status.success());
    let first = mixsdp(
        &["fit", "--data", "m.csv", "--header", "--labels", "--order", "3", "--seed", "4", "--out", "r1.json"],
        dir.path(),
    );
    assert!(first.status.success());
    assert!(first.stdout.is_empty());
    let again = mixsdp(&["fit", "--config", "r1.json", "--out", "r2.json"], dir.path());
    assert!(again.status.success(), "{}", String::from_utf8_lossy(&again.stderr));
    let mut a = read_json(&dir.path().join("r1.json"));
    let mut b = read_json(&dir.path().join("r2.json"));
    assert_eq!(a["seed"], 4);
    assert_eq!(a["config"]["order"], b["config"]["order"]);
    without_timings(&mut a["result"]);
    without_timings(&mut b["result"]);
    assert_eq!(a["result"], b["result"]);
}

#[test]
fn fit_writes_density_curves() {
    let dir = tempfile::tempdir().unwrap();
    assert!(mixsdp(&["gen", "--samples", "600", "--seed", "3", "--out", "m.csv"], dir.path()).status.success());
    let out = mixsdp(
        &["fit", "--data", "m.csv", "--header", "--labels", "--order", "3", "--density-csv", "plots/density.csv"],
        dir.path(),
    );
    assert!(out.status.success());
    let text = std::fs::read_to_string(dir.path().join("plots/density.csv")).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("coordinate,x,density"));
    let rows: Vec<Vec<f64>> = lines.map(|l| l.split(',').map(|c| c.parse().unwrap()).collect()).collect();
    assert_eq!(rows.len(), 400);
    assert!(rows.iter().all(|r| r[2] >= 0.0 && r[2].is_finite()));
}
