use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::{json, Value};

const BIN: &str = env!("CARGO_BIN_EXE_firl");

fn firl(args: &[&str]) -> Output {
    Command::new(BIN).args(args).output().expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn protocol(tau: u64) -> Value {
    json!({"n_total": 7, "m": 7, "tau": tau, "eta": 0.02,
           "epoch_len": 1500, "epochs": 500, "step_len": 250, "seed": 1})
}

fn synthetic() -> Value {
    json!({"kind": "synthetic", "dim": 10, "agents": 7, "components_per_agent": 20, "batch_size": 4, "seed": 7})
}

fn write_config(dir: &Path, name: &str, cfg: &Value) -> PathBuf {
    let p = dir.join(format!("{name}.json"));
    std::fs::write(&p, serde_json::to_string_pretty(cfg).unwrap()).unwrap();
    p
}

fn run(dir: &Path, name: &str, cfg: &Value) -> (Output, PathBuf) {
    let path = write_config(dir, name, cfg);
    let out = dir.join("runs").join(name);
    let o = firl(&["run", "--config", path.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    (o, out)
}

#[test]
fn baseline_run_writes_one_row_per_iteration() {
    let dir = tempfile::tempdir().unwrap();
    let (o, out) = run(dir.path(), "base", &json!({"protocol": protocol(1), "problem": synthetic()}));
    assert!(o.status.success(), "{}", stderr(&o));
    let metrics = std::fs::read_to_string(out.join("metrics.csv")).unwrap();
    let mut lines = metrics.lines();
    assert_eq!(lines.next().unwrap(), firl::report::METRICS_HEADER);
    assert_eq!(lines.count(), 3000);
    let summary: Value = serde_json::from_str(&std::fs::read_to_string(out.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["cost"]["ledger"]["c1"], 21000);
    assert_eq!(summary["cost"]["reconciliation"]["matches"], true);
    assert!(summary["psi1_hat"].as_f64().unwrap() > 0.0);
    let manifest: Value = serde_json::from_str(&std::fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
    assert!(manifest["files"]["metrics.csv"].as_str().unwrap().len() == 64);
}

#[test]
fn epsilon_at_the_limit_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let mut p = protocol(10);
    // ring of 7: max degree 2, so the limit is 1/3
    p["consensus"] = json!({"epsilon": 1.0 / 3.0, "rounds": 1});
    let (o, out) = run(dir.path(), "eps", &json!({"protocol": p, "topology": {"kind": "ring", "m": 7}, "problem": synthetic()}));
    assert_eq!(o.status.code(), Some(2));
    let err = stderr(&o);
    assert!(err.starts_with("error: validation:") && err.contains("epsilon out of range"), "{err}");
    assert!(!out.exists());
}

#[test]
fn disconnected_graph_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let mut p = protocol(10);
    p["consensus"] = json!({"epsilon": 0.1, "rounds": 1});
    let topo = json!({"kind": "edges", "m": 7, "edges": [[0, 1], [1, 2], [2, 0], [3, 4], [4, 5], [5, 6]]});
    let (o, _) = run(dir.path(), "split", &json!({"protocol": p, "topology": topo, "problem": synthetic()}));
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("A2 violated"), "{}", stderr(&o));
}

#[test]
fn unknown_field_and_missing_file_are_validation_errors() {
    let dir = tempfile::tempdir().unwrap();
    let (o, _) = run(dir.path(), "typo", &json!({"protocol": protocol(1), "problem": synthetic(), "extra": 1}));
    assert_eq!(o.status.code(), Some(2));
    let o = firl(&["run", "--config", dir.path().join("nope.json").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn reruns_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let mut p = protocol(10);
    p["consensus"] = json!({"epsilon": 0.14, "rounds": 1});
    p["tau_policy"] = json!({"kind": "uniform_range", "lo": 5, "hi": 10});
    let cfg = json!({"protocol": p, "topology": {"kind": "random", "m": 7, "seed": 3, "degree_range": [3, 4], "n_edges": 13},
                     "problem": synthetic()});
    let (a, out_a) = run(dir.path(), "a", &cfg);
    let (b, out_b) = run(dir.path(), "b", &cfg);
    assert!(a.status.success() && b.status.success());
    for f in ["metrics.csv", "summary.json", "topology.edges"] {
        assert_eq!(std::fs::read(out_a.join(f)).unwrap(), std::fs::read(out_b.join(f)).unwrap(), "{f}");
    }
    let first = std::fs::read(out_a.join("manifest.json")).unwrap();
    let (again, _) = run(dir.path(), "a", &cfg);
    assert!(again.status.success());
    assert_eq!(first, std::fs::read(out_a.join("manifest.json")).unwrap());

    // a different seed changes the trajectory
    let path = dir.path().join("a.json");
    let out_c = dir.path().join("runs/c");
    let c = firl(&["run", "--config", path.to_str().unwrap(), "--seed", "2", "--out", out_c.to_str().unwrap()]);
    assert!(c.status.success());
    assert_ne!(std::fs::read(out_a.join("metrics.csv")).unwrap(), std::fs::read(out_c.join("metrics.csv")).unwrap());
}

/// Ten configurations covering every cost column of the comparison table.
#[test]
fn table_over_cost_rows() {
    let dir = tempfile::tempdir().unwrap();
    let sparse = json!({"kind": "random", "m": 7, "seed": 8, "degree_range": [3, 4], "n_edges": 13});
    let dense = json!({"kind": "random", "m": 7, "seed": 0, "degree_range": [4, 6], "n_edges": 16});
    let per_agent = |v: &[u64]| json!({"kind": "per_agent", "values": v});
    let gossip = |p: &mut Value, e: u64| p["consensus"] = json!({"epsilon": 0.12, "rounds": e});

    let mut rows: Vec<(String, Value, Option<Value>, [u64; 4])> = Vec::new();
    for (tau, c1) in [(1, 21000), (10, 2100), (15, 1400)] {
        rows.push((format!("r{tau:02}"), protocol(tau), None, [c1, 21000, 0, 0]));
    }
    for (name, v, c2) in [
        ("r15a", vec![15, 15, 14, 13, 13, 13, 12], 19000),
        ("r15b", vec![13, 13, 12, 12, 11, 10, 10], 16200),
        ("r15c", vec![10, 10, 9, 9, 9, 8, 8], 12600),
    ] {
        let mut p = protocol(15);
        p["tau_policy"] = per_agent(&v);
        rows.push((name.into(), p, None, [1400, c2, 0, 0]));
    }
    for (name, topo, e, w) in [("s1", &sparse, 1, 78000), ("d1", &dense, 1, 96000), ("s2", &sparse, 2, 156000)] {
        let mut p = protocol(10);
        gossip(&mut p, e);
        rows.push((name.into(), p, Some(topo.clone()), [2100, 21000, w, w]));
    }
    let mut p = protocol(10);
    gossip(&mut p, 1);
    p["tau_policy"] = per_agent(&[10, 9, 8, 7, 7, 6, 5]);
    rows.push(("z".into(), p, Some(sparse.clone()), [2100, 15600, 78000, 78000]));

    for (name, p, topo, _) in &rows {
        let mut cfg = json!({"label": name, "protocol": p, "problem": synthetic()});
        if let Some(t) = topo {
            cfg["topology"] = t.clone();
        }
        let (o, _) = run(dir.path(), name, &cfg);
        assert!(o.status.success(), "{name}: {}", stderr(&o));
    }

    let pattern = format!("{}/runs/*", dir.path().display());
    let o = firl(&["table", "--glob", &pattern]);
    assert!(o.status.success());
    let text = String::from_utf8(o.stdout).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next().unwrap(), firl::report::TABLE_HEADER);
    let table: Vec<Vec<String>> = lines.map(|l| l.split(',').map(String::from).collect()).collect();
    assert_eq!(table.len(), rows.len());
    rows.sort_by(|a, b| a.0.cmp(&b.0));
    for (cells, (name, _, _, cost)) in table.iter().zip(&rows) {
        assert_eq!(&cells[0], name);
        let got: Vec<u64> = cells[4..8].iter().map(|c| c.parse().unwrap()).collect();
        assert_eq!(got, cost.to_vec(), "{name}");
        assert!(cells[8].parse::<f64>().unwrap() > 0.0);
    }

    let o = firl(&["table", "--glob", &pattern, "--format", "json"]);
    let rows_json: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(rows_json.as_array().unwrap().len(), 10);
}

#[test]
fn empty_glob_gives_header_only() {
    let dir = tempfile::tempdir().unwrap();
    let o = firl(&["table", "--glob", &format!("{}/nothing/*", dir.path().display())]);
    assert!(o.status.success());
    assert_eq!(String::from_utf8(o.stdout).unwrap(), format!("{}\n", firl::report::TABLE_HEADER));
}

#[test]
fn bound_and_topology_commands() {
    let o = firl(&["bound", "--eta", "0.01,0.02", "--L", "2", "--sigma2", "4", "--m", "7", "--tau", "10", "--K", "3000"]);
    assert!(o.status.success());
    assert_eq!(String::from_utf8(o.stdout).unwrap().lines().count(), 3);

    let o = firl(&["bound", "--eta", "0", "--L", "2", "--sigma2", "4", "--m", "7", "--tau", "10", "--K", "3000"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("division by zero"));

    let o = firl(&["topology", "--m", "7", "--edges", "13", "--seed", "8"]);
    assert!(o.status.success());
    let text = String::from_utf8(o.stdout).unwrap();
    assert!(text.starts_with("# m=7 edges=13 degree_sum=26"));
    assert_eq!(text.lines().count(), 14);
}
