use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

const SINGLE: &str = r#"{
  "network": {"classes": 1, "nodes": [{"low": [0]}]},
  "distributions": {
    "arrival": [{"kind": "exponential", "mean": 1.0}],
    "service": [[{"kind": "exponential", "mean": 1.0}]]
  },
  "scaling": {"ks": [100, 400], "alpha": [1.0], "sigma": [[1.0]], "alpha_offset": [0.0], "sigma_offset": [[1.0]]},
  "experiment": {"horizon": 4.0, "replications": 3, "seed": 9, "probes": [1.0, 3.0],
                 "events": [{"node": 1, "level": 0.5}]}
}"#;

fn critload(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_critload")).args(args).output().expect("binary runs")
}

fn write_config(dir: &TempDir, name: &str, text: &str) -> PathBuf {
    let p = dir.path().join(name);
    std::fs::write(&p, text).unwrap();
    p
}

fn arg(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn check_passes_on_small_suite() {
    let o = critload(&["check", "--instances", "20", "--seed", "3"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let out = stdout(&o);
    assert!(out.starts_with("check,worst,tolerance,passed"));
    assert_eq!(out.lines().count(), 13);
    assert!(out.lines().skip(1).all(|l| l.ends_with(",true")), "{out}");
}

#[test]
fn missing_config_is_a_validation_failure() {
    let o = critload(&["simulate", "--config", "/nonexistent/critload.json"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn schema_error_names_the_field() {
    let dir = TempDir::new().unwrap();
    let p = write_config(&dir, "bad.json", &SINGLE.replace("\"exponential\", \"mean\": 1.0}],\n    \"service\"", "\"weibull\", \"mean\": 1.0}],\n    \"service\""));
    let o = critload(&["simulate", "--config", arg(&p)]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("distributions.arrival[0].kind"), "{}", stderr(&o));
}

#[test]
fn simulate_writes_long_csv() {
    let dir = TempDir::new().unwrap();
    let p = write_config(&dir, "single.json", SINGLE);
    let out = dir.path().join("out.csv");
    let o = critload(&["simulate", "--config", arg(&p), "--output", arg(&out)]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let text = std::fs::read_to_string(&out).unwrap();
    assert_eq!(text.lines().next().unwrap(), "k,rep,node,metric,value");
    // 2 k values, 3 replications, 6 metrics plus 2 probes
    assert_eq!(text.lines().count(), 1 + 2 * 3 * 8);
    let again = critload(&["simulate", "--config", arg(&p)]);
    assert_eq!(stdout(&again), text);
}

#[test]
fn couple_reports_one_row_per_k_and_node() {
    let dir = TempDir::new().unwrap();
    let p = write_config(&dir, "single.json", SINGLE);
    let o = critload(&["couple", "--config", arg(&p)]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let out = stdout(&o);
    assert_eq!(out.lines().count(), 3);
    assert!(out.lines().nth(1).unwrap().starts_with("100,3,1,"));
}

#[test]
fn rate_matches_single_queue_value() {
    let dir = TempDir::new().unwrap();
    let p = write_config(&dir, "single.json", SINGLE);
    let o = critload(&["rate", "--config", arg(&p), "--node", "1", "--level", "1"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let out = stdout(&o);
    let first = out.lines().next().unwrap();
    let rate: f64 = first.split_whitespace().nth(1).unwrap().trim_start_matches("rate=").parse().unwrap();
    // drift 1, variance 2, level 1
    assert!((rate - 1.0).abs() < 0.02, "{first}");
    assert_eq!(out.lines().nth(1).unwrap(), "t,z1,w1");
    let o = critload(&["rate", "--config", arg(&p), "--node", "2", "--level", "1"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn tail_and_stationarity_validate_their_inputs() {
    let dir = TempDir::new().unwrap();
    let p = write_config(&dir, "single.json", SINGLE);
    let o = critload(&["tail", "--config", arg(&p)]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert_eq!(stdout(&o).lines().count(), 3);
    let none = write_config(&dir, "none.json", &SINGLE.replace(",\n                 \"events\": [{\"node\": 1, \"level\": 0.5}]", ""));
    assert_eq!(critload(&["tail", "--config", arg(&none)]).status.code(), Some(1));
    // no warm-up window
    assert_eq!(critload(&["stationarity", "--config", arg(&p)]).status.code(), Some(1));
    let warm = write_config(&dir, "warm.json", &SINGLE.replace("\"horizon\": 4.0,", "\"horizon\": 4.0, \"warmup\": 4.0,"));
    let o = critload(&["stationarity", "--config", arg(&warm)]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(stdout(&o).lines().nth(1).unwrap().starts_with("100,1,1,3,3,"));
}

#[test]
fn thread_count_is_validated() {
    let o = Command::new(env!("CARGO_BIN_EXE_critload"))
        .args(["check", "--instances", "2"])
        .env("CRITLOAD_THREADS", "many")
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(1));
    let o = Command::new(env!("CARGO_BIN_EXE_critload"))
        .args(["check", "--instances", "2"])
        .env("CRITLOAD_THREADS", "2")
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
}
