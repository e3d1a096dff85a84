use condex::logistic::{logistic_sample, LogisticSpec};
use serde_json::Value;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::OnceLock;
use tempfile::TempDir;

const SITES: [&str; 3] = ["north", "east", "south"];

fn condex() -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_condex"));
    for (key, _) in std::env::vars() {
        if key.starts_with("CONDEX_") {
            cmd.env_remove(key);
        }
    }
    cmd
}

fn run(cmd: &mut Command) -> Output {
    cmd.output().expect("binary runs")
}

fn ok(cmd: &mut Command) -> Output {
    let out = run(cmd);
    assert!(
        out.status.success(),
        "status {:?}\nstdout: {}\nstderr: {}",
        out.status,
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn write_logistic_csv(path: &Path, n: usize, seed: u64) {
    let u = logistic_sample(&LogisticSpec::new(SITES.len(), 0.6).unwrap(), n, seed).unwrap();
    let mut text = SITES.join(",") + "\n";
    for r in 0..n {
        let row: Vec<String> = (0..SITES.len())
            .map(|c| format!("{}", 5.0 + c as f64 - 2.0 * (-u[(r, c)].ln()).ln()))
            .collect();
        writeln!(text, "{}", row.join(",")).unwrap();
    }
    std::fs::write(path, text).unwrap();
}

/// Data and a fitted model shared by the tests.
struct Fixture {
    _dir: TempDir,
    data: PathBuf,
    model: PathBuf,
}

fn fixture() -> &'static Fixture {
    static F: OnceLock<Fixture> = OnceLock::new();
    F.get_or_init(|| {
        let dir = TempDir::new().unwrap();
        let data = dir.path().join("data.csv");
        let model = dir.path().join("model.json");
        write_logistic_csv(&data, 4000, 1);
        ok(condex()
            .args(["fit", "--data"])
            .arg(&data)
            .arg("--out")
            .arg(&model));
        Fixture { _dir: dir, data, model }
    })
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn fit_writes_a_loadable_model() {
    let f = fixture();
    let model = read_json(&f.model);
    assert_eq!(model["site_ids"], serde_json::json!(SITES));
    let out = ok(condex().args(["summary", "--data"]).arg(&f.data).arg("--model").arg(&f.model));
    let s: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(s["data"]["n_rows"], 4000);
    assert_eq!(s["data"]["data_usage_efficiency"], 100.0);
    assert_eq!(s["model"]["conditionals"].as_array().unwrap().len(), 3);
}

#[test]
fn simulate_writes_events_and_sidecar() {
    let f = fixture();
    let dir = TempDir::new().unwrap();
    let events = dir.path().join("events.csv");
    ok(condex()
        .args(["simulate", "--p", "0.99", "--n", "500", "--seed", "4", "--model"])
        .arg(&f.model)
        .arg("--out")
        .arg(&events));
    let text = std::fs::read_to_string(&events).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next().unwrap(), "cond_site,north,east,south");
    let rows: Vec<&str> = lines.collect();
    assert_eq!(rows.len(), 500);
    let meta = read_json(&dir.path().join("events.meta.json"));
    assert_eq!(meta["n"], 500);
    assert_eq!(meta["seed"], 4);
    let counts: u64 = meta["cond_site_counts"].as_object().unwrap().values().map(|v| v.as_u64().unwrap()).sum();
    assert_eq!(counts, 500);

    // same seed, same events
    let again = dir.path().join("again.csv");
    ok(condex()
        .args(["simulate", "--p", "0.99", "--n", "500", "--seed", "4", "--model"])
        .arg(&f.model)
        .arg("--out")
        .arg(&again));
    assert_eq!(text, std::fs::read_to_string(&again).unwrap());
}

#[test]
fn conditional_simulation_exceeds_the_level_at_its_site() {
    let f = fixture();
    let dir = TempDir::new().unwrap();
    let events = dir.path().join("events.csv");
    ok(condex()
        .args(["simulate", "--p", "0.99", "--n", "300", "--seed", "5", "--site", "east", "--scale", "laplace", "--model"])
        .arg(&f.model)
        .arg("--out")
        .arg(&events));
    let level = -(2.0f64 * 0.01).ln();
    for line in std::fs::read_to_string(&events).unwrap().lines().skip(1) {
        let cells: Vec<&str> = line.split(',').collect();
        assert_eq!(cells[0], "east");
        assert!(cells[2].parse::<f64>().unwrap() > level, "{line}");
    }
}

#[test]
fn tau_is_read_from_the_seed_environment_variable() {
    let f = fixture();
    let dir = TempDir::new().unwrap();
    let out_csv = dir.path().join("tau.csv");
    let stdout = ok(condex()
        .args(["tau", "--site", "north", "--p", "0.99,0.999", "--n-sim", "4000", "--model"])
        .arg(&f.model)
        .arg("--out")
        .arg(&out_csv)
        .env("CONDEX_SEED", "12"))
    .stdout;
    let text = String::from_utf8(stdout).unwrap();
    let taus: Vec<f64> = text.lines().skip(1).map(|l| l.rsplit(',').next().unwrap().parse().unwrap()).collect();
    assert_eq!(taus.len(), 4);
    assert!(taus.iter().all(|t| (0.0..=1.0).contains(t)));
    assert!(taus[0] >= taus[1] && taus[2] >= taus[3]);

    // the exact-count distribution sums to one at each level
    let tidy = std::fs::read_to_string(&out_csv).unwrap();
    for p in ["0.99", "0.999"] {
        let total: f64 = tidy
            .lines()
            .skip(1)
            .filter(|l| l.split(',').nth(1) == Some(p))
            .map(|l| l.rsplit(',').next().unwrap().parse::<f64>().unwrap())
            .sum();
        assert!((total - 1.0).abs() < 1e-12, "{p}: {total}");
    }
}

#[test]
fn joint_probability_from_event_file() {
    let f = fixture();
    let dir = TempDir::new().unwrap();
    let event = dir.path().join("event.json");
    std::fs::write(
        &event,
        r#"{"cond_site": "north", "p_levels": [0.99, 0.95, null], "method": "both", "n": 20000}"#,
    )
    .unwrap();
    let out = ok(condex()
        .args(["jointprob", "--seed", "3", "--qmc-points", "1024", "--model"])
        .arg(&f.model)
        .arg("--event")
        .arg(&event));
    let v: Value = serde_json::from_slice(&out.stdout).unwrap();
    let mc = v["monte_carlo"]["estimate"].as_f64().unwrap();
    let int = v["integral"]["estimate"].as_f64().unwrap();
    assert!(int > 0.0 && int < 0.01, "{v}");
    assert!((mc - int).abs() < 0.25 * int, "mc {mc} integral {int}");
    assert!(v["levels_laplace"][2].is_null());
}

#[test]
fn configuration_errors_exit_with_two() {
    let f = fixture();
    let out = run(condex()
        .args(["tau", "--site", "north", "--p", "0.99", "--seed", "1", "--dependence-quantile", "1.5", "--model"])
        .arg(&f.model));
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error:"));

    let out = run(condex()
        .args(["tau", "--site", "nowhere", "--p", "0.99", "--seed", "1", "--model"])
        .arg(&f.model));
    assert_eq!(out.status.code(), Some(2));

    let out = run(condex().args(["fit", "--data", "/nonexistent/data.csv", "--out", "/tmp/x.json"]));
    assert_eq!(out.status.code(), Some(2));

    let out = run(condex().args(["summary"]));
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn environment_overrides_configuration() {
    let f = fixture();
    let out = run(condex()
        .args(["tau", "--site", "north", "--p", "0.99", "--seed", "1", "--model"])
        .arg(&f.model)
        .env("CONDEX_CI_LEVEL", "1.5"));
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn seed_is_required() {
    let f = fixture();
    let out = run(condex().args(["tau", "--site", "north", "--p", "0.99", "--model"]).arg(&f.model));
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("--seed"));
}

#[test]
fn failed_fits_exit_with_three_unless_partial() {
    let dir = TempDir::new().unwrap();
    let data = dir.path().join("disjoint.csv");
    let model = dir.path().join("model.json");
    // north and east are never observed together
    write_logistic_csv(&data, 3000, 2);
    let text = std::fs::read_to_string(&data).unwrap();
    let mut masked = String::new();
    for (i, line) in text.lines().enumerate() {
        let mut cells: Vec<&str> = line.split(',').collect();
        if i > 0 {
            cells[i % 2] = "NA";
        }
        writeln!(masked, "{}", cells.join(",")).unwrap();
    }
    std::fs::write(&data, masked).unwrap();

    let out = run(condex().args(["fit", "--data"]).arg(&data).arg("--out").arg(&model));
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(!model.exists());
}
