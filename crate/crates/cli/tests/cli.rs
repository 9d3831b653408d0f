use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_schwarzscope"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).env_remove("SCHWARZSCOPE_SEED").output().expect("spawn")
}

fn maps_dir() -> &'static Path {
    Path::new(concat!(env!("CARGO_MANIFEST_DIR"), "/../../maps"))
}

fn map_file(name: &str) -> String {
    maps_dir().join(name).to_string_lossy().into_owned()
}

fn stdout_json(o: &Output) -> Value {
    serde_json::from_slice(&o.stdout).unwrap_or_else(|e| {
        panic!("{e}: {}", String::from_utf8_lossy(&o.stdout))
    })
}

fn read_json(p: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(p).unwrap()).unwrap()
}

#[test]
fn certify_g17_with_partition_file() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let part = map_file("g17-partition.json");
    let o = run(&["--out", out, "certify", "--map", "g17", "--partition", &part, "--kmax", "2"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let cert = read_json(&dir.path().join("certificate.json"));
    assert_eq!(cert["order_bound"], 2, "{cert}");
    assert_eq!(read_json(&dir.path().join("summary.json")), cert);

    let cert_path = dir.path().join("certificate.json");
    let v = run(&["verify", "--map", "g17", "--cert", cert_path.to_str().unwrap()]);
    assert_eq!(v.status.code(), Some(0), "{}", String::from_utf8_lossy(&v.stderr));
    assert_eq!(stdout_json(&v)["verified"], true);
}

#[test]
fn certify_refusal_exit_code() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let o = run(&["--out", out, "certify", "--map", "f78", "--kmax", "1"]);
    assert_eq!(o.status.code(), Some(2));
    let refusal = read_json(&dir.path().join("refusal.json"));
    assert!(refusal["blocking_sequence"].is_array(), "{refusal}");
    assert!(!dir.path().join("certificate.json").exists());
}

#[test]
fn mobius_mode_certifies_f78() {
    let o = run(&["certify", "--map", "f78", "--mode", "mobius", "--kmax", "5"]);
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(stdout_json(&o)["order_bound"], 3);
}

#[test]
fn census_violation_exit_code() {
    let dir = tempfile::tempdir().unwrap();
    let map = dir.path().join("hidden.json");
    fs::write(
        &map,
        r#"{"domain": [0, 1], "pieces": [
            {"on": [0, 0.3], "expr": "3.9*x*(0.3-x)/0.3"},
            {"on": [0.3, 0.7], "expr": "0.5 + 0.5*(x-0.5)"},
            {"on": [0.7, 1], "expr": "0.9*(1-x)"}]}"#,
    )
    .unwrap();
    let o = run(&["census", "--map", map.to_str().unwrap(), "--pmax", "2"]);
    assert_eq!(o.status.code(), Some(3), "{}", String::from_utf8_lossy(&o.stderr));
    let v = stdout_json(&o);
    assert!(!v["violations"].as_array().unwrap().is_empty());
}

#[test]
fn missing_file_is_input_error() {
    let o = run(&["parse", "--map", "/no/such/map.json"]);
    assert_eq!(o.status.code(), Some(1));
    let err: Value = serde_json::from_slice(&o.stderr).unwrap();
    assert_eq!(err["error"]["kind"], "io");
    assert!(o.stdout.is_empty());
}

#[test]
fn syntax_error_is_input_error() {
    let dir = tempfile::tempdir().unwrap();
    let map = dir.path().join("bad.json");
    fs::write(&map, r#"{"domain": [0, 1], "pieces": [{"on": [0, 1], "expr": "4*x*(1-"}]}"#).unwrap();
    let o = run(&["parse", "--map", map.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    let err: Value = serde_json::from_slice(&o.stderr).unwrap();
    assert!(err["error"]["message"].as_str().is_some());
}

#[test]
fn kmax_zero_is_rejected() {
    let o = run(&["certify", "--map", "logistic", "--kmax", "0"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn plot_data_is_finite_and_positive() {
    let o = run(&["plot-data", "--map", "f78", "--k", "3", "--grid", "256"]);
    assert_eq!(o.status.code(), Some(0));
    let text = String::from_utf8(o.stdout).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("segment,x,g"));
    let mut n = 0;
    for line in lines {
        let g: f64 = line.rsplit(',').next().unwrap().parse().unwrap();
        assert!(g.is_finite() && g > 0.0, "{line}");
        n += 1;
    }
    assert!(n > 100);
}

#[test]
fn plot_data_writes_csv_under_out() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let o = run(&["--out", out, "plot-data", "--map", "logistic", "--k", "2", "--grid", "64"]);
    assert_eq!(o.status.code(), Some(0));
    assert!(dir.path().join("plot.csv").exists());
    assert_eq!(stdout_json(&o)["k"], 2);
}

#[test]
fn fixed_seed_is_reproducible_across_thread_counts() {
    let args = |threads: &'static str, dir: &Path| -> Vec<String> {
        [
            "--threads", threads, "--seed", "11", "--out", dir.to_str().unwrap(), "measure", "corr", "--map",
            "logistic", "--N", "4", "--bins", "256", "--streams", "4", "--steps", "20000",
        ]
        .iter()
        .map(|s| s.to_string())
        .collect()
    };
    let mut summaries = Vec::new();
    for threads in ["1", "1", "3"] {
        let dir = tempfile::tempdir().unwrap();
        let o = bin().args(args(threads, dir.path())).output().unwrap();
        assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
        summaries.push((
            fs::read(dir.path().join("summary.json")).unwrap(),
            fs::read(dir.path().join("corr.csv")).unwrap(),
        ));
    }
    assert_eq!(summaries[0], summaries[1]);
    assert_eq!(summaries[0], summaries[2]);
}

#[test]
fn seed_from_environment() {
    let run_with = |seed: &str| {
        bin()
            .args(["measure", "corr", "--map", "logistic", "--N", "2", "--bins", "128", "--streams", "2", "--steps", "5000"])
            .env("SCHWARZSCOPE_SEED", seed)
            .output()
            .unwrap()
            .stdout
    };
    assert_eq!(run_with("5"), run_with("5"));
    assert_ne!(run_with("5"), run_with("6"));
}

// Frozen facts about the bundled maps, through both the name and the file.
#[test]
fn golden_parse() {
    let cases = [
        ("logistic", true, true),
        ("f78", true, true),
        ("g17", true, true),
        ("quartic", false, true),
        ("neuro", true, false),
    ];
    for (name, self_map, c2) in cases {
        for arg in [name.to_string(), map_file(&format!("{name}.json"))] {
            let o = run(&["parse", "--map", &arg]);
            assert_eq!(o.status.code(), Some(0), "{arg}: {}", String::from_utf8_lossy(&o.stderr));
            let v = stdout_json(&o);
            assert_eq!(v["self_map"]["is_self_map"], self_map, "{arg}");
            assert_eq!(v["c2"], c2, "{arg}");
        }
    }
}

#[test]
fn golden_schwarzian() {
    let o = run(&["schwarzian", "--map", "logistic", "--x", "0.25,0.75"]);
    let v = stdout_json(&o);
    for p in v["values"].as_array().unwrap() {
        assert!((p["value"].as_f64().unwrap() + 24.0).abs() < 1e-9, "{p}");
    }
    let o = run(&["schwarzian", "--map", "g17", "--x", "-1"]);
    let s = stdout_json(&o)["values"][0]["value"].as_f64().unwrap();
    assert!((s - 3.4348022005).abs() < 1e-8, "{s}");
}

#[test]
fn golden_orbits() {
    let o = run(&["orbits", "--map", "logistic", "--pmax", "2"]);
    assert_eq!(o.status.code(), Some(0));
    let v = stdout_json(&o);
    assert_eq!(v["critical_points"].as_array().unwrap().len(), 1);
    assert_eq!(v["orbits"].as_array().unwrap().len(), 3);

    let o = run(&["census", "--map", "f78", "--pmax", "4"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stdout));
    assert_eq!(stdout_json(&o)["bound"], 3);
}

#[test]
fn golden_measure() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let o = run(&["--out", out, "measure", "dn", "--map", "logistic", "--N", "30"]);
    assert_eq!(o.status.code(), Some(0));
    let v = stdout_json(&o);
    assert!((v["c"].as_f64().unwrap() - 0.5).abs() < 1e-12);
    assert_eq!(v["summability"]["thm2"]["verdict"], "convergent", "{v}");
    let csv = fs::read_to_string(dir.path().join("dn.csv")).unwrap();
    assert_eq!(csv.lines().count(), 31);

    let o = run(&["measure", "acip", "--map", "logistic", "--bins", "128"]);
    let text = String::from_utf8(o.stdout).unwrap();
    let total: f64 = text.lines().skip(1).map(|l| l.rsplit(',').next().unwrap().parse::<f64>().unwrap()).sum();
    assert!((total - 1.0).abs() < 1e-9);
}

#[test]
fn golden_neuro() {
    let o = run(&["neuro", "misiurewicz"]);
    assert_eq!(o.status.code(), Some(0));
    let d = stdout_json(&o)["result"]["delta"].as_f64().unwrap();
    assert!((d - 2.5790181148502604).abs() < 1e-12, "{d}");

    let o = run(&["neuro", "landmarks"]);
    let v = stdout_json(&o);
    assert!((v["landmarks"]["delta_n"]["value"].as_f64().unwrap() - 2.235926379313721).abs() < 1e-9);

    let o = run(&["neuro", "misiurewicz", "--family", "sqrt"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn sampled_rigor_is_recorded() {
    let part = map_file("g17-partition.json");
    let o = run(&["certify", "--map", "g17", "--partition", &part, "--kmax", "2", "--rigor", "sampled"]);
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(stdout_json(&o)["rigor"], "sampled");
}
