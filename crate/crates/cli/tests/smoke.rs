use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

const PAIR: &str = r#"{"n":1,"gamma":0.25,"grid":{"L":4,"N":512,"Y":4,"M":20},
"bubbles":[{"center":[-2],"mu_schedule":[0.25,0.125],"r0":0.5},{"center":[2],"mu_schedule":[0.25,0.125],"r0":0.5}]}"#;

fn run(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fracbubbles"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout_json(o: &Output) -> Value {
    serde_json::from_slice(&o.stdout).expect("stdout is JSON")
}

fn synthesized(dir: &Path) {
    fs::write(dir.join("pair.json"), PAIR).unwrap();
    let o = run(
        dir,
        &["synthesize", "--config", "pair.json", "--out", "run"],
    );
    assert_eq!(
        o.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&o.stderr)
    );
}

#[test]
fn constants_at_one_half() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(dir.path(), &["constants", "--n", "3", "--gamma", "0.5"]);
    assert_eq!(o.status.code(), Some(0));
    let v = stdout_json(&o);
    assert_eq!(v["d_star"], 1.0);
    for key in [
        "n",
        "gamma",
        "two_star",
        "d_gamma",
        "d_star",
        "sobolev_S",
        "kappa",
        "energy_quantum",
        "beta_zero",
    ] {
        assert!(v.get(key).is_some(), "missing {key}");
    }
    assert!(String::from_utf8_lossy(&o.stderr).contains("manifest"));
}

#[test]
fn bubble_reports_mass_and_samples() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(
        dir.path(),
        &[
            "bubble",
            "--n",
            "2",
            "--gamma",
            "0.5",
            "--lambda",
            "2",
            "--center=1,-1",
            "--calibrate",
        ],
    );
    assert_eq!(o.status.code(), Some(0));
    let v = stdout_json(&o);
    assert_eq!(v["sample_values"].as_array().unwrap().len(), 5);
    assert!(v["trace_mass"].as_f64().unwrap() > 0.0);
    assert!(v["calibration"]["coefficient"].as_f64().unwrap() > 0.0);
}

#[test]
fn extend_writes_rows_with_error_estimates() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("pts.csv"), "x0,y\n0,0.1\n1,0.5\n").unwrap();
    let o = run(
        dir.path(),
        &[
            "extend", "--n", "1", "--gamma", "0.25", "--points", "pts.csv", "--out", "ext.csv",
        ],
    );
    assert_eq!(o.status.code(), Some(0));
    let text = fs::read_to_string(dir.path().join("ext.csv")).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "x0,y,U,err_estimate");
    assert_eq!(lines.len(), 3);
}

#[test]
fn synthesize_energy_and_extract() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    synthesized(d);
    let ledger = fs::read_to_string(d.join("run/ledger.csv")).unwrap();
    let lines: Vec<&str> = ledger.lines().collect();
    assert_eq!(lines.len(), 3);
    assert!(lines.iter().all(|l| l.split(',').count() == 7));

    let o = run(d, &["energy", "--field", "run/field_alpha1.csv"]);
    assert_eq!(o.status.code(), Some(0));
    let v = stdout_json(&o);
    assert!(v["dirichlet"].as_f64().unwrap() > 0.0);

    let o = run(
        d,
        &[
            "--manifest",
            "m.json",
            "extract",
            "--input",
            "run/field_alpha2.csv",
            "--out",
            "rep.json",
        ],
    );
    assert_eq!(o.status.code(), Some(0));
    let rep: Value =
        serde_json::from_str(&fs::read_to_string(d.join("rep.json")).unwrap()).unwrap();
    assert_eq!(rep["halt_reason"], "compact-residual");
    assert_eq!(rep["steps"].as_array().unwrap().len(), 2);
    let m: Value = serde_json::from_str(&fs::read_to_string(d.join("m.json")).unwrap()).unwrap();
    assert_eq!(m["inputs_sha256"].as_object().unwrap().len(), 1);
}

#[test]
fn extract_budget_exhausted_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    synthesized(d);
    fs::write(d.join("one.json"), r#"{"m_max":1}"#).unwrap();
    let o = run(
        d,
        &[
            "extract",
            "--input",
            "run/field_alpha2.csv",
            "--config",
            "one.json",
            "--out",
            "rep.json",
        ],
    );
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn outputs_are_byte_identical_across_runs() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    synthesized(d);
    let first = fs::read(d.join("run/field_alpha2.csv")).unwrap();
    synthesized(d);
    assert_eq!(first, fs::read(d.join("run/field_alpha2.csv")).unwrap());
    for out in ["a.json", "b.json"] {
        let o = run(
            d,
            &["extract", "--input", "run/field_alpha2.csv", "--out", out],
        );
        assert_eq!(o.status.code(), Some(0));
    }
    assert_eq!(
        fs::read(d.join("a.json")).unwrap(),
        fs::read(d.join("b.json")).unwrap()
    );
}

#[test]
fn malformed_config_names_the_key() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    fs::write(d.join("bad.json"), PAIR.replace("\"r0\"", "\"radius0\"")).unwrap();
    let o = run(d, &["synthesize", "--config", "bad.json", "--out", "run"]);
    assert_eq!(o.status.code(), Some(64));
    assert!(String::from_utf8_lossy(&o.stderr).contains("radius0"));
    fs::write(d.join("s.json"), r#"{"m_maximum":1}"#).unwrap();
    synthesized(d);
    let o = run(
        d,
        &[
            "extract",
            "--input",
            "run/field_alpha1.csv",
            "--config",
            "s.json",
            "--out",
            "r.json",
        ],
    );
    assert_eq!(o.status.code(), Some(64));
    assert!(String::from_utf8_lossy(&o.stderr).contains("m_maximum"));
    assert_eq!(run(d, &["constants", "--n", "x"]).status.code(), Some(64));
}

#[test]
fn accept_subset_passes_and_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    for out in ["a.json", "b.json"] {
        let o = run(
            d,
            &[
                "--seed",
                "7",
                "accept",
                "--suite",
                "primary",
                "--criteria",
                "1,7,9",
                "--out",
                out,
            ],
        );
        assert_eq!(
            o.status.code(),
            Some(0),
            "{}",
            String::from_utf8_lossy(&o.stdout)
        );
        assert_eq!(
            String::from_utf8_lossy(&o.stdout).matches("PASS").count(),
            3
        );
    }
    assert_eq!(
        fs::read(d.join("a.json")).unwrap(),
        fs::read(d.join("b.json")).unwrap()
    );
}

#[test]
fn thread_cap_is_honoured() {
    let dir = tempfile::tempdir().unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_fracbubbles"))
        .current_dir(dir.path())
        .env("FRACBUBBLES_THREADS", "2")
        .args(["constants", "--n", "1", "--gamma", "0.25"])
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&o.stderr).contains(r#""threads":2"#));
    let o = Command::new(env!("CARGO_BIN_EXE_fracbubbles"))
        .env("FRACBUBBLES_THREADS", "many")
        .args(["constants", "--n", "1", "--gamma", "0.25"])
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(64));
}
