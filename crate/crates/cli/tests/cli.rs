use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_ipop-dispatch"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = run(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn json(args: &[&str]) -> Value {
    serde_json::from_str(&ok(args)).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Profile JSON for `P_in = P + a2 P^2 + a0` on an 80 V bus.
fn quadratic_profile(dir: &Path, id: &str, a0: f64, a2: f64, p_max: f64) -> PathBuf {
    let doc = serde_json::json!({
        "module_id": id,
        "pin_coeffs": [a0, 80.0, a2 * 6400.0],
        "pout_coeffs": [0.0, 80.0],
        "i_min": 10.0 / 80.0,
        "i_max": p_max / 80.0,
    });
    let path = dir.join(format!("{id}.json"));
    fs::write(&path, doc.to_string()).unwrap();
    path
}

fn outputs(allocation: &Value) -> Vec<f64> {
    allocation["modules"]
        .as_array()
        .unwrap()
        .iter()
        .map(|m| m["p_out_w"].as_f64().unwrap())
        .collect()
}

struct Reference {
    _dir: TempDir,
    profiles: Vec<PathBuf>,
}

fn reference_profiles() -> Reference {
    let dir = TempDir::new().unwrap();
    let csv = dir.path().join("samples.csv");
    ok(&["synth", "--out", s(&csv), "--quiet"]);
    let out_dir = dir.path().join("profiles");
    let report = json(&["fit", s(&csv), "--out-dir", s(&out_dir), "--quiet"]);
    assert_eq!(report.as_array().unwrap().len(), 2);
    let profiles = vec![
        out_dir.join("dab_100uh.json"),
        out_dir.join("dab_150uh.json"),
    ];
    assert!(profiles.iter().all(|p| p.exists()));
    Reference {
        _dir: dir,
        profiles,
    }
}

fn with_profiles<'a>(cmd: &[&'a str], profiles: &'a [PathBuf], rest: &[&'a str]) -> Vec<&'a str> {
    let mut args = cmd.to_vec();
    for p in profiles {
        args.push("-p");
        args.push(s(p));
    }
    args.extend_from_slice(rest);
    args
}

#[test]
fn synth_fit_schedule_round_trip() {
    let r = reference_profiles();
    let dir = TempDir::new().unwrap();
    let points = dir.path().join("points.json");
    let csv = ok(&with_profiles(
        &["schedule", "--quiet"],
        &r.profiles,
        &[
            "--p-min",
            "50",
            "--p-max",
            "1200",
            "--step",
            "10",
            "--json-out",
            s(&points),
        ],
    ));
    let mut lines = csv.lines();
    assert_eq!(
        lines.next(),
        Some("p_lo_w,p_hi_w,active_modules,example_demand_w,eta")
    );
    let active: Vec<&str> = lines.map(|l| l.split(',').nth(2).unwrap()).collect();
    assert_eq!(active, ["dab_150uh", "dab_100uh", "dab_100uh+dab_150uh"]);

    let points: Value = serde_json::from_str(&fs::read_to_string(points).unwrap()).unwrap();
    let switches: Vec<f64> = points["switching_points"]
        .as_array()
        .unwrap()
        .iter()
        .map(|p| p["p_total_w"].as_f64().unwrap())
        .collect();
    assert_eq!(switches.len(), 2);
    let examples = points["ranges"].as_array().unwrap();
    assert_eq!(examples.len(), 3);
    assert!(examples
        .iter()
        .all(|r| r["example"]["eta"].as_f64().unwrap() > 0.9));
    assert!((switches[0] - 290.0).abs() < 15.0, "{switches:?}");
    assert!((switches[1] - 550.0).abs() < 15.0, "{switches:?}");
}

#[test]
fn reference_fleet_dispatch_compare_and_anneal() {
    let r = reference_profiles();
    let d = json(&with_profiles(
        &["dispatch", "--quiet"],
        &r.profiles,
        &["--demand", "800"],
    ));
    assert!((outputs(&d).iter().sum::<f64>() - 800.0).abs() < 1e-5);

    let c = json(&with_profiles(
        &["compare", "--quiet"],
        &r.profiles,
        &["--demand", "800"],
    ));
    assert!(c["improvement_points"].as_f64().unwrap() > 0.0);

    let a = json(&with_profiles(
        &["anneal", "--quiet", "--seed", "5"],
        &r.profiles,
        &["--demand", "800"],
    ));
    let eta = d["eta"].as_f64().unwrap();
    assert!((a["best"]["eta"].as_f64().unwrap() - eta).abs() < 1e-3);
    assert_eq!(a["seed"], 5);
}

#[test]
fn closed_form_pair() {
    let dir = TempDir::new().unwrap();
    let profiles = vec![
        quadratic_profile(dir.path(), "A", 3.0, 0.002, 500.0),
        quadratic_profile(dir.path(), "B", 6.0, 0.001, 500.0),
    ];
    let d = json(&with_profiles(
        &["dispatch", "--quiet"],
        &profiles,
        &["--demand", "300"],
    ));
    let out = outputs(&d);
    assert!(
        (out[0] - 100.0).abs() < 0.01 && (out[1] - 200.0).abs() < 0.01,
        "{out:?}"
    );
    assert!((d["eta"].as_f64().unwrap() - 0.813008).abs() < 1e-5);

    let c = json(&with_profiles(
        &["compare", "--quiet"],
        &profiles,
        &["--demand", "300"],
    ));
    assert!((c["eta_equal_split"].as_f64().unwrap() - 0.796813).abs() < 1e-6);
    let want = 100.0 * (300.0 / 369.0 - 300.0 / 376.5);
    assert!((c["improvement_points"].as_f64().unwrap() - want).abs() < 1e-6);

    let a = json(&with_profiles(
        &["anneal", "--quiet"],
        &profiles,
        &["--demand", "300"],
    ));
    assert!((a["best"]["eta"].as_f64().unwrap() - 0.813008).abs() < 1e-3);

    for method in ["equal-split", "grid", "anneal"] {
        let m = json(&with_profiles(
            &["dispatch", "--quiet"],
            &profiles,
            &["--demand", "300", "--method", method],
        ));
        assert!(
            (outputs(&m).iter().sum::<f64>() - 300.0).abs() < 1e-5,
            "{method}"
        );
    }
}

#[test]
fn identical_pair() {
    let dir = TempDir::new().unwrap();
    let profiles = vec![
        quadratic_profile(dir.path(), "A1", 5.0, 0.001, 500.0),
        quadratic_profile(dir.path(), "A2", 5.0, 0.001, 500.0),
    ];
    let d = json(&with_profiles(
        &["dispatch", "--quiet"],
        &profiles,
        &["--demand", "400"],
    ));
    assert_eq!(outputs(&d), vec![200.0, 200.0]);

    let c = json(&with_profiles(
        &["compare", "--quiet"],
        &profiles,
        &["--demand", "400"],
    ));
    assert!(c["improvement_full_set_points"].as_f64().unwrap().abs() < 1e-7);

    let csv = ok(&with_profiles(
        &["schedule", "--quiet"],
        &profiles,
        &["--p-min", "20", "--p-max", "900", "--step", "10"],
    ));
    let rows: Vec<&str> = csv.lines().skip(1).collect();
    assert_eq!(rows.len(), 2, "{csv}");
    let switch: f64 = rows[0].split(',').nth(1).unwrap().parse().unwrap();
    assert!((switch - 100.0).abs() < 0.01, "{switch}");

    let single = ok(&[
        "schedule",
        "--quiet",
        "-p",
        s(&profiles[0]),
        "--p-min",
        "20",
        "--p-max",
        "400",
    ]);
    assert_eq!(single.lines().count(), 2);
    let subset = ok(&with_profiles(
        &["schedule", "--quiet", "--modules", "A2"],
        &profiles,
        &["--p-min", "20", "--p-max", "400"],
    ));
    assert_eq!(subset.lines().nth(1).unwrap().split(',').nth(2), Some("A2"));
    assert_eq!(subset.lines().count(), 2);
}

#[test]
fn reruns_are_byte_identical() {
    let r = reference_profiles();
    for args in [
        with_profiles(
            &["anneal", "--quiet", "--seed", "11"],
            &r.profiles,
            &["--demand", "640"],
        ),
        with_profiles(
            &["dispatch", "--quiet", "--method", "anneal", "--seed", "2"],
            &r.profiles,
            &["--demand", "300"],
        ),
        vec!["synth", "--quiet", "--seed", "9", "--noise-w", "1.0"],
    ] {
        let a = run(&args);
        let b = run(&args);
        assert!(a.status.success());
        assert_eq!(a.stdout, b.stdout, "{args:?}");
    }

    // The report's output digest matches across runs; timing does not.
    let args = with_profiles(
        &["anneal", "--seed", "11"],
        &r.profiles,
        &["--demand", "640"],
    );
    let digest = |o: Output| -> Value {
        let report: Value = serde_json::from_slice(&o.stderr).unwrap();
        report["outputs_sha256"].clone()
    };
    assert_eq!(digest(run(&args)), digest(run(&args)));
}

#[test]
fn missing_config_uses_defaults() {
    let r = reference_profiles();
    let out = run(&with_profiles(
        &["anneal"],
        &r.profiles,
        &["--demand", "500", "--config", "/definitely/not/here.json"],
    ));
    assert!(out.status.success());
    let stderr = String::from_utf8(out.stderr).unwrap();
    let report: Value = serde_json::from_str(stderr.lines().last().unwrap()).unwrap();
    let notes = report["notes"].as_array().unwrap();
    assert!(notes
        .iter()
        .any(|n| n.as_str().unwrap().contains("defaults used")));
    assert_eq!(report["seed"], 0);
}

#[test]
fn config_file_is_honoured() {
    let r = reference_profiles();
    let dir = TempDir::new().unwrap();
    let cfg = dir.path().join("anneal.json");
    fs::write(&cfg, r#"{"seed": 42, "iters_per_temp": 10}"#).unwrap();
    let a = json(&with_profiles(
        &["anneal", "--quiet"],
        &r.profiles,
        &["--demand", "500", "--config", s(&cfg)],
    ));
    assert_eq!(a["seed"], 42);
    assert_eq!(a["iterations"], 1800);

    fs::write(&cfg, r#"{"sede": 42}"#).unwrap();
    let bad = run(&with_profiles(
        &["anneal"],
        &r.profiles,
        &["--demand", "500", "--config", s(&cfg)],
    ));
    assert_eq!(bad.status.code(), Some(2));
}

#[test]
fn exit_codes() {
    let r = reference_profiles();
    let far = run(&with_profiles(
        &["dispatch"],
        &r.profiles,
        &["--demand", "1e9"],
    ));
    assert_eq!(far.status.code(), Some(3));
    let msg = String::from_utf8(far.stderr).unwrap();
    assert!(msg.contains("1700"), "{msg}");

    let unknown = run(&with_profiles(
        &["dispatch"],
        &r.profiles,
        &["--demand", "300", "--method", "nope"],
    ));
    assert_eq!(unknown.status.code(), Some(2));

    let missing = run(&["dispatch", "-p", "/no/such/profile.json", "--demand", "300"]);
    assert_eq!(missing.status.code(), Some(2));

    let dup = run(&with_profiles(
        &["dispatch"],
        &[r.profiles[0].clone(), r.profiles[0].clone()],
        &["--demand", "300"],
    ));
    assert_eq!(dup.status.code(), Some(2));

    let usage = run(&["dispatch"]);
    assert_eq!(usage.status.code(), Some(2));
}

#[test]
fn sample_file_errors() {
    let dir = TempDir::new().unwrap();
    let out_dir = dir.path().join("p");
    let write = |name: &str, text: &str| {
        let p = dir.path().join(name);
        fs::write(&p, text).unwrap();
        p
    };

    let header_only = write("h.csv", "module_id,current_a,p_in_w,p_out_w\n");
    let o = run(&["fit", s(&header_only), "--out-dir", s(&out_dir)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("no data rows"));

    let bad_row = write(
        "b.csv",
        "module_id,current_a,p_in_w,p_out_w\nA,1,100,80\nA,2,abc,160\n",
    );
    let o = run(&["fit", s(&bad_row), "--out-dir", s(&out_dir)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("line 3"));

    let samples = dir.path().join("s.csv");
    ok(&["synth", "--out", s(&samples), "--quiet"]);
    let o = run(&[
        "fit",
        s(&samples),
        "--degree",
        "2",
        "--out-dir",
        s(&out_dir),
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains(">= 3"));
}

#[test]
fn tps_record() {
    let line = ok(&["tps", "--k", "2", "--p", "0.5", "--quiet"]);
    let keys: Vec<String> = serde_json::from_str::<serde_json::Map<String, Value>>(&line)
        .unwrap()
        .keys()
        .cloned()
        .collect();
    assert_eq!(
        keys,
        ["k", "p", "regime", "mode", "d1", "d2", "d3", "i_m_pu"]
    );
    let v: Value = serde_json::from_str(&line).unwrap();
    assert_eq!(v["mode"], 1);
    assert_eq!(v["i_m_pu"], 1.0);

    let v = json(&[
        "tps", "--n", "1", "--u-in", "100", "--u-out", "80", "--p", "0.5", "--quiet",
    ]);
    assert_eq!(v["k"], 1.25);
    assert_eq!(v["regime"], "boost");

    let v = json(&["tps", "--k", "1", "--p", "1", "--quiet"]);
    assert!((v["d2"].as_f64().unwrap() - 0.292893).abs() < 1e-6);

    assert_eq!(
        run(&["tps", "--k", "2", "--p", "1.5"]).status.code(),
        Some(2)
    );
    // Mode-2 points where the outer-shift radicand is negative.
    assert_eq!(
        run(&["tps", "--k", "2", "--p", "0.01"]).status.code(),
        Some(2)
    );
}

#[test]
fn hidden_oracle() {
    let dir = TempDir::new().unwrap();
    let profiles = vec![
        quadratic_profile(dir.path(), "A", 3.0, 0.002, 500.0),
        quadratic_profile(dir.path(), "B", 6.0, 0.001, 500.0),
    ];
    let o = json(&with_profiles(
        &["oracle", "--quiet"],
        &profiles,
        &["--demand", "300", "--step", "1"],
    ));
    let out = outputs(&o["best"]);
    assert_eq!(out, vec![100.0, 200.0]);
    let help = ok(&["--help"]);
    assert!(!help.contains("oracle"));
}
