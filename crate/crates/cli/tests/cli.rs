use std::fs;
use std::process::{Command, Output};

fn lbmcf(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lbmcf"))
        .args(args)
        .output()
        .unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn stdout_json(o: &Output) -> serde_json::Value {
    serde_json::from_slice(&o.stdout).unwrap()
}

#[test]
fn help_and_version_exit_zero() {
    assert_eq!(code(&lbmcf(&["--help"])), 0);
    assert_eq!(code(&lbmcf(&["--version"])), 0);
}

#[test]
fn usage_errors_exit_one() {
    assert_eq!(code(&lbmcf(&["bogus"])), 1);
    assert_eq!(code(&lbmcf(&["check-stability", "--a", "2"])), 1);
    // regime error: arg Z_X outside (0, π)
    assert_eq!(
        code(&lbmcf(&[
            "check-stability",
            "--a",
            "1.05",
            "--p",
            "1",
            "--q",
            "10"
        ])),
        1
    );
}

#[test]
fn config_errors_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.toml");
    fs::write(&bad, "R = 8\nnot_a_key = 1\n").unwrap();
    let o = lbmcf(&["--config", bad.to_str().unwrap(), "scenario", "finite"]);
    assert_eq!(code(&o), 1);
    let small = dir.path().join("small.toml");
    fs::write(&small, "grid = 64\n").unwrap();
    assert_eq!(
        code(&lbmcf(&[
            "--config",
            small.to_str().unwrap(),
            "scenario",
            "finite"
        ])),
        1
    );
}

#[test]
fn semistable_class_is_classified() {
    let o = lbmcf(&["trace-stationary", "--q", "10"]);
    assert_eq!(code(&o), 0);
    let v = stdout_json(&o);
    let p = v["data"]["p"].as_f64().unwrap();
    let a = v["data"]["a"].as_f64().unwrap();
    let o = lbmcf(&[
        "check-stability",
        "--a",
        &a.to_string(),
        "--p",
        &p.to_string(),
        "--q",
        "10",
    ]);
    assert_eq!(code(&o), 0);
    let rec = stdout_json(&o);
    assert_eq!(rec["class"], "semistable");
}

#[test]
fn solve_ivp_writes_csv_and_passes() {
    let dir = tempfile::tempdir().unwrap();
    let o = lbmcf(&[
        "--out",
        dir.path().to_str().unwrap(),
        "solve-ivp",
        "--R",
        "4",
        "--points",
        "11",
    ]);
    assert_eq!(code(&o), 0);
    let text = fs::read_to_string(dir.path().join("ivp.csv")).unwrap();
    assert!(text.starts_with("t,b,residual\n"));
    assert_eq!(text.lines().count(), 12);
    assert!(stdout_json(&o)["max_residual"].as_f64().unwrap() < 1e-8);
}

#[test]
fn circle_certificate_far_center_passes() {
    let far = lbmcf(&[
        "verify-barrier",
        "--cert-grid",
        "64",
        "circle",
        "--R",
        "2",
        "--y0",
        "-2000",
    ]);
    assert_eq!(code(&far), 0);
    assert_eq!(stdout_json(&far)["pass"], true);
}

#[test]
fn coarse_scenario_is_reported_as_falsified() {
    let dir = tempfile::tempdir().unwrap();
    let o = lbmcf(&[
        "--grid",
        "256",
        "--out",
        dir.path().to_str().unwrap(),
        "scenario",
        "finite",
    ]);
    assert_eq!(code(&o), 2);
    let rep = stdout_json(&o);
    assert_eq!(rep["pass"], false);
    assert!(dir.path().join("report.falsified.json").exists());
    assert!(dir.path().join("snapshots.csv").exists());
}

#[test]
fn sweep_writes_one_directory_per_value() {
    let dir = tempfile::tempdir().unwrap();
    let o = lbmcf(&[
        "--grid",
        "256",
        "--out",
        dir.path().to_str().unwrap(),
        "sweep",
        "finite",
        "--key",
        "R",
        "--values",
        "6,8",
    ]);
    assert_ne!(code(&o), 1);
    let text = String::from_utf8(o.stdout).unwrap();
    assert!(text.starts_with("R,pass,stop_cause,t_stop,x_star\n"));
    assert!(dir.path().join("R=6").is_dir() && dir.path().join("R=8").is_dir());
    assert_eq!(
        code(&lbmcf(&[
            "sweep", "finite", "--key", "nope", "--values", "1"
        ])),
        1
    );
}

#[test]
fn stationary_trace_is_deterministic() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for d in [&a, &b] {
        assert_eq!(
            code(&lbmcf(&[
                "--out",
                d.path().to_str().unwrap(),
                "trace-stationary"
            ])),
            0
        );
    }
    for f in ["stationary.csv", "stationary.json"] {
        assert_eq!(
            fs::read(a.path().join(f)).unwrap(),
            fs::read(b.path().join(f)).unwrap()
        );
    }
}

fn write_f0(dir: &std::path::Path) -> std::path::PathBuf {
    let f0 = dir.join("f0.csv");
    let mut s = String::from("x,f\n");
    for i in 0..=40 {
        let x = 1.0 + 2.0 * i as f64 / 40.0;
        s.push_str(&format!(
            "{x},{}\n",
            x + 0.1 * (std::f64::consts::PI * (x - 1.0) / 2.0).sin()
        ));
    }
    fs::write(&f0, s).unwrap();
    f0
}

#[test]
fn run_flow_writes_snapshots() {
    let dir = tempfile::tempdir().unwrap();
    let f0 = write_f0(dir.path());
    let out = dir.path().join("run");
    let o = lbmcf(&[
        "--grid",
        "256",
        "--out",
        out.to_str().unwrap(),
        "run-flow",
        "--a",
        "3",
        "--p",
        "3",
        "--q",
        "1",
        "--f0",
        f0.to_str().unwrap(),
        "--t-end",
        "0.01",
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(stdout_json(&o)["stop_cause"]["kind"], "time_reached");
    for f in ["snapshots.csv", "monitor.csv", "report.json"] {
        assert!(out.join(f).exists(), "{f}");
    }
}

#[test]
fn run_curve_reads_initial_graph() {
    let dir = tempfile::tempdir().unwrap();
    let f0 = write_f0(dir.path());
    let out = dir.path().join("run");
    let o = lbmcf(&[
        "--grid",
        "128",
        "--snapshots",
        "4",
        "--out",
        out.to_str().unwrap(),
        "run-curve",
        "--a",
        "3",
        "--p",
        "3",
        "--q",
        "1",
        "--f0",
        f0.to_str().unwrap(),
        "--t-end",
        "0.01",
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let text = fs::read_to_string(out.join("curves.csv")).unwrap();
    assert_eq!(text.lines().count(), 1 + 5 * 128);
}
