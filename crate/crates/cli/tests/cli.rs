use std::path::Path;
use std::process::{Command, Output};

fn irfb(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_irfb"))
        .args(args)
        .current_dir(cwd)
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn summary(dir: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(dir.join("summary.json")).unwrap()).unwrap()
}

#[test]
fn example3_coverage_smoke() {
    let tmp = tempfile::tempdir().unwrap();
    let o = irfb(
        &[
            "coverage", "--preset", "example3", "--trials", "10", "--out", "res",
        ],
        tmp.path(),
    );
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let csv = std::fs::read_to_string(tmp.path().join("res/per_trial.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(
        lines.next().unwrap(),
        "trial,deviation,radius_pop,radius_emp,covered_pop,covered_emp"
    );
    assert_eq!(lines.count(), 10);
    let s = summary(&tmp.path().join("res"));
    assert_eq!(s["coverage"]["population"], 1.0);
    assert!(s["radius"].as_f64().unwrap() > 0.0);
    assert_eq!(s["software_version"], env!("CARGO_PKG_VERSION"));
}

const EXPANSIVE: &str = r#"{
  "generator": {
    "variant": "affine_ifs",
    "maps": [{"a": [1.2, 0.0, 0.0, 1.2], "b": [0.0, 0.0]}],
    "weights": [1.0],
    "label": {"kind": "identity"},
    "radius": 1.0
  },
  "class": {"kind": "finite_list", "members": [{"id": "origin", "kind": "constant", "value": [0.0, 0.0]}]},
  "n": 20, "epsilon": 0.1, "trials": 5, "seed": 1
}"#;

#[test]
fn expansive_map_is_an_assumption_violation() {
    let tmp = tempfile::tempdir().unwrap();
    std::fs::write(tmp.path().join("cfg.json"), EXPANSIVE).unwrap();
    let o = irfb(
        &["coverage", "--config", "cfg.json", "--out", "res"],
        tmp.path(),
    );
    assert_eq!(code(&o), 3);
    assert!(String::from_utf8_lossy(&o.stderr).contains("spectral norm 1.2"));
}

#[test]
fn invalid_configs_exit_2() {
    let tmp = tempfile::tempdir().unwrap();
    let unknown_key = EXPANSIVE.replacen("\"n\": 20", "\"n\": 20, \"colour\": 1", 1);
    std::fs::write(tmp.path().join("a.json"), unknown_key).unwrap();
    assert_eq!(
        code(&irfb(&["coverage", "--config", "a.json"], tmp.path())),
        2
    );
    let bad_eps = EXPANSIVE.replacen("\"epsilon\": 0.1", "\"epsilon\": 2.0", 1);
    std::fs::write(tmp.path().join("b.json"), bad_eps).unwrap();
    assert_eq!(
        code(&irfb(&["coverage", "--config", "b.json"], tmp.path())),
        2
    );
    assert_eq!(
        code(&irfb(&["coverage", "--preset", "nope"], tmp.path())),
        2
    );
}

#[test]
fn misdeclared_ell_h_exits_3() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = r#"{"preset": "iid", "loss": {"kind": "abs_clipped", "clip": 1.0, "ell_h": 0.01},
                  "n": 20, "epsilon": 0.1, "trials": 2, "seed": 0}"#;
    std::fs::write(tmp.path().join("cfg.json"), cfg).unwrap();
    let o = irfb(&["validate", "lemma2", "--config", "cfg.json"], tmp.path());
    assert_eq!(code(&o), 3, "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn reruns_are_byte_identical() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = r#"{"preset": "iid", "n": 60, "epsilon": 0.1, "trials": 15, "seed": 42}"#;
    std::fs::write(tmp.path().join("cfg.json"), cfg).unwrap();
    for out in ["r1", "r2"] {
        assert_eq!(
            code(&irfb(
                &["coverage", "--config", "cfg.json", "--out", out],
                tmp.path()
            )),
            0
        );
    }
    let read = |d: &str, f: &str| std::fs::read(tmp.path().join(d).join(f)).unwrap();
    assert_eq!(read("r1", "per_trial.csv"), read("r2", "per_trial.csv"));
    let (mut a, mut b) = (
        summary(&tmp.path().join("r1")),
        summary(&tmp.path().join("r2")),
    );
    a["timestamp"] = 0.into();
    b["timestamp"] = 0.into();
    assert_eq!(a, b);
    // The hash is that of the input file's canonical form.
    let canonical = r#"{"epsilon":0.1,"n":60,"preset":"iid","seed":42,"trials":15}"#;
    assert_eq!(a["config_hash"], irf_bounds_hash(canonical));
}

fn irf_bounds_hash(text: &str) -> String {
    irf_bounds::experiments::config::config_hash_of_text(text).unwrap()
}

#[test]
fn sweep_writes_one_plot_row_per_n() {
    let tmp = tempfile::tempdir().unwrap();
    let args = [
        "coverage",
        "--preset",
        "iid",
        "--trials",
        "5",
        "--sweep",
        "100,200,400",
        "--out",
        "res",
    ];
    assert_eq!(code(&irfb(&args, tmp.path())), 0);
    let plot = std::fs::read_to_string(tmp.path().join("res/plot.csv")).unwrap();
    assert_eq!(plot.lines().count(), 4);
    assert!(plot.starts_with("n,confidence,coverage_pop,coverage_emp,radius_pop,mean_radius_emp\n"));
    let rows = std::fs::read_to_string(tmp.path().join("res/per_trial.csv")).unwrap();
    assert_eq!(rows.lines().count(), 1 + 15);
}

#[test]
fn simulate_then_erm() {
    let tmp = tempfile::tempdir().unwrap();
    let o = irfb(
        &[
            "simulate", "--preset", "example3", "--n", "6", "--out", "sim",
        ],
        tmp.path(),
    );
    assert_eq!(code(&o), 0);
    let traj = std::fs::read_to_string(tmp.path().join("sim/trajectory.csv")).unwrap();
    assert_eq!(traj.lines().next().unwrap(), "step,x_0,y_0");
    assert_eq!(traj.lines().count(), 1 + 12);
    let plot = std::fs::read_to_string(tmp.path().join("sim/plot.csv")).unwrap();
    assert!(plot.starts_with("n,w1\n0,0.5\n1,0.25\n2,0.125\n"));

    let o = irfb(
        &[
            "erm",
            "--preset",
            "example3",
            "--n",
            "6",
            "--trajectory",
            "sim/trajectory.csv",
        ],
        tmp.path(),
    );
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let report: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(report["hypothesis_id"], "identity");
    assert_eq!(report["window"], serde_json::json!([6, 12]));
    let o = irfb(
        &[
            "erm",
            "--preset",
            "example3",
            "--n",
            "7",
            "--trajectory",
            "sim/trajectory.csv",
        ],
        tmp.path(),
    );
    assert_eq!(code(&o), 2);
}

#[test]
fn rademacher_wasserstein_and_certify() {
    let tmp = tempfile::tempdir().unwrap();
    std::fs::write(tmp.path().join("m.csv"), "0,1\n1,0\n").unwrap();
    let o = irfb(&["rademacher", "m.csv", "--exact"], tmp.path());
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["value"], 0.25);

    std::fs::write(tmp.path().join("a.csv"), "x,y\n0,0\n1,1\n").unwrap();
    std::fs::write(tmp.path().join("b.csv"), "0,1\n1,0\n").unwrap();
    let o = irfb(
        &[
            "wasserstein",
            "a.csv",
            "b.csv",
            "--dim-x",
            "1",
            "--kappa",
            "2",
        ],
        tmp.path(),
    );
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert!((v["cost"].as_f64().unwrap() - 0.5).abs() < 1e-12);

    let args = [
        "certify",
        "--rademacher",
        "0",
        "--ell-h",
        "1",
        "--ell-f",
        "0.5",
        "--n",
        "2000",
        "--epsilon",
        "0.1",
    ];
    let v: serde_json::Value = serde_json::from_slice(&irfb(&args, tmp.path()).stdout).unwrap();
    assert!((v["confidence"].as_f64().unwrap() - 0.999909).abs() < 5e-7);
    let args = [
        "certify",
        "--rademacher",
        "0",
        "--ell-h",
        "1",
        "--ell-f",
        "1.0",
        "--n",
        "10",
        "--epsilon",
        "0.1",
    ];
    assert_eq!(code(&irfb(&args, tmp.path())), 3);
}

#[test]
fn paper_literal_window_flag() {
    let tmp = tempfile::tempdir().unwrap();
    let args = [
        "coverage",
        "--preset",
        "example3",
        "--trials",
        "3",
        "--window",
        "paper-literal",
        "--out",
        "res",
    ];
    assert_eq!(code(&irfb(&args, tmp.path())), 0);
    assert_eq!(
        summary(&tmp.path().join("res"))["report"]["window"],
        "paper_literal"
    );
}
