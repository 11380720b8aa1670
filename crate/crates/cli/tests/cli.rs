use std::path::Path;
use std::process::{Command, Output};

fn odr(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_odr"))
        .args(args)
        .output()
        .unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn trajectory_file_has_one_line_per_step() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("d.jsonl");
    let o = odr(&[
        "gen-data",
        "--family",
        "point-mass",
        "--mode",
        "trajectory",
        "--n-traj",
        "20",
        "--seed",
        "7",
        "--out",
        s(&out),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(
        std::fs::read_to_string(&out).unwrap().lines().count(),
        20 * 50
    );
    let meta = std::fs::read_to_string(dir.path().join("d.meta.json")).unwrap();
    assert!(meta.contains("\"horizon\": 50"));
}

#[test]
fn usage_errors() {
    let o = odr(&["gen-data", "--n", "0", "--seed", "1"]);
    assert_eq!(o.status.code(), Some(2));
    let o = odr(&["fit", "--seed", "1"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("Usage: odr fit"));
    let o = odr(&["gen-data", "--n", "5"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("--seed"));
    let o = odr(&["fit", "--data", "/nonexistent/d.jsonl", "--seed", "1"]);
    assert_eq!(o.status.code(), Some(1));
    let err: serde_json::Value = serde_json::from_slice(&o.stderr).unwrap();
    assert_eq!(err["status"], "error");
}

#[test]
fn edropo_without_bonus_is_dropo() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("d.jsonl");
    assert!(odr(&[
        "gen-data",
        "--family",
        "mass-chain",
        "--mode",
        "trajectory",
        "--n-traj",
        "2",
        "--horizon",
        "30",
        "--policy",
        "sinusoidal",
        "--seed",
        "2",
        "--out",
        s(&data)
    ])
    .status
    .success());
    let a = dir.path().join("a.json");
    let b = dir.path().join("b.json");
    let c = dir.path().join("c.json");
    let csv = dir.path().join("a.csv");
    assert!(odr(&[
        "fit",
        "--data",
        s(&data),
        "--method",
        "edropo",
        "--beta",
        "0",
        "--seed",
        "4",
        "--out",
        s(&a),
        "--csv",
        s(&csv)
    ])
    .status
    .success());
    assert!(odr(&[
        "fit",
        "--data",
        s(&data),
        "--method",
        "dropo",
        "--seed",
        "4",
        "--out",
        s(&b)
    ])
    .status
    .success());
    assert!(odr(&[
        "fit",
        "--data",
        s(&data),
        "--method",
        "edropo",
        "--seed",
        "4",
        "--out",
        s(&c)
    ])
    .status
    .success());
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    let ea: serde_json::Value = serde_json::from_slice(&std::fs::read(&a).unwrap()).unwrap();
    let ec: serde_json::Value = serde_json::from_slice(&std::fs::read(&c).unwrap()).unwrap();
    assert_eq!(ec["config"]["objective"]["entropy_weight"], 0.002);
    let mut ea_cfg = ea["config"].clone();
    ea_cfg["objective"]["entropy_weight"] = ec["config"]["objective"]["entropy_weight"].clone();
    assert_eq!(ea_cfg, ec["config"]);
    let table = std::fs::read_to_string(&csv).unwrap();
    assert_eq!(table.lines().next().unwrap(), "dim,mu,sigma,xi_star,error");
    assert_eq!(table.lines().count(), 3);
}

#[test]
fn sweep_csv_has_one_row_per_cell() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("s.csv");
    let out = dir.path().join("s.json");
    let o = odr(&[
        "sweep",
        "--sizes",
        "20,40,80",
        "--trials",
        "2",
        "--iters",
        "5",
        "--n-mc",
        "500",
        "--seed",
        "1",
        "--csv",
        s(&csv),
        "--out",
        s(&out),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(
        std::fs::read_to_string(&csv).unwrap().lines().count(),
        1 + 6
    );
    assert!(String::from_utf8_lossy(&o.stdout).contains("mass@0.1"));
}

#[test]
fn gap_report_carries_bound_check() {
    let o = odr(&[
        "gap", "--m", "3", "--delta", "0.3", "--alpha", "0.9", "--seed", "1",
    ]);
    assert!(o.status.success());
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["instances"][0]["report"]["ratio_bound_holds"], true);
    assert_eq!(v["summary"]["ratio_bound_all_hold"], true);
}

#[test]
fn config_file_precedence() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.json");
    std::fs::write(
        &cfg,
        r#"{"seed": 5, "entropy-demo": {"seed": 6, "sigma": [2.0], "n_mc": 1000}}"#,
    )
    .unwrap();
    let from_file = odr(&["--config", s(&cfg), "entropy-demo"]);
    let explicit = odr(&[
        "entropy-demo",
        "--sigma",
        "2",
        "--n-mc",
        "1000",
        "--seed",
        "6",
    ]);
    assert!(from_file.status.success());
    assert_eq!(from_file.stdout, explicit.stdout);
    let overridden = odr(&["--config", s(&cfg), "entropy-demo", "--seed", "9"]);
    let explicit9 = odr(&[
        "entropy-demo",
        "--sigma",
        "2",
        "--n-mc",
        "1000",
        "--seed",
        "9",
    ]);
    assert_eq!(overridden.stdout, explicit9.stdout);
    std::fs::write(&cfg, r#"{"sed": 5}"#).unwrap();
    assert_eq!(
        odr(&["--config", s(&cfg), "entropy-demo"]).status.code(),
        Some(1)
    );
}

#[test]
fn thread_count_does_not_change_output() {
    let run = |threads: &str| {
        Command::new(env!("CARGO_BIN_EXE_odr"))
            .env("ODR_THREADS", threads)
            .args([
                "sweep", "--sizes", "20,40", "--trials", "3", "--iters", "5", "--n-mc", "500",
                "--seed", "3",
            ])
            .output()
            .unwrap()
    };
    let a = run("1");
    let b = run("3");
    assert!(a.status.success());
    assert_eq!(a.stdout, b.stdout);
}

#[test]
fn fitted_finite_class_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("d.jsonl");
    assert!(odr(&[
        "gen-data",
        "--family",
        "finite-mdp",
        "--n",
        "500",
        "--class-seed",
        "4",
        "--seed",
        "1",
        "--out",
        s(&data)
    ])
    .status
    .success());
    let o = odr(&[
        "fit",
        "--data",
        s(&data),
        "--class-seed",
        "4",
        "--method",
        "mixture",
        "--k",
        "8",
        "--seed",
        "2",
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert!(v["family"].as_str().unwrap().starts_with("finite-mdp"));
}

#[test]
fn failed_checks_exit_with_record() {
    // noiseless data leaves the exact mixture without a density, so every cell fails
    let o = odr(&[
        "sweep", "--noise", "0", "--sizes", "10", "--trials", "2", "--iters", "3", "--n-mc", "100",
        "--seed", "1",
    ]);
    assert_eq!(o.status.code(), Some(3));
    let stderr = String::from_utf8(o.stderr).unwrap();
    let record: serde_json::Value = serde_json::from_str(stderr.lines().last().unwrap()).unwrap();
    assert_eq!(record["status"], "failed");
    assert_eq!(record["failures"].as_array().unwrap().len(), 2);
}
