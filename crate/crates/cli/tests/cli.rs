use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn mesa(args: &[&str], out_dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mesa"))
        .args(args)
        .env("MESA_OUT_DIR", out_dir)
        .output()
        .expect("spawn mesa")
}

fn stderr_json(out: &Output) -> serde_json::Value {
    let text = String::from_utf8_lossy(&out.stderr);
    serde_json::from_str(text.trim()).unwrap_or_else(|e| panic!("stderr is not JSON ({e}): {text}"))
}

fn write_toy(dir: &Path) -> std::path::PathBuf {
    let cfg = serde_json::json!({
        "network": {"builtin": "lotka_volterra"},
        "simulation": {"theta": [0.3, 0.4, 0.01], "x0": [30, 40], "t_end": 20.0, "dt": 1.0, "n": 4, "seed": 3},
        "prior": {"mean": [-1.6, -1.6, -3.9], "sd": [1.0, 1.0, 1.0]},
        "sampler": {
            "algorithm": "mesa", "lambda": 0.3, "iterations": 60, "burn_in": 10, "seed": 7,
            "likelihood": {"region": {"gamma": 0.1, "w_min": 10}}
        },
        "output": {"prefix": "toy"}
    });
    let p = dir.join("toy.json");
    fs::write(&p, serde_json::to_string_pretty(&cfg).unwrap()).unwrap();
    p
}

#[test]
fn simulate_lv_preset_writes_csv_and_sidecar() {
    let dir = tempfile::tempdir().unwrap();
    let out = mesa(&["simulate", "--preset", "lv20", "--also", "0.5:40"], dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = fs::read_to_string(dir.path().join("lv20_data.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "time,pred,prey");
    assert_eq!(lines.len(), 1 + 1 + 20);
    assert_eq!(lines[1], "0.0,30,40");
    let side: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("lv20_data.json")).unwrap()).unwrap();
    assert_eq!(side["n"], 20);
    assert_eq!(side["seed"], 20);
    // the finer grid comes from the same path
    let fine = fs::read_to_string(dir.path().join("lv20_dt0.5_n40_data.csv")).unwrap();
    let fine: Vec<&str> = fine.lines().collect();
    assert_eq!(fine.len(), 42);
    for i in 1..=20 {
        let a: Vec<&str> = lines[1 + i].split(',').skip(1).collect();
        let b: Vec<&str> = fine[1 + 2 * i].split(',').skip(1).collect();
        assert_eq!(a, b);
    }
}

#[test]
fn simulate_schlogel_preset() {
    let dir = tempfile::tempdir().unwrap();
    let out = mesa(&["simulate", "--preset", "sch50"], dir.path());
    assert!(out.status.success());
    let csv = fs::read_to_string(dir.path().join("sch50_data.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 1 + 50);
}

#[test]
fn horizon_violation_is_a_structured_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = mesa(&["simulate", "--preset", "lv20", "--n", "21"], dir.path());
    assert!(!out.status.success());
    let err = stderr_json(&out);
    assert_eq!(err["error"]["kind"], "config");
    assert_eq!(err["error"]["field"], "simulation.n");
    assert!(!dir.path().join("lv20_data.csv").exists());
}

#[test]
fn missing_dataset_is_a_load_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = mesa(&["tune", "--preset", "lv20", "--data", "/nonexistent/data.csv"], dir.path());
    assert!(!out.status.success());
    let err = stderr_json(&out);
    assert_eq!(err["error"]["field"], "data");
}

#[test]
fn usage_errors_are_json_too() {
    let dir = tempfile::tempdir().unwrap();
    let out = mesa(&["frobnicate"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(stderr_json(&out)["error"]["kind"], "usage");
}

#[test]
fn run_requires_covariance_or_identity() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_toy(dir.path());
    let out = mesa(&["run", "--config", cfg.to_str().unwrap()], dir.path());
    assert!(!out.status.success());
    assert_eq!(stderr_json(&out)["error"]["field"], "sampler.sigma_hat");
}

#[test]
fn mesa_run_writes_all_artefacts() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_toy(dir.path());
    let log = dir.path().join("log.jsonl");
    let out = mesa(
        &[
            "run", "--config", cfg.to_str().unwrap(), "--identity",
            "--run-log", log.to_str().unwrap(), "--dump-generator", "1:2",
        ],
        dir.path(),
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let samples = fs::read_to_string(dir.path().join("toy_mesa_samples.csv")).unwrap();
    let mut lines = samples.lines();
    assert_eq!(
        lines.next().unwrap(),
        "iteration,psi_pred_death,psi_prey_birth,psi_predation,r,log_target,accept_psi,r_accepted,r_proposed"
    );
    assert_eq!(lines.count(), 60 - 10);
    let meta: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("toy_mesa_meta.json")).unwrap()).unwrap();
    assert_eq!(meta["stored"], 50);
    assert_eq!(meta["config"]["dataset"]["observations"].as_array().unwrap().len(), 4);
    let summary: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("toy_mesa_summary.json")).unwrap()).unwrap();
    assert_eq!(summary["samples"], 50);
    assert!(String::from_utf8_lossy(&out.stdout).contains("alpha_psi%"));

    let first: serde_json::Value = serde_json::from_str(fs::read_to_string(&log).unwrap().lines().next().unwrap()).unwrap();
    assert!(first["method"].is_string() && first["rho_t"].is_number());

    let coo = fs::read_to_string(dir.path().join("toy_generator_i1_r2.coo")).unwrap();
    for line in coo.lines() {
        let f: Vec<&str> = line.split_whitespace().collect();
        assert_eq!(f.len(), 3);
        f[2].parse::<f64>().unwrap();
    }

    // summarize re-reads the CSV and agrees with the stored summary
    let again = mesa(
        &[
            "summarize", "--samples", dir.path().join("toy_mesa_samples.csv").to_str().unwrap(),
            "--meta", dir.path().join("toy_mesa_meta.json").to_str().unwrap(), "--json",
        ],
        dir.path(),
    );
    assert!(again.status.success());
    let re: serde_json::Value = serde_json::from_slice(&again.stdout).unwrap();
    assert_eq!(re["quantities"], summary["quantities"]);
}

#[test]
fn nmesa_is_deterministic_and_reproducible_from_metadata() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_toy(dir.path());
    let cfg = cfg.to_str().unwrap();
    let mut csvs = Vec::new();
    for prefix in ["a", "b"] {
        let out = mesa(
            &["run", "--config", cfg, "--identity", "--algorithm", "nmesa", "--prefix", prefix],
            dir.path(),
        );
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        csvs.push(fs::read(dir.path().join(format!("{prefix}_nmesa_samples.csv"))).unwrap());
    }
    assert_eq!(csvs[0], csvs[1]);

    let meta = dir.path().join("a_nmesa_meta.json");
    let out = mesa(&["run", "--meta", meta.to_str().unwrap(), "--prefix", "c"], dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(fs::read(dir.path().join("c_nmesa_samples.csv")).unwrap(), csvs[0]);
}

#[test]
fn flags_override_file_values() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_toy(dir.path());
    let out = mesa(
        &["run", "--config", cfg.to_str().unwrap(), "--identity", "--iterations", "30", "--burn-in", "0"],
        dir.path(),
    );
    assert!(out.status.success());
    let samples = fs::read_to_string(dir.path().join("toy_mesa_samples.csv")).unwrap();
    assert_eq!(samples.lines().count(), 1 + 30);
}

#[test]
fn tune_writes_positive_definite_sigma_and_sweep() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_toy(dir.path());
    let out = mesa(
        &[
            "tune", "--config", cfg.to_str().unwrap(), "--pilot-iterations", "400", "--stages", "2",
            "--sweep", "--grid", "0.95,0.98", "--sweep-iterations", "50",
        ],
        dir.path(),
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let tuned: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("toy_sigma.json")).unwrap()).unwrap();
    let sigma: Vec<Vec<f64>> = serde_json::from_value(tuned["sigma_hat"].clone()).unwrap();
    assert_eq!(sigma.len(), 3);
    let chol: Vec<Vec<f64>> = serde_json::from_value(tuned["chol"].clone()).unwrap();
    assert!((0..3).all(|i| chol[i][i] > 0.0));
    let sweep: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("toy_ghs17_sweep.json")).unwrap()).unwrap();
    assert_eq!(sweep["rows"].as_array().unwrap().len(), 2);

    // the tuned file feeds straight into run
    let out = mesa(
        &[
            "run", "--config", cfg.to_str().unwrap(), "--sigma",
            dir.path().join("toy_sigma.json").to_str().unwrap(), "--algorithm", "ghs17", "--a", "0.95",
        ],
        dir.path(),
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(dir.path().join("toy_ghs17_samples.csv").exists());
}
