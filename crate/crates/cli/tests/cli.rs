use std::path::Path;
use std::process::{Command, Output};

use serde_json::{json, Value};

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_wif-smc"));
    c.env_remove("WIF_SMC_THREADS");
    c
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn write_json(dir: &Path, name: &str, v: &Value) -> String {
    let p = dir.join(name);
    std::fs::write(&p, serde_json::to_string_pretty(v).unwrap()).unwrap();
    p.to_str().unwrap().to_string()
}

fn ou_config() -> Value {
    json!({
        "model": {
            "initial": "stationary",
            "drift": {"ou": {"theta": 0.1}},
            "diffusion": {"scalar": 1.0},
            "potential": {"box": {"height": 6.0, "center": 0.5, "half_width": 0.1}},
            "horizon": 2.0,
            "grid": {"uniform": {"delta": 0.015625}},
            "transition": "exact_ou"
        },
        "scheme": "systematic-partition",
        "N": 32,
        "seed": 3
    })
}

fn stdout_json(o: &Output) -> Value {
    assert!(o.status.success(), "stderr: {}", String::from_utf8_lossy(&o.stderr));
    serde_json::from_slice(&o.stdout).unwrap()
}

#[test]
fn killing_intensity_total() {
    let v = stdout_json(&run(&["intensity", "--scheme", "killing", "--v", "1,2,3"]));
    assert_eq!(v["schema_version"], 1);
    assert!((v["result"]["total"].as_f64().unwrap() - 2.0).abs() < 1e-12);
    assert_eq!(v["config"]["scheme"], "killing");
}

#[test]
fn pf_run_is_byte_stable() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_json(dir.path(), "ou.json", &ou_config());
    let a = run(&["pf-run", "--config", &cfg, "--seed", "7"]);
    let b = run(&["pf-run", "--config", &cfg, "--seed", "7"]);
    assert!(a.status.success());
    assert_eq!(a.stdout, b.stdout);
    let c = run(&["pf-run", "--config", &cfg, "--seed", "8"]);
    assert_ne!(a.stdout, c.stdout);
}

#[test]
fn echoed_config_reruns_identically() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_json(dir.path(), "ou.json", &ou_config());
    let first = stdout_json(&run(&["pf-run", "--config", &cfg, "--seed", "11"]));
    let echo = write_json(dir.path(), "echo.json", &first["config"]);
    let second = stdout_json(&run(&["pf-run", "--config", &echo]));
    assert_eq!(first, second);

    let v = stdout_json(&run(&["intensity", "--scheme", "stratified-partition", "--v", "0.5,1.5,3,0"]));
    let echo = write_json(dir.path(), "int.json", &v["config"]);
    assert_eq!(stdout_json(&run(&["intensity", "--config", &echo])), v);
}

#[test]
fn zero_weights_fail_with_structured_error() {
    let dir = tempfile::tempdir().unwrap();
    let w = dir.path().join("w.txt");
    std::fs::write(&w, "0\n0\n0\n0\n").unwrap();
    let o = run(&["resample", "--scheme", "multinomial", "--weights", w.to_str().unwrap(), "--seed", "1"]);
    assert_eq!(o.status.code(), Some(1));
    let err: Value = serde_json::from_slice(&o.stderr).unwrap();
    assert_eq!(err["error"], "AllZeroWeights");
}

#[test]
fn unknown_key_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = ou_config();
    cfg["model"]["horizn"] = json!(2.0);
    let p = write_json(dir.path(), "bad.json", &cfg);
    let o = run(&["pf-run", "--config", &p]);
    assert_eq!(o.status.code(), Some(2));
    let msg = String::from_utf8_lossy(&o.stderr);
    assert!(msg.contains("horizn"), "{msg}");
}

#[test]
fn wrong_type_names_the_key() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = ou_config();
    cfg["N"] = json!("many");
    let p = write_json(dir.path(), "bad.json", &cfg);
    let o = run(&["pf-run", "--config", &p]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("`N`"));
}

#[test]
fn seeds_are_mandatory() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = ou_config();
    cfg.as_object_mut().unwrap().remove("seed");
    let p = write_json(dir.path(), "noseed.json", &cfg);
    let o = run(&["pf-run", "--config", &p]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("seed"));
}

#[test]
fn unknown_subcommand_is_a_usage_error() {
    assert_eq!(run(&["frobnicate"]).status.code(), Some(2));
}

#[test]
fn threads_do_not_change_sweep_output() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = json!({
        "schemes": ["killing", "ssp-partition", "multinomial"],
        "N": [8, 16],
        "delta_log2": [-2],
        "reps": 4,
        "theta": 0.1, "sigma": 1.0, "height": 6.0, "center": 0.5, "half_width": 0.1,
        "horizon": 2.0,
        "base_seed": 5
    });
    let p = write_json(dir.path(), "sweep.json", &cfg);
    let one = bin().args(["ou-sweep", "--config", &p, "--format", "csv", "--threads", "1"]).output().unwrap();
    let many = bin()
        .args(["ou-sweep", "--config", &p, "--format", "csv"])
        .env("WIF_SMC_THREADS", "3")
        .output()
        .unwrap();
    assert!(one.status.success(), "{}", String::from_utf8_lossy(&one.stderr));
    assert_eq!(one.stdout, many.stdout);
    let text = String::from_utf8(one.stdout).unwrap();
    let mut lines = text.lines();
    assert_eq!(
        lines.next().unwrap(),
        "scheme,N,delta_log2,rep,logZ,filter_est,smooth_est,resample_events,error"
    );
    assert_eq!(lines.count(), 3 * 2 * 4);
}

#[test]
fn csv_output_writes_config_sidecar() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("cox.csv");
    let cfg = json!({"params": {"sigma": 0.3, "alpha": 1.0, "beta": 0.5, "horizon": 20.0}, "seed": 4});
    let p = write_json(dir.path(), "cox.json", &cfg);
    let o = run(&["cox-sim", "--config", &p, "--format", "csv", "--out", out.to_str().unwrap()]);
    assert!(o.status.success());
    let body = std::fs::read_to_string(&out).unwrap();
    assert!(body.starts_with("event_time\n"));
    let meta: Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("cox.csv.meta.json")).unwrap()).unwrap();
    assert_eq!(meta["config"]["seed"], 4);
    assert_eq!(meta["schema_version"], 1);
}

#[test]
fn exact_distribution_sums_to_one() {
    let dir = tempfile::tempdir().unwrap();
    let w = dir.path().join("w.txt");
    std::fs::write(&w, "0.2\n0.5\n0.3\n").unwrap();
    let v = stdout_json(&run(&["exact-dist", "--scheme", "ssp-partition", "--weights", w.to_str().unwrap()]));
    assert!((v["result"]["total_mass"].as_f64().unwrap() - 1.0).abs() < 1e-12);
    let off = v["result"]["expected_offspring"].as_array().unwrap();
    for (o, w) in off.iter().zip([0.2, 0.5, 0.3]) {
        assert!((o.as_f64().unwrap() - 3.0 * w).abs() < 1e-12);
    }
}

#[test]
fn pmmh_smoke() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = json!({
        "params": {"sigma": 0.3, "alpha": 1.0, "beta": 0.5, "horizon": 2.0},
        "data": {"simulate": {"seed": 1}},
        "iterations": 400,
        "burn_in": 100,
        "N": 8,
        "scheme": "ssp-partition",
        "seed": 9,
        "acf_lags": [0, 1, 5]
    });
    let p = write_json(dir.path(), "pmmh.json", &cfg);
    let v = stdout_json(&run(&["pmmh", "--config", &p]));
    let acc = v["result"]["diagnostics"]["acceptance"].as_f64().unwrap();
    assert!(acc > 0.0 && acc < 1.0);
    assert_eq!(v["result"]["diagnostics"]["params"].as_array().unwrap().len(), 3);
    let o = run(&["pmmh", "--config", &p, "--format", "csv"]);
    assert!(o.status.success());
    assert_eq!(String::from_utf8(o.stdout).unwrap().lines().count(), 401);
}

#[test]
fn shipped_pf_config_runs() {
    let cfg = concat!(env!("CARGO_MANIFEST_DIR"), "/../../configs/ou_pf.json");
    let v = stdout_json(&run(&["pf-run", "--config", cfg]));
    assert!(v["result"]["log_z"].as_f64().unwrap().is_finite());
}

#[test]
fn limit_skeleton_csv() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = ou_config();
    cfg.as_object_mut().unwrap().remove("N");
    cfg["limit"] = json!({"n": 3, "skeleton_stride": 1024});
    cfg["paths"] = json!(2);
    let p = write_json(dir.path(), "limit.json", &cfg);
    let o = run(&["limit-sim", "--config", &p, "--format", "csv"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = String::from_utf8(o.stdout).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next().unwrap(), "path,time,particle,coordinate,value");
    // 4096 sub-steps at stride 1024: times 0, 1/4, .., 1 of the horizon
    assert_eq!(lines.count(), 2 * 5 * 3);
}
