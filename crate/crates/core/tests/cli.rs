//! End-to-end runs of the `eqrgan` binary on tiny configurations.

use std::path::Path;
use std::process::{Command, Output};

use eqrgan::experiment::preset;

fn eqrgan(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_eqrgan")).args(args).env("RUST_LOG", "warn").output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

/// A two-agent quadratic spec small enough to train in a second or two.
fn tiny_spec(dir: &Path, precision: &str) -> String {
    let mut s = preset("quad2_smoke").unwrap();
    s.market.steps = 5;
    s.train.rounds = 2;
    s.train.generator_epochs = 2;
    s.train.discriminator_epochs = 2;
    s.train.batch = 16;
    s.train.pilot_paths = 32;
    s.train.generator.net.hidden = vec![8];
    s.train.discriminator.net.hidden = vec![8];
    s.evaluation.paths = 64;
    let mut v = serde_json::to_value(&s).unwrap();
    v["train"]["precision"] = serde_json::json!(precision);
    let path = dir.join(format!("tiny-{precision}.json"));
    std::fs::write(&path, v.to_string()).unwrap();
    path.to_str().unwrap().to_string()
}

#[test]
fn train_evaluate_compare_round_trip() {
    let tmp = tempfile::tempdir().unwrap();
    let spec = tiny_spec(tmp.path(), "f32");
    let out = tmp.path().join("run");
    let o = eqrgan(&["train", "--spec", &spec, "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    for f in ["params.ckpt", "trainlog.csv", "resolved-spec.json"] {
        assert!(out.join(f).exists(), "{f} missing");
    }
    let log = std::fs::read_to_string(out.join("trainlog.csv")).unwrap();
    assert_eq!(log.lines().count(), 1 + 2 * (2 + 2));

    let ckpt = out.join("params.ckpt");
    let ev = tmp.path().join("eval");
    let o = eqrgan(&["evaluate", "--spec", &spec, "--ckpt", ckpt.to_str().unwrap(), "--out", ev.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let printed = String::from_utf8_lossy(&o.stdout);
    let row: Vec<f64> = printed.lines().nth(1).unwrap().split_whitespace().map(|v| v.parse().unwrap()).collect();
    let m = eqrgan::cli::read_metrics(&ev.join("metrics.json")).unwrap();
    for (p, v) in row.iter().zip(m) {
        assert!((p - v).abs() <= 1e-4 * v.abs(), "{p} vs {v}");
    }
    for f in ["series.csv", "trajectories.csv"] {
        assert!(ev.join(f).exists(), "{f} missing");
    }

    let metrics = ev.join("metrics.json");
    let o = eqrgan(&["compare", metrics.to_str().unwrap(), metrics.to_str().unwrap()]);
    assert_eq!(code(&o), 0);
    let table = String::from_utf8_lossy(&o.stdout);
    assert_eq!(table.matches("0.00%").count(), 4, "{table}");
}

#[test]
fn oracle_writes_metrics_and_coefficients() {
    let tmp = tempfile::tempdir().unwrap();
    let o = eqrgan(&["oracle", "--preset", "quad2_smoke", "--paths", "1", "--out", tmp.path().to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    for f in ["metrics.json", "series.csv", "trajectories.csv", "oracle.csv"] {
        assert!(tmp.path().join(f).exists(), "{f} missing");
    }
    let m = eqrgan::cli::read_metrics(&tmp.path().join("metrics.json")).unwrap();
    assert!(m[1] < 1e-20 && m[2] < 1e-20, "{m:?}");
}

#[test]
fn oracle_refuses_power_costs() {
    let tmp = tempfile::tempdir().unwrap();
    let o = eqrgan(&["oracle", "--preset", "power2", "--out", tmp.path().to_str().unwrap()]);
    assert_eq!(code(&o), 2);
}

#[test]
fn f64_training_is_reproducible() {
    let tmp = tempfile::tempdir().unwrap();
    let spec = tiny_spec(tmp.path(), "f64");
    let mut metrics = Vec::new();
    for run in ["a", "b"] {
        let out = tmp.path().join(run);
        let o = eqrgan(&["train", "--spec", &spec, "--out", out.to_str().unwrap()]);
        assert_eq!(code(&o), 0, "{}", stderr(&o));
        let ckpt = out.join("params.ckpt");
        let o = eqrgan(&["evaluate", "--spec", &spec, "--ckpt", ckpt.to_str().unwrap(), "--out", out.to_str().unwrap()]);
        assert_eq!(code(&o), 0, "{}", stderr(&o));
        metrics.push(std::fs::read(out.join("metrics.json")).unwrap());
    }
    assert_eq!(metrics[0], metrics[1]);
}

#[test]
fn invalid_market_exits_with_two_and_lists_violations() {
    let tmp = tempfile::tempdir().unwrap();
    let mut v = serde_json::to_value(preset("quad10").unwrap()).unwrap();
    v["roster"][0]["endowment_vol"] = serde_json::json!(100.0);
    v["market"]["cost_level"] = serde_json::json!(-1.0);
    let path = tmp.path().join("bad.json");
    std::fs::write(&path, v.to_string()).unwrap();
    let o = eqrgan(&["oracle", "--spec", path.to_str().unwrap(), "--out", tmp.path().to_str().unwrap()]);
    assert_eq!(code(&o), 2);
    let err = stderr(&o);
    assert!(err.contains("aggregate endowment nonzero"), "{err}");
    assert!(err.contains("cost level"), "{err}");
}

#[test]
fn io_and_format_errors_map_to_exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let o = eqrgan(&["oracle", "--spec", "/nonexistent/spec.json"]);
    assert_eq!(code(&o), 4);
    let a = tmp.path().join("a.json");
    std::fs::write(&a, r#"{"sum_j": -0.2, "clearing": 1e-5, "s0": 0.36}"#).unwrap();
    let o = eqrgan(&["compare", a.to_str().unwrap(), a.to_str().unwrap()]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("terminal"), "{}", stderr(&o));
    let o = eqrgan(&["train"]);
    assert_eq!(code(&o), 2);
}
