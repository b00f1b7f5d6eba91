use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn wheelleg(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_wheelleg"))
        .args(args)
        .current_dir(cwd)
        .env("WHEELLEG_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn read_json(p: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(p).unwrap()).unwrap()
}

/// Two-iteration run on a handful of environments.
fn tiny_checkpoint(dir: &Path) -> std::path::PathBuf {
    let o = wheelleg(
        &["train", "--morphology", "flores", "--toy", "--envs", "4", "--iters", "2", "--seed", "7", "--out", "run"],
        dir,
    );
    assert!(o.status.success(), "{}", stderr(&o));
    dir.join("run/checkpoints/final.bin")
}

#[test]
fn unknown_flag_is_a_usage_error_naming_it() {
    let dir = tempfile::tempdir().unwrap();
    let o = wheelleg(&["train", "--morphology", "flores", "--out", "x", "--bogus"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("--bogus"));

    let o = wheelleg(&["eval", "--protocol", "circle", "--checkpoint", "c.bin", "--seed", "3"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("--radius"), "{}", stderr(&o));

    let o = wheelleg(
        &["eval", "--protocol", "circle", "--radius", "0", "--scripted", "--morphology", "flores"],
        dir.path(),
    );
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("--radius"), "{}", stderr(&o));

    let o = wheelleg(&["train", "--morphology", "quadcopter", "--out", "x"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("--morphology"), "{}", stderr(&o));
}

#[test]
fn missing_checkpoint_is_an_io_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = wheelleg(
        &["eval", "--protocol", "circle", "--radius", "0.5", "--checkpoint", "c.bin", "--seed", "3"],
        dir.path(),
    );
    assert_eq!(o.status.code(), Some(1));
    let e = stderr(&o);
    assert!(e.contains("c.bin") && e.contains("i/o"), "{e}");
    assert!(!dir.path().join("circle_r0.5_seed3.report.json").exists());
}

#[test]
fn train_writes_checkpoints_curve_and_echo() {
    let dir = tempfile::tempdir().unwrap();
    let ckpt = tiny_checkpoint(dir.path());
    assert!(ckpt.exists());
    let curve = std::fs::read_to_string(dir.path().join("run/curve.csv")).unwrap();
    assert_eq!(curve.lines().count(), 3);
    let run = read_json(&dir.path().join("run/run.json"));
    assert_eq!(run["seed"], 7);
    assert!(run["build"].as_str().unwrap().starts_with("wheelleg-core"));
    assert_eq!(run["echo"]["train"]["num_envs"], 4);

    let o = wheelleg(&["inspect", "run/checkpoints/final.bin"], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let v: Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(v["kind"], "checkpoint");
    assert_eq!(v["seed"], 7);
    assert_eq!(v["iteration"], 2);
}

#[test]
fn replay_is_byte_identical_across_runs() {
    let dir = tempfile::tempdir().unwrap();
    tiny_checkpoint(dir.path());
    let ck = "run/checkpoints/final.bin";
    let a = wheelleg(
        &["--threads", "1", "replay", "--checkpoint", ck, "--seed", "3", "--steps", "40", "--out", "a.csv"],
        dir.path(),
    );
    let b = wheelleg(
        &["--threads", "1", "replay", "--checkpoint", ck, "--seed", "3", "--steps", "40", "--out", "b.csv"],
        dir.path(),
    );
    assert!(a.status.success() && b.status.success(), "{}", stderr(&a));
    assert_eq!(stdout(&a), stdout(&b));
    assert_eq!(stdout(&a).trim().len(), 64);
    let ta = std::fs::read(dir.path().join("a.csv")).unwrap();
    assert_eq!(ta, std::fs::read(dir.path().join("b.csv")).unwrap());
    let meta = read_json(&dir.path().join("a.json"));
    assert_eq!(meta["seed"], 3);
    assert_eq!(meta["telemetry_sha256"], stdout(&a).trim());

    let c = wheelleg(&["replay", "--checkpoint", ck, "--seed", "4", "--steps", "40"], dir.path());
    assert_ne!(stdout(&a), stdout(&c));
}

#[test]
fn untrained_policy_surfaces_undefined_cot() {
    let dir = tempfile::tempdir().unwrap();
    tiny_checkpoint(dir.path());
    let o = wheelleg(
        &[
            "eval",
            "--protocol",
            "circle",
            "--radius",
            "0.5",
            "--checkpoint",
            "run/checkpoints/final.bin",
            "--seed",
            "3",
            "--laps",
            "0.1",
        ],
        dir.path(),
    );
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("cost of transport undefined"), "{}", stderr(&o));
}

#[test]
fn scripted_eval_reports_and_compares() {
    let dir = tempfile::tempdir().unwrap();
    for (m, out) in [("flores", "a"), ("baseline", "b")] {
        let o = wheelleg(
            &[
                "eval",
                "--protocol",
                "straight",
                "--speed",
                "0.5",
                "--scripted",
                "--morphology",
                m,
                "--seed",
                "3",
                "--duration",
                "3",
                "--out",
                out,
            ],
            dir.path(),
        );
        assert!(o.status.success(), "{}", stderr(&o));
    }
    let p = dir.path().join("a/straight_flat_v0.5_seed3.report.json");
    let r = read_json(&p);
    assert_eq!(r["seed"], 3);
    assert!(r["build"].as_str().unwrap().starts_with("wheelleg-core"));
    assert!(r["config"]["morphology_params"].is_object());
    assert!(dir.path().join("a/straight_flat_v0.5_seed3.telemetry.csv").exists());
    let series = std::fs::read_to_string(dir.path().join("a/straight_flat_v0.5_seed3.cot.csv")).unwrap();
    assert_eq!(series.lines().count(), 151);

    let o = wheelleg(&["compare", "a", "b", "--out", "cmp.json"], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(stdout(&o).lines().count(), 2);
    let cmp = read_json(&dir.path().join("cmp.json"));
    let row = &cmp["comparison"]["rows"][0];
    let ratio = row["cot_a"].as_f64().unwrap() / row["cot_b"].as_f64().unwrap();
    assert!((row["ratio"].as_f64().unwrap() - ratio).abs() < 1e-12);

    let o = wheelleg(&["inspect", "a/straight_flat_v0.5_seed3.report.json"], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("hardware, not reproducible"));
}

#[test]
fn compare_rejects_mismatched_protocols() {
    let dir = tempfile::tempdir().unwrap();
    for (speed, out) in [("0.5", "a"), ("0.75", "b")] {
        let o = wheelleg(
            &[
                "eval",
                "--protocol",
                "straight",
                "--speed",
                speed,
                "--scripted",
                "--morphology",
                "flores",
                "--duration",
                "2",
                "--out",
                out,
            ],
            dir.path(),
        );
        assert!(o.status.success(), "{}", stderr(&o));
    }
    let o = wheelleg(&["compare", "a", "b"], dir.path());
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("different protocols"), "{}", stderr(&o));
}

#[test]
fn inspect_describes_builtin_morphologies() {
    let dir = tempfile::tempdir().unwrap();
    let o = wheelleg(&["inspect", "--morphology", "baseline"], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let v: Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(v["joints"].as_array().unwrap().len(), 16);
    assert_eq!(v["morphology"], "baseline");
}
