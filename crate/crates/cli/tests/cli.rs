//! The `hloc` binary end to end on small runs.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::OnceLock;

use haptic_core::map::load_map;
use haptic_core::signal_io::read_trial;
use haptic_core::trajectory::read_log;

fn hloc(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hloc"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = hloc(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

/// Exit code and the stderr text of a failing run, which must be one line.
fn fails(args: &[&str]) -> (i32, String) {
    let out = hloc(args);
    assert!(!out.status.success(), "{args:?} unexpectedly succeeded");
    let err = String::from_utf8(out.stderr).unwrap();
    assert_eq!(err.trim_end().lines().count(), 1, "multi-line error: {err}");
    assert!(err.starts_with("error: "), "{err}");
    (out.status.code().unwrap(), err)
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// A generated data set with one-epoch parameters and a map, shared by the
/// tests of this file.
struct Fixture {
    _dir: tempfile::TempDir,
    data: PathBuf,
    params: PathBuf,
    map: PathBuf,
}

fn fixture() -> &'static Fixture {
    static F: OnceLock<Fixture> = OnceLock::new();
    F.get_or_init(|| {
        let dir = tempfile::tempdir().unwrap();
        let data = dir.path().join("data");
        let params = dir.path().join("p.stnet");
        let map = dir.path().join("m.hmap");
        ok(&["gen", "--out", s(&data), "--trials", "1", "--seed", "5"]);
        let mapping = data.join("mapping.trial.jsonl");
        ok(&[
            "train",
            "--data",
            s(&mapping),
            "--out",
            s(&params),
            "--epochs",
            "1",
            "--embed-dim",
            "8",
            "--seed",
            "5",
        ]);
        ok(&["map", "--trial", s(&mapping), "--params", s(&params), "--out", s(&map)]);
        Fixture {
            _dir: dir,
            data,
            params,
            map,
        }
    })
}

#[test]
fn gen_writes_world_and_trials() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("g");
    let manifest: serde_json::Value = serde_json::from_str(&ok(&["gen", "--out", s(&out)])).unwrap();
    assert_eq!(manifest["localization_trials"].as_array().unwrap().len(), 3);
    for f in [
        "world.json",
        "mapping.trial.jsonl",
        "loc_1.trial.jsonl",
        "loc_2.trial.jsonl",
        "loc_3.trial.jsonl",
    ] {
        assert!(out.join(f).exists(), "{f}");
    }

    let only = dir.path().join("only");
    ok(&["gen", "--out", s(&only), "--trials", "0"]);
    assert!(only.join("mapping.trial.jsonl").exists());
    assert!(!only.join("loc_1.trial.jsonl").exists());
}

#[test]
fn gen_into_a_file_is_an_io_error() {
    let f = tempfile::NamedTempFile::new().unwrap();
    let (code, err) = fails(&["gen", "--out", s(f.path())]);
    assert_eq!(code, 1);
    assert!(err.contains("creating"), "{err}");
}

#[test]
fn train_writes_params_and_loss_log() {
    let f = fixture();
    let p = haptic_core::net::load_params(&f.params).unwrap();
    assert_eq!(p.config.embed_dim, 8);
    let log = std::fs::read_to_string(f.params.with_extension("loss.csv")).unwrap();
    assert_eq!(log.lines().count(), 2);
    // Frozen from a seeded run; guards against silent changes to data
    // generation, initialization or the loss.
    let loss: f64 = log.lines().nth(1).unwrap().split(',').nth(1).unwrap().parse().unwrap();
    assert!((loss - 0.7170688718913605).abs() < 1e-9, "final loss {loss}");
}

#[test]
fn config_file_is_overridden_by_flags() {
    let f = fixture();
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.cfg");
    std::fs::write(&cfg, "# small run\ntrain.epochs = 3\nnet.embed_dim = 4\n").unwrap();
    let params = dir.path().join("p.stnet");
    let mapping = f.data.join("mapping.trial.jsonl");
    ok(&[
        "train",
        "--config",
        s(&cfg),
        "--data",
        s(&mapping),
        "--out",
        s(&params),
        "--epochs",
        "2",
    ]);
    let log = std::fs::read_to_string(params.with_extension("loss.csv")).unwrap();
    assert_eq!(log.lines().count(), 3);
    assert_eq!(haptic_core::net::load_params(&params).unwrap().config.embed_dim, 4);

    std::fs::write(&cfg, "train.epoch = 3\n").unwrap();
    let (code, err) = fails(&["train", "--config", s(&cfg), "--data", s(&mapping), "--out", s(&params)]);
    assert_eq!(code, 1);
    assert!(err.contains("unknown config key"), "{err}");
}

#[test]
fn map_has_one_entry_per_step_and_is_reproducible() {
    let f = fixture();
    let mapping = f.data.join("mapping.trial.jsonl");
    let trial = read_trial(&mapping).unwrap();
    assert_eq!(load_map(&f.map).unwrap().len(), trial.events.len());
    let dir = tempfile::tempdir().unwrap();
    let again = dir.path().join("m.hmap");
    ok(&[
        "map",
        "--trial",
        s(&mapping),
        "--params",
        s(&f.params),
        "--out",
        s(&again),
    ]);
    assert_eq!(std::fs::read(&again).unwrap(), std::fs::read(&f.map).unwrap());
}

#[test]
fn localize_variants_and_eval() {
    let f = fixture();
    let dir = tempfile::tempdir().unwrap();
    let trial = f.data.join("loc_1.trial.jsonl");
    let run = |variant: &str, name: &str| {
        let out = dir.path().join(name);
        ok(&[
            "localize",
            "--trial",
            s(&trial),
            "--map",
            s(&f.map),
            "--params",
            s(&f.params),
            "--variant",
            variant,
            "--out",
            s(&out),
        ]);
        out
    };
    let t = run("hl-t", "a.csv");
    let st = run("hl-st", "b.csv");
    let st2 = run("hl-st", "c.csv");
    assert_eq!(std::fs::read(&st).unwrap(), std::fs::read(&st2).unwrap());
    assert_ne!(std::fs::read(&t).unwrap(), std::fs::read(&st).unwrap());

    let summary: serde_json::Value = serde_json::from_str(&ok(&["eval", "--log", s(&st), "--trial-id", "x"])).unwrap();
    assert_eq!(summary["trial_id"], "x");
    assert_eq!(
        summary["n_steps"].as_u64().unwrap() as usize,
        read_log(&st).unwrap().len()
    );

    let odom = dir.path().join("loc_1.odom.csv");
    ok(&["localize", "--odometry", "--trial", s(&trial), "--out", s(&odom)]);
    let json = dir.path().join("odom.json");
    ok(&["eval", "--log", s(&odom), "--out", s(&json)]);
    let v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&json).unwrap()).unwrap();
    assert_eq!(v["trial_id"], "loc_1");
    assert!(v["t2d"]["mean"].as_f64().unwrap() > 0.0);
}

#[test]
fn perfect_log_has_zero_error() {
    let f = fixture();
    let dir = tempfile::tempdir().unwrap();
    let mut log = read_log({
        let p = dir.path().join("o.csv");
        ok(&[
            "localize",
            "--odometry",
            "--trial",
            s(&f.data.join("loc_1.trial.jsonl")),
            "--out",
            s(&p),
        ]);
        p
    })
    .unwrap();
    for r in &mut log.records {
        r.estimate = r.truth.unwrap();
    }
    let p = dir.path().join("perfect.csv");
    haptic_core::trajectory::write_log(&log, &p).unwrap();
    let v: serde_json::Value = serde_json::from_str(&ok(&["eval", "--log", s(&p)])).unwrap();
    for k in ["mean", "rmse", "median", "max"] {
        assert_eq!(v["t2d"][k], 0.0);
        assert_eq!(v["t3d"][k], 0.0);
    }
}

#[test]
fn dimension_mismatch_is_reported() {
    let f = fixture();
    let dir = tempfile::tempdir().unwrap();
    let other = dir.path().join("p3.stnet");
    let mapping = f.data.join("mapping.trial.jsonl");
    ok(&[
        "train",
        "--data",
        s(&mapping),
        "--out",
        s(&other),
        "--epochs",
        "1",
        "--embed-dim",
        "3",
    ]);
    let (code, err) = fails(&[
        "localize",
        "--trial",
        s(&f.data.join("loc_1.trial.jsonl")),
        "--map",
        s(&f.map),
        "--params",
        s(&other),
        "--out",
        s(&dir.path().join("x.csv")),
    ]);
    assert_eq!(code, 1);
    assert!(err.contains("embed_dim"), "{err}");
}

#[test]
fn usage_errors_exit_with_two() {
    let f = fixture();
    let (code, err) = fails(&[
        "localize",
        "--trial",
        "t",
        "--map",
        "m",
        "--params",
        "p",
        "--variant",
        "hl-x",
        "--out",
        "o",
    ]);
    assert_eq!(code, 2);
    assert!(err.contains("hl-x"), "{err}");
    let (code, _) = fails(&["sweep", "--data", s(&f.data), "--sizes", "", "--out", "o.csv"]);
    assert_eq!(code, 2);
    let (code, _) = fails(&["frobnicate"]);
    assert_eq!(code, 2);
}

#[test]
fn sweep_accepts_size_one() {
    let f = fixture();
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("sweep.csv");
    ok(&[
        "sweep",
        "--data",
        s(&f.data),
        "--sizes",
        "1",
        "--epochs",
        "1",
        "--out",
        s(&out),
        "--seed",
        "5",
    ]);
    let text = std::fs::read_to_string(&out).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "embed_dim,trial_id,t2d_mean");
    assert_eq!(lines.len(), 2);
    assert!(lines[1].starts_with("1,loc_1,"));
}

#[test]
fn bench_requires_enough_samples() {
    let f = fixture();
    let (code, err) = fails(&["bench", "--params", s(&f.params), "--samples", "50"]);
    assert_eq!(code, 1);
    assert!(err.contains("10000"), "{err}");
}
