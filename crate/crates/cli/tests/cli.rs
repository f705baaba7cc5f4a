use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tpn_core::ImageFrame;

fn tpn(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tpn")).current_dir(dir).args(args).output().expect("run tpn")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = tpn(dir, args);
    assert!(out.status.success(), "tpn {args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("configs")
}

#[test]
fn gen_defaults_emit_unit_range_10x10_frames() {
    let tmp = tempfile::tempdir().unwrap();
    ok(tmp.path(), &["gen", "--out", "g", "--set", "gen.frames=25"]);
    let mut pgms: Vec<_> = std::fs::read_dir(tmp.path().join("g/frames")).unwrap().map(|e| e.unwrap().path()).collect();
    pgms.sort();
    assert_eq!(pgms.len(), 25);
    for p in &pgms {
        let f = ImageFrame::read_pgm(p).unwrap();
        assert_eq!((f.width(), f.height()), (10, 10));
        assert!(f.data().iter().all(|v| (0.0..=1.0).contains(v)));
        assert_eq!(f.data().iter().cloned().fold(0.0, f64::max), 1.0);
    }
    let manifest = std::fs::read_to_string(tmp.path().join("g/manifest.csv")).unwrap();
    assert_eq!(manifest.lines().count(), 26);
    assert!(tmp.path().join("g/config.resolved").exists());
}

#[test]
fn missing_input_fails_without_artifacts() {
    let tmp = tempfile::tempdir().unwrap();
    for verb in ["preprocess", "train-sc", "train-psd", "train-local", "train-tpn"] {
        let out = tpn(tmp.path(), &[verb, "--input", "nope.tpn", "--out", "o"]);
        assert!(!out.status.success());
        let err = String::from_utf8(out.stderr).unwrap();
        assert_eq!(err.lines().count(), 1, "{err}");
        assert!(err.starts_with("error: "));
        assert!(!tmp.path().join("o").exists(), "{verb} left output behind");
    }
    let out = tpn(tmp.path(), &["train-psd", "--out", "o"]);
    assert!(!out.status.success());
    assert!(!tmp.path().join("o").exists());
}

#[test]
fn unknown_config_key_is_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    std::fs::write(tmp.path().join("bad.conf"), "gen.frames = 3\nlocal.patch = 4\n").unwrap();
    let out = tpn(tmp.path(), &["gen", "--config", "bad.conf", "--out", "o"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("local.patch"));
    assert!(!tmp.path().join("o").exists());
}

#[test]
fn describe_local_reports_connection_count() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    ok(d, &["gen", "--out", "g", "--set", "gen.kind=dead_leaves", "--set", "gen.frames=1", "--set", "gen.image_size=40"]);
    ok(
        d,
        &[
            "train-local", "--input", "g/frames.tpn", "--out", "l", "--set", "local.patch=5", "--set",
            "local.image=16", "--set", "local.period=none", "--set", "train.frames=1",
        ],
    );
    let text = ok(d, &["describe", "l/model.tpn"]);
    // C * N^2 * P^2 with C = 1, N = 16, P = 5
    assert!(text.contains("nominal connections (C*N^2*P^2): 6400"), "{text}");
    assert!(text.contains("kind: local"));
}

#[test]
fn deterministic_runs_are_bit_identical() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    ok(d, &["gen", "--out", "g", "--set", "gen.kind=dead_leaves", "--set", "gen.frames=2", "--set", "gen.image_size=32"]);
    let train = |out: &str| {
        ok(
            d,
            &[
                "train-psd", "--deterministic", "--seed", "9", "--input", "g/frames.tpn", "--out", out, "--set",
                "model.patch=6", "--set", "model.code=12", "--set", "train.steps=5",
            ],
        );
        std::fs::read(d.join(out).join("model.tpn")).unwrap()
    };
    assert_eq!(train("a"), train("b"));
    let resolved = std::fs::read_to_string(d.join("a/config.resolved")).unwrap();
    assert!(resolved.contains("seed = 9"));
}

#[test]
fn shipped_configs_parse() {
    use tpn_cli::{config::Config, Stage};
    let stage_of = |name: &str| {
        if name.ends_with("_gen.conf") {
            Stage::Gen
        } else if name.ends_with("_preprocess.conf") {
            Stage::Preprocess
        } else if name.ends_with("_train_local.conf") {
            Stage::TrainLocal
        } else if name.ends_with("_train_tpn.conf") {
            Stage::TrainTpn
        } else if name.ends_with("_analyze.conf") {
            Stage::Analyze
        } else {
            Stage::TrainPsd
        }
    };
    let mut n = 0;
    for e in std::fs::read_dir(configs()).unwrap() {
        let p = e.unwrap().path();
        let name = p.file_name().unwrap().to_string_lossy().into_owned();
        Config::load(stage_of(&name), &p).unwrap_or_else(|e| panic!("{name}: {e:#}"));
        n += 1;
    }
    assert!(n >= 8);
}

#[test]
fn tpn_pipeline_writes_responses() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    ok(d, &["gen", "--out", "g", "--set", "gen.frames=40"]);
    ok(d, &["train-tpn", "--input", "g/frames.tpn", "--out", "t"]);
    ok(d, &["tpn-responses", "t/model.tpn", "--out", "r"]);
    let csv = std::fs::read_to_string(d.join("r/tpn_responses.csv")).unwrap();
    // 10 location + 10 invariant units over a 10x10 grid
    assert_eq!(csv.lines().count(), 1 + 20 * 100);
    let report = std::fs::read_to_string(d.join("r/variance_ratios.txt")).unwrap();
    assert!(report.contains("invariant.median_var_x_over_var_y"));
}

#[test]
fn analyze_rejects_frames_container() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    ok(d, &["gen", "--out", "g", "--set", "gen.frames=3"]);
    let out = tpn(d, &["analyze", "g/frames.tpn", "--out", "a"]);
    assert!(!out.status.success());
    assert!(!d.join("a").exists());
}
