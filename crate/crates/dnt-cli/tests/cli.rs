//! End-to-end tests of the `dnt` binary: exit codes, artifact layout, and
//! the documented file formats.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn dnt(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dnt"))
        .args(args)
        .current_dir(cwd)
        .output()
        .expect("binary runs")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("no signal")
}

/// Two-class toy dataset; returns the manifest path.
fn tiny_dataset(dir: &Path) -> PathBuf {
    let out = dnt(
        &[
            "synth",
            "--classes",
            "2",
            "--per-class",
            "6",
            "--size",
            "32",
            "--seed",
            "1",
            "--out",
            "data",
        ],
        dir,
    );
    assert_eq!(code(&out), 0, "synth failed: {}", stderr(&out));
    dir.join("data/manifest.csv")
}

/// Overrides shrinking the desk model enough for test-speed training.
fn tiny_model_args() -> Vec<&'static str> {
    vec![
        "--override",
        "model.input_size=28",
        "--override",
        "model.backbone=[4,8]",
        "--override",
        "model.patch_side=16",
        "--override",
        "model.lstm_hidden=8",
        "--override",
        "model.num_classes=2",
        "--override",
        "augmentation.crop_size=28",
        "--override",
        "training.epochs=2",
    ]
}

#[test]
fn synth_writes_dataset_and_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let args = [
        "synth", "--classes", "2", "--per-class", "3", "--size", "32", "--seed", "7", "--out",
    ];
    let out = dnt(&[&args[..], &["a"]].concat(), dir.path());
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    assert!(stdout(&out).contains("6 images"));
    let out = dnt(&[&args[..], &["b"]].concat(), dir.path());
    assert_eq!(code(&out), 0);
    for k in 0..2 {
        for i in 0..3 {
            let rel = format!("class_{k}/{i:04}.pgm");
            assert_eq!(
                fs::read(dir.path().join("a").join(&rel)).unwrap(),
                fs::read(dir.path().join("b").join(&rel)).unwrap(),
                "{rel}"
            );
        }
    }
    assert!(dir.path().join("a/manifest.csv").exists());
}

#[test]
fn synth_rejects_one_class_with_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let out = dnt(&["synth", "--classes", "1", "--out", "x"], dir.path());
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("classes"));
}

#[test]
fn extract_lbp_default_configs_emit_1024_columns() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = tiny_dataset(dir.path());
    let out = dnt(
        &["extract-lbp", "--manifest", manifest.to_str().unwrap(), "--out", "desc.csv"],
        dir.path(),
    );
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let text = fs::read_to_string(dir.path().join("desc.csv")).unwrap();
    let mut lines = text.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    assert_eq!(header.len(), 1025);
    assert_eq!(header[0], "path");
    assert_eq!(header[1], "f0");
    assert_eq!(header[1024], "f1023");
    assert_eq!(lines.count(), 12);
}

#[test]
fn extract_lbp_two_configs_emit_512_columns_and_constant_image_hits_bin_255() {
    let dir = tempfile::tempdir().unwrap();
    let mut pgm = b"P5\n8 8\n255\n".to_vec();
    pgm.extend(std::iter::repeat(200u8).take(64));
    fs::write(dir.path().join("flat.pgm"), pgm).unwrap();
    let out = dnt(
        &["extract-lbp", "flat.pgm", "--configs", "8,1", "8,2", "--out", "d.csv"],
        dir.path(),
    );
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let text = fs::read_to_string(dir.path().join("d.csv")).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next().unwrap().split(',').count(), 513);
    let row: Vec<&str> = lines.next().unwrap().split(',').collect();
    // Every neighbor equals the center, so >= threshold sets all 8 bits.
    assert_eq!(row[1 + 255], "1");
    assert_eq!(row[1], "0");
}

#[test]
fn extract_lbp_skips_bad_rows_and_fails_only_when_all_fail() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("junk.pgm"), b"not a pgm").unwrap();
    let mut pgm = b"P5\n8 8\n255\n".to_vec();
    pgm.extend(std::iter::repeat(10u8).take(64));
    fs::write(dir.path().join("ok.pgm"), pgm).unwrap();

    let out = dnt(&["extract-lbp", "junk.pgm", "ok.pgm", "--out", "d.csv"], dir.path());
    assert_eq!(code(&out), 0, "one good row suffices: {}", stderr(&out));
    assert!(stderr(&out).contains("junk.pgm"));
    let text = fs::read_to_string(dir.path().join("d.csv")).unwrap();
    assert_eq!(text.lines().count(), 2);

    let out = dnt(&["extract-lbp", "junk.pgm", "--out", "e.csv"], dir.path());
    assert_eq!(code(&out), 1);

    let out = dnt(&["extract-lbp", "--out", "f.csv"], dir.path());
    assert_eq!(code(&out), 2);
}

#[test]
fn train_writes_artifacts_and_logs_per_epoch() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = tiny_dataset(dir.path());
    let mut args = vec!["train", "--manifest", manifest.to_str().unwrap(), "--run-dir", "run"];
    let tiny = tiny_model_args();
    args.extend(tiny.iter());
    let out = dnt(&args, dir.path());
    assert_eq!(code(&out), 0, "{}", stderr(&out));

    let log = fs::read_to_string(dir.path().join("run/epoch-log.csv")).unwrap();
    let lines: Vec<&str> = log.lines().collect();
    assert_eq!(lines[0], "epoch,lr,train_loss,train_acc,seconds");
    assert_eq!(lines.len(), 3, "header plus one row per epoch");
    assert!(dir.path().join("run/checkpoint.ckpt").exists());
    let resolved = fs::read_to_string(dir.path().join("run/resolved-config.toml")).unwrap();
    assert!(resolved.contains("epochs = 2"));
    assert!(resolved.contains("input_size = 28"));
    assert!(stdout(&out).contains("epoch   0"));
}

#[test]
fn train_rejects_unknown_config_key_naming_it() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = tiny_dataset(dir.path());
    let out = dnt(
        &[
            "train",
            "--manifest",
            manifest.to_str().unwrap(),
            "--run-dir",
            "run",
            "--override",
            "training.epcohs=3",
        ],
        dir.path(),
    );
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("epcohs"), "stderr: {}", stderr(&out));
}

#[test]
fn train_without_a_manifest_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = dnt(&["train", "--run-dir", "run"], dir.path());
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("manifest"));
}

#[test]
fn deterministic_runs_reproduce_checkpoints_byte_for_byte() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = tiny_dataset(dir.path());
    for run in ["r1", "r2"] {
        let mut args = vec![
            "train",
            "--manifest",
            manifest.to_str().unwrap(),
            "--run-dir",
            run,
            "--deterministic",
            "--seed",
            "3",
        ];
        let tiny = tiny_model_args();
        args.extend(tiny.iter());
        let out = dnt(&args, dir.path());
        assert_eq!(code(&out), 0, "{}", stderr(&out));
    }
    assert_eq!(
        fs::read(dir.path().join("r1/checkpoint.ckpt")).unwrap(),
        fs::read(dir.path().join("r2/checkpoint.ckpt")).unwrap()
    );
    assert_eq!(
        fs::read(dir.path().join("r1/resolved-config.toml")).unwrap(),
        fs::read(dir.path().join("r2/resolved-config.toml")).unwrap()
    );
    let strip_seconds = |p: &str| -> String {
        fs::read_to_string(dir.path().join(p))
            .unwrap()
            .lines()
            .map(|l| l.rsplit_once(',').unwrap().0.to_string())
            .collect::<Vec<_>>()
            .join("\n")
    };
    assert_eq!(strip_seconds("r1/epoch-log.csv"), strip_seconds("r2/epoch-log.csv"));
}

#[test]
fn eval_reads_a_checkpoint_and_writes_metrics() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = tiny_dataset(dir.path());
    let mut args = vec!["train", "--manifest", manifest.to_str().unwrap(), "--run-dir", "run"];
    let tiny = tiny_model_args();
    args.extend(tiny.iter());
    assert_eq!(code(&dnt(&args, dir.path())), 0);

    let out = dnt(
        &[
            "eval",
            "--checkpoint",
            "run/checkpoint.ckpt",
            "--manifest",
            manifest.to_str().unwrap(),
            "--run-dir",
            "evalrun",
        ],
        dir.path(),
    );
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    assert!(stdout(&out).contains("top1"));

    let metrics: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("evalrun/metrics.json")).unwrap())
            .unwrap();
    let top1 = metrics["top1_accuracy"].as_f64().unwrap();
    assert!((0.0..=100.0).contains(&top1));
    assert_eq!(metrics["total"].as_u64().unwrap(), 4);
    let confusion = fs::read_to_string(dir.path().join("evalrun/confusion.csv")).unwrap();
    assert!(confusion.starts_with("true\\predicted,class_0,class_1"));
}

#[test]
fn eval_with_missing_checkpoint_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = tiny_dataset(dir.path());
    let out = dnt(
        &[
            "eval",
            "--checkpoint",
            "nope.ckpt",
            "--manifest",
            manifest.to_str().unwrap(),
            "--run-dir",
            "e",
        ],
        dir.path(),
    );
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("nope.ckpt"));
}

#[test]
fn ablation_preset_writes_five_rows() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = tiny_dataset(dir.path());
    let mut args = vec![
        "ablation",
        "--manifest",
        manifest.to_str().unwrap(),
        "--run-dir",
        "abl",
        "--override",
        "training.epochs=1",
    ];
    let tiny = tiny_model_args();
    // Drop the epochs=2 override from the shared tiny args; last wins.
    args.extend(tiny.iter());
    args.extend(["--override", "training.epochs=1"]);
    let out = dnt(&args, dir.path());
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let table = fs::read_to_string(dir.path().join("abl/ablation.csv")).unwrap();
    let lines: Vec<&str> = table.lines().collect();
    assert_eq!(lines[0], "label,top1,params");
    assert_eq!(lines.len(), 6, "header plus five variants");
    assert!(lines[1].starts_with("common augmentation, backbone only"));
    assert!(lines[5].starts_with("16 patches, LBP (concatenation)"));

    let out = dnt(&["ablation", "--preset", "bogus", "--run-dir", "x"], dir.path());
    assert_eq!(code(&out), 2);
}

#[test]
fn verify_lbp_suite_passes_and_unknown_suite_is_usage() {
    let dir = tempfile::tempdir().unwrap();
    let out = dnt(&["verify", "--suite", "lbp"], dir.path());
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let text = stdout(&out);
    assert!(text.contains("suite lbp"));
    assert!(text.contains("code maps equal the naive oracle"));
    assert!(text.contains("all checks passed"));

    let out = dnt(&["verify", "--suite", "nope"], dir.path());
    assert_eq!(code(&out), 2);
}

#[test]
fn verify_invariants_suite_passes() {
    let dir = tempfile::tempdir().unwrap();
    let out = dnt(&["verify", "--suite", "invariants"], dir.path());
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    assert!(stdout(&out).contains("erase"));
}
