use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const BIN: &str = env!("CARGO_BIN_EXE_bitext");

fn bitext(cwd: &Path, args: &[&str]) -> Output {
    Command::new(BIN)
        .current_dir(cwd)
        .env_remove("BITEXT_OUT_DIR")
        .args(args)
        .output()
        .expect("spawn bitext")
}

fn ok(cwd: &Path, args: &[&str]) {
    let out = bitext(cwd, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
}

/// Small synthetic corpus, vocabulary and a briefly trained model in `dir/d`.
fn fixture(dir: &Path) -> PathBuf {
    ok(dir, &["--out-dir", "d", "synth", "--train-pairs", "200", "--test-pairs", "20", "--mono", "50"]);
    ok(dir, &["--out-dir", "d", "build-vocab", "--input", "d/mono.txt", "--input", "d/train_src.txt", "--input", "d/train_tgt.txt", "--vocab-size", "200"]);
    ok(dir, &["--out-dir", "d", "train", "--vocab", "d/vocab.txt", "--pairs", "d/train.tsv", "--steps", "5", "--batch-size", "16"]);
    dir.join("d")
}

#[test]
fn encode_writes_one_row_per_sentence() {
    let tmp = tempfile::tempdir().unwrap();
    let d = fixture(tmp.path());
    fs::write(d.join("three.txt"), "xx\tabc de\nxx\tfg\nyy\tnop qr\n").unwrap();
    ok(tmp.path(), &["--out-dir", "d", "encode", "--vocab", "d/vocab.txt", "--model", "d/model.ckpt", "--input", "d/three.txt", "--name", "three"]);
    let ids = fs::read_to_string(d.join("three.ids")).unwrap();
    assert_eq!(ids.lines().count(), 3);
    let set = bitext_core::EmbeddingSet::load(&d.join("three.pool"), &d.join("three.ids")).unwrap();
    assert_eq!(set.vectors.rows(), 3);
}

#[test]
fn eval_bucc_reports_best_threshold() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    fs::write(dir.join("gold.tsv"), "a\tx\nb\ty\n").unwrap();
    fs::write(dir.join("cands.tsv"), "a\tx\t0.9\nb\tz\t0.8\nb\ty\t0.7\n").unwrap();
    ok(dir, &["--out-dir", "o", "eval-bucc", "--gold", "gold.tsv", "--candidates", "cands.tsv"]);
    let metrics = fs::read_to_string(dir.join("o/eval-bucc.metrics.txt")).unwrap();
    // at 0.7: tp=2, predicted=3, gold=2
    assert!(metrics.contains("f1=0.800000"), "{metrics}");
    assert!(metrics.contains("precision=0.666667"), "{metrics}");
    assert!(metrics.contains("recall=1.000000"), "{metrics}");
    assert!(metrics.contains("threshold=0.700000"), "{metrics}");
}

#[test]
fn train_manifest_records_hyperparameters_and_inputs() {
    let tmp = tempfile::tempdir().unwrap();
    let d = fixture(tmp.path());
    let text = fs::read_to_string(d.join("train.manifest.json")).unwrap();
    let m: serde_json::Value = serde_json::from_str(&text).unwrap();
    assert_eq!(m["config"]["command"]["margin"], 0.3);
    assert_eq!(m["config"]["command"]["scale"], 10.0);
    assert_eq!(m["seed"], 0);
    let inputs = m["inputs"].as_object().unwrap();
    assert!(inputs.keys().any(|k| k.ends_with("train.tsv")));
    assert!(inputs.values().all(|v| v.as_str().unwrap().len() == 64));
    assert!(m["outputs"].as_array().unwrap().iter().any(|o| o == "model.ckpt"));
    // nothing half-written is left behind
    for e in fs::read_dir(&d).unwrap() {
        let name = e.unwrap().file_name().into_string().unwrap();
        assert!(!name.starts_with(".tmp"), "leftover {name}");
    }
}

#[test]
fn config_file_supplies_defaults_and_flags_override() {
    let tmp = tempfile::tempdir().unwrap();
    let d = fixture(tmp.path());
    fs::write(d.join("run.ini"), "[global]\nseed = 5\n\n[train]\nmargin = 0.1\nsteps = 3\nbatch_size = 8\n").unwrap();
    ok(tmp.path(), &["--out-dir", "c", "--config", "d/run.ini", "train", "--vocab", "d/vocab.txt", "--pairs", "d/train.tsv", "--margin", "0.2"]);
    let m: serde_json::Value = serde_json::from_str(&fs::read_to_string(tmp.path().join("c/train.manifest.json")).unwrap()).unwrap();
    assert_eq!(m["seed"], 5);
    assert_eq!(m["config"]["command"]["margin"], 0.2);
    assert_eq!(m["config"]["command"]["steps"], 3);
}

#[test]
fn unknown_flag_is_a_usage_error_naming_the_token() {
    let tmp = tempfile::tempdir().unwrap();
    let out = bitext(tmp.path(), &["train", "--vocab", "v", "--pairs", "p", "--frobnicate"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("--frobnicate"));
}

#[test]
fn missing_input_is_a_data_error() {
    let tmp = tempfile::tempdir().unwrap();
    let out = bitext(tmp.path(), &["--out-dir", "o", "eval-bucc", "--gold", "nope.tsv", "--candidates", "nope2.tsv"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("nope.tsv"));
}

#[test]
fn resume_requires_optimizer_state() {
    let tmp = tempfile::tempdir().unwrap();
    let d = fixture(tmp.path());
    ok(tmp.path(), &["--out-dir", "p", "pretrain", "--vocab", "d/vocab.txt", "--mono", "d/mono.txt", "--steps-per-stage", "2", "--batch-size", "4"]);
    let out = bitext(tmp.path(), &["--out-dir", "r", "train", "--vocab", "d/vocab.txt", "--pairs", "d/train.tsv", "--resume", "p/model.ckpt"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(d.join("model.ckpt").exists());
}

#[test]
fn help_lists_defaults_and_version_prints() {
    let tmp = tempfile::tempdir().unwrap();
    let out = bitext(tmp.path(), &["train", "--help"]);
    assert!(out.status.success());
    let help = String::from_utf8_lossy(&out.stdout);
    assert!(help.contains("--margin"));
    assert!(help.contains("[default: 0.3]"));
    assert!(help.contains("[default: 10]"));
    let out = bitext(tmp.path(), &["--version"]);
    assert!(out.status.success());
    assert!(String::from_utf8_lossy(&out.stdout).starts_with("bitext "));
}
