use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use ltseg_cli::EvalReport;
use ltseg_core::classifier::load_checkpoint;

fn ltseg(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ltseg"))
        .args(args)
        .current_dir(cwd)
        .env_remove("LTSEG_THREADS")
        .output()
        .unwrap()
}

fn ok(args: &[&str], cwd: &Path) -> String {
    let out = ltseg(args, cwd);
    assert!(
        out.status.success(),
        "ltseg {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn write_config(dir: &Path, name: &str, json: &str) -> PathBuf {
    let path = dir.join(name);
    fs::write(&path, json).unwrap();
    path
}

const SMALL: &str = r#"{
  "dataset": {"synthetic": {"num_classes": 5, "feature_dim": 4, "num_sequences": 24, "noise": 1.0, "mean_scale": 0.7}},
  "train": {"epochs": 3, "learning_rate": 0.2}
}"#;

fn read_report(path: &Path) -> EvalReport {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn gen_writes_manifest_and_class_counts() {
    let tmp = tempfile::tempdir().unwrap();
    let csv = ok(&["gen", "--out", "g"], tmp.path());
    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(tmp.path().join("g/data/manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["sequences"].as_array().unwrap().len(), 200);
    assert_eq!(csv, fs::read_to_string(tmp.path().join("g/class_counts.csv")).unwrap());
    assert!(csv.starts_with("class,name,frames,group\n"));
    assert_eq!(csv.lines().count(), 13);
    assert!(tmp.path().join("g/gen_config.json").exists());
}

#[test]
fn gen_is_reproducible() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "c.json", SMALL);
    let cfg = cfg.to_str().unwrap();
    ok(&["gen", "--config", cfg, "--seed", "4", "--out", "a"], tmp.path());
    ok(&["gen", "--config", cfg, "--seed", "4", "--out", "b"], tmp.path());
    ok(&["gen", "--config", cfg, "--seed", "5", "--out", "c"], tmp.path());
    let read = |d: &str| fs::read(tmp.path().join(d).join("data/features/seq00000.bin")).unwrap();
    assert_eq!(read("a"), read("b"));
    assert_ne!(read("a"), read("c"));
    let counts = |d: &str| fs::read_to_string(tmp.path().join(d).join("class_counts.csv")).unwrap();
    assert_eq!(counts("a"), counts("b"));
}

#[test]
fn gen_counts_follow_the_skew() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(
        tmp.path(),
        "c.json",
        r#"{"dataset": {"synthetic": {"num_classes": 10, "class_skew": 1.5, "rng_seed": 1}}}"#,
    );
    let csv = ok(&["gen", "--config", cfg.to_str().unwrap(), "--out", "g"], tmp.path());
    let mut counts: Vec<u64> = csv.lines().skip(1).map(|l| l.split(',').nth(2).unwrap().parse().unwrap()).collect();
    counts.sort_unstable_by(|a, b| b.cmp(a));
    assert!(counts.windows(2).all(|w| w[0] >= w[1]));
    assert!(counts[0] >= 10 * counts[9]);
}

#[test]
fn gen_rejects_manifest_sources() {
    let tmp = tempfile::tempdir().unwrap();
    ok(&["gen", "--out", "g"], tmp.path());
    let cfg = write_config(tmp.path(), "m.json", r#"{"dataset": {"manifest": "g/data"}}"#);
    let out = ltseg(&["gen", "--config", cfg.to_str().unwrap(), "--out", "x"], tmp.path());
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("synthetic"));
}

#[test]
fn train_from_generated_manifest_matches_in_memory_dataset() {
    let tmp = tempfile::tempdir().unwrap();
    let synth = write_config(tmp.path(), "s.json", SMALL);
    ok(&["gen", "--config", synth.to_str().unwrap(), "--out", "g"], tmp.path());
    let manifest = write_config(
        tmp.path(),
        "m.json",
        r#"{"dataset": {"manifest": "g/data/manifest.json"}, "train": {"epochs": 3, "learning_rate": 0.2}}"#,
    );
    ok(&["train", "--config", synth.to_str().unwrap(), "--out", "a"], tmp.path());
    ok(&["train", "--config", manifest.to_str().unwrap(), "--out", "b"], tmp.path());
    let read = |d: &str| fs::read(tmp.path().join(d).join("telemetry.jsonl")).unwrap();
    // features round-trip through f32 files unchanged, so training is identical
    assert_eq!(read("a"), read("b"));
}

#[test]
fn plain_ce_telemetry_has_no_multiplier_fields() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "c.json", SMALL);
    ok(&["train", "--config", cfg.to_str().unwrap(), "--loss", "plain_ce", "--out", "r"], tmp.path());
    let text = fs::read_to_string(tmp.path().join("r/telemetry.jsonl")).unwrap();
    assert_eq!(text.lines().count(), 3);
    for line in text.lines() {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        assert!(v.get("mean_loss").is_some());
        for key in ["lambda_min", "lambda_mean", "lambda_max", "lagrangian", "mean_trans_acc", "violated"] {
            assert!(v.get(key).is_none(), "{key} present in {line}");
        }
    }
    ok(&["train", "--config", cfg.to_str().unwrap(), "--out", "cs"], tmp.path());
    let text = fs::read_to_string(tmp.path().join("cs/telemetry.jsonl")).unwrap();
    let v: serde_json::Value = serde_json::from_str(text.lines().next().unwrap()).unwrap();
    for key in ["lambda_min", "lambda_mean", "lambda_max", "lagrangian", "mean_trans_acc", "violated"] {
        assert!(v.get(key).is_some(), "{key} missing");
    }
}

#[test]
fn zero_epochs_keeps_initialization() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "c.json", SMALL);
    ok(&["train", "--config", cfg.to_str().unwrap(), "--epochs", "0", "--out", "r"], tmp.path());
    let (params, epoch) = load_checkpoint(&tmp.path().join("r/checkpoint.bin")).unwrap();
    assert_eq!(epoch, 0);
    assert!(params.weights.iter().chain(&params.bias).all(|&v| v == 0.0));
    assert!(fs::read_to_string(tmp.path().join("r/telemetry.jsonl")).unwrap().is_empty());
}

#[test]
fn seeded_training_is_reproducible_and_config_echo_reruns() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "c.json", SMALL);
    let cfg = cfg.to_str().unwrap();
    let args = |out: &'static str| ["train", "--config", cfg, "--seed", "3", "--tau", "0.5", "--out", out];
    ok(&args("a"), tmp.path());
    ok(&args("b"), tmp.path());
    let read = |p: &str| fs::read(tmp.path().join(p)).unwrap();
    assert_eq!(read("a/telemetry.jsonl"), read("b/telemetry.jsonl"));
    assert_eq!(read("a/checkpoint.bin"), read("b/checkpoint.bin"));
    let echoed: serde_json::Value = serde_json::from_slice(&read("a/train_config.json")).unwrap();
    assert_eq!(echoed["train"]["tau"], 0.5);
    assert_eq!(echoed["train"]["rng_seed"], 3);
    ok(&["train", "--config", "a/train_config.json", "--out", "c"], tmp.path());
    assert_eq!(read("a/telemetry.jsonl"), read("c/telemetry.jsonl"));
    assert_eq!(read("a/train_config.json"), read("c/train_config.json"));
}

#[test]
fn divergence_exits_nonzero() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(
        tmp.path(),
        "c.json",
        r#"{"dataset": {"synthetic": {"num_classes": 3, "num_sequences": 8}}, "train": {"epochs": 3, "learning_rate": 1e308}}"#,
    );
    let out = ltseg(&["train", "--config", cfg.to_str().unwrap(), "--out", "r"], tmp.path());
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("diverged"), "{err}");
}

#[test]
fn separable_data_scores_near_perfect() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(
        tmp.path(),
        "c.json",
        r#"{
  "dataset": {"synthetic": {"num_classes": 4, "feature_dim": 4, "num_sequences": 40, "noise": 0.0, "mean_scale": 3.0}},
  "train": {"epochs": 20, "learning_rate": 0.5, "context_radius": 0, "loss_mode": "plain_ce"}
}"#,
    );
    let cfg = cfg.to_str().unwrap();
    ok(&["train", "--config", cfg, "--out", "r"], tmp.path());
    for decoder in ["argmax", "ncm", "sncm"] {
        ok(&["eval", "--config", cfg, "--out", "r", "--decode", decoder], tmp.path());
        let m = read_report(&tmp.path().join("r/report.json")).metrics;
        assert!(m.global_acc > 99.9, "{decoder}: {}", m.global_acc);
        assert!(m.per_class_acc > 99.9);
        assert!(m.edit_score > 99.9);
        for f in &m.f1 {
            assert!(f.global > 99.9 && f.per_class > 99.9, "{decoder}: {f:?}");
        }
    }
}

#[test]
fn eval_writes_reports_and_predictions() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "c.json", SMALL);
    let cfg = cfg.to_str().unwrap();
    ok(&["train", "--config", cfg, "--out", "r"], tmp.path());
    let before = fs::read(tmp.path().join("r/checkpoint.bin")).unwrap();
    ok(&["eval", "--config", cfg, "--out", "r", "--decode", "sncm"], tmp.path());
    assert_eq!(before, fs::read(tmp.path().join("r/checkpoint.bin")).unwrap());

    let report = read_report(&tmp.path().join("r/report.json"));
    assert_eq!(report.split, "test");
    assert_eq!(report.checkpoint_epoch, 3);
    let ncm = report.frame_ncm.expect("sncm reports frame-NCM too");
    assert!(report.metrics.edit_score >= ncm.edit_score);
    assert!(report.metrics.head.is_some());
    let csv = fs::read_to_string(tmp.path().join("r/report.csv")).unwrap();
    assert!(csv.starts_with("method,metric,value\nsncm,global_acc,"));
    assert!(csv.contains("\nncm,edit,"));
    assert!(csv.contains("sncm,head_acc,"));
    // 24 sequences, trailing quarter held out
    assert_eq!(fs::read_dir(tmp.path().join("r/predictions")).unwrap().count(), 6);

    ok(&["eval", "--config", cfg, "--out", "r2", "--checkpoint", "r/checkpoint.bin"], tmp.path());
    let argmax = read_report(&tmp.path().join("r2/report.json"));
    assert!(argmax.frame_ncm.is_none());
}

#[test]
fn eval_on_training_split_shows_class_bias() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(
        tmp.path(),
        "c.json",
        r#"{
  "dataset": {"synthetic": {"num_classes": 8, "feature_dim": 8, "num_sequences": 30, "class_skew": 2.0, "noise": 1.0, "mean_scale": 0.5}},
  "train": {"epochs": 2, "learning_rate": 0.1, "loss_mode": "plain_ce"}
}"#,
    );
    let cfg = cfg.to_str().unwrap();
    ok(&["train", "--config", cfg, "--out", "r"], tmp.path());
    ok(&["eval", "--config", cfg, "--out", "r", "--split", "train"], tmp.path());
    let report = read_report(&tmp.path().join("r/report.json"));
    assert_eq!(report.split, "train");
    assert!(report.metrics.global_acc > report.metrics.per_class_acc);
}

#[test]
fn eval_rejects_incompatible_checkpoint() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "c.json", SMALL);
    ok(&["train", "--config", cfg.to_str().unwrap(), "--out", "r"], tmp.path());
    let other = write_config(
        tmp.path(),
        "o.json",
        r#"{"dataset": {"synthetic": {"num_classes": 5, "feature_dim": 6, "num_sequences": 24}}}"#,
    );
    let out = ltseg(
        &["eval", "--config", other.to_str().unwrap(), "--out", "x", "--checkpoint", "r/checkpoint.bin"],
        tmp.path(),
    );
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("feature dimension"));
    assert!(!tmp.path().join("x/report.json").exists());
}

#[test]
fn report_compares_in_given_order() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "c.json", SMALL);
    let cfg = cfg.to_str().unwrap();
    for (dir, loss) in [("ce", "plain_ce"), ("ip", "inverse_prior"), ("cs", "cost_sensitive")] {
        ok(&["train", "--config", cfg, "--loss", loss, "--out", dir], tmp.path());
        ok(&["eval", "--config", cfg, "--out", dir], tmp.path());
    }
    let csv = ok(&["report", "cs/report.json", "ce/report.json", "ip/report.json"], tmp.path());
    let names: Vec<&str> = csv.lines().skip(1).map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(names, ["cs/report.json", "ce/report.json", "ip/report.json"]);
    assert!(csv.lines().nth(1).unwrap().ends_with(",0.00,0.00,0.00,0.00,0.00"));

    let single = ok(&["report", "--format", "json", "ce/report.json"], tmp.path());
    let v: serde_json::Value = serde_json::from_str(&single).unwrap();
    assert_eq!(v["rows"].as_array().unwrap().len(), 1);
    assert!(v["rows"][0]["deltas"].as_array().unwrap().iter().all(|d| d == 0.0));
    let ce = read_report(&tmp.path().join("ce/report.json")).metrics;
    assert_eq!(v["rows"][0]["values"][3], ce.per_class_acc);
}

#[test]
fn report_rejects_mixed_class_counts() {
    let tmp = tempfile::tempdir().unwrap();
    let small = write_config(tmp.path(), "a.json", SMALL);
    let other = write_config(
        tmp.path(),
        "b.json",
        r#"{"dataset": {"synthetic": {"num_classes": 3, "num_sequences": 12}}, "train": {"epochs": 1}}"#,
    );
    for (cfg, dir) in [(&small, "a"), (&other, "b")] {
        ok(&["train", "--config", cfg.to_str().unwrap(), "--out", dir], tmp.path());
        ok(&["eval", "--config", cfg.to_str().unwrap(), "--out", dir], tmp.path());
    }
    let out = ltseg(&["report", "a/report.json", "b/report.json"], tmp.path());
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("classes"));
}

#[test]
fn thread_count_comes_from_environment() {
    let tmp = tempfile::tempdir().unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_ltseg"))
        .args(["gen", "--out", "g"])
        .current_dir(tmp.path())
        .env("LTSEG_THREADS", "0")
        .output()
        .unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("LTSEG_THREADS"));
}

#[test]
fn default_run_directory_uses_config_hash() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "c.json", SMALL);
    ok(&["gen", "--config", cfg.to_str().unwrap()], tmp.path());
    let runs: Vec<_> = fs::read_dir(tmp.path().join("runs")).unwrap().map(|e| e.unwrap().file_name()).collect();
    assert_eq!(runs.len(), 1);
    let name = runs[0].to_str().unwrap();
    let (hash, stamp) = name.split_once('-').unwrap();
    assert_eq!(hash.len(), 12);
    assert!(hash.chars().all(|c| c.is_ascii_hexdigit()));
    assert!(stamp.parse::<u64>().is_ok());
}
