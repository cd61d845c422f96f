//! Command-level behavior: exit codes, file outputs, error surfacing, and
//! config precedence.

use std::path::Path;
use std::process::{Command, Output};

fn sitgru(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sitgru"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn tiny_train(out: &Path, extra: &[&str]) -> Output {
    let mut args = vec![
        "train",
        "--synth", "default",
        "--epochs", "3",
        "--seed", "5",
        "--frame-size", "12",
        "--synth-len", "30",
        "--synth-object", "4",
        "--strides", "1",
        "--units", "8,4,1",
        "--lr", "0.002",
        "--out",
    ];
    args.extend_from_slice(extra);
    let out_str = out.to_str().unwrap();
    let pos = args.iter().position(|&a| a == "--out").unwrap() + 1;
    args.insert(pos, out_str);
    sitgru(&args)
}

#[test]
fn train_writes_checkpoint_epochs_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let res = tiny_train(&out, &[]);
    assert!(res.status.success(), "{}", stderr(&res));

    let epochs = std::fs::read_to_string(out.join("epochs.csv")).unwrap();
    let lines: Vec<&str> = epochs.lines().collect();
    assert_eq!(lines[0], "epoch,train_loss,val_loss,seconds");
    assert_eq!(lines.len(), 1 + 3, "one row per epoch");
    for row in &lines[1..] {
        let seconds: f64 = row.split(',').nth(3).unwrap().parse().unwrap();
        assert!(seconds > 0.0);
    }
    assert!(out.join("model.ckpt").exists());

    let manifest = std::fs::read_to_string(out.join("run_manifest.json")).unwrap();
    let json: serde_json::Value = serde_json::from_str(&manifest).unwrap();
    assert_eq!(json["command"], "train");
    assert_eq!(json["config"]["seed"], 5);
    assert!(json["version"].is_string());
}

#[test]
fn train_without_data_is_a_usage_error() {
    let res = sitgru(&["train", "--out", "/tmp/sitgru-nodata"]);
    assert_eq!(res.status.code(), Some(1), "{}", stderr(&res));
    assert!(stderr(&res).contains("--data") || stderr(&res).contains("--synth"));
}

#[test]
fn eval_produces_scores_roc_summary_and_optional_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let train_out = dir.path().join("run");
    let res = tiny_train(&train_out, &[]);
    assert!(res.status.success(), "{}", stderr(&res));

    let data_out = dir.path().join("testdata");
    let res = sitgru(&[
        "synth",
        "--seed", "6",
        "--frame-size", "12",
        "--synth-len", "30",
        "--synth-object", "4",
        "--synth-anomaly", "speed",
        "--synth-k", "3",
        "--window", "10:20",
        "--out", data_out.to_str().unwrap(),
    ]);
    assert!(res.status.success(), "{}", stderr(&res));

    let eval_out = dir.path().join("eval");
    let ckpt = train_out.join("model.ckpt");
    let manifest = data_out.join("manifest.jsonl");
    let res = sitgru(&[
        "eval",
        "--checkpoint", ckpt.to_str().unwrap(),
        "--data", manifest.to_str().unwrap(),
        "--svg",
        "--heatmaps",
        "--out", eval_out.to_str().unwrap(),
    ]);
    assert!(res.status.success(), "{}", stderr(&res));

    let scores = std::fs::read_to_string(eval_out.join("scores.csv")).unwrap();
    assert!(scores.starts_with("frame,error,regularity,label,score\n"));
    assert_eq!(scores.lines().count(), 1 + 30);

    let roc = std::fs::read_to_string(eval_out.join("roc.csv")).unwrap();
    assert!(roc.starts_with("threshold,fpr,tpr\n"));

    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(eval_out.join("summary.json")).unwrap())
            .unwrap();
    assert!(summary["auc"].is_number());
    assert!(summary["eer"].is_number());
    assert!(summary["best_epoch"].is_number());

    assert!(eval_out.join("regularity.svg").exists());
    assert!(eval_out.join("roc.svg").exists());
    assert!(eval_out.join("heatmaps").join("00000.pgm").exists());
    assert!(eval_out.join("heatmaps").join("00029.pgm").exists());
}

#[test]
fn eval_with_empty_manifest_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let train_out = dir.path().join("run");
    let res = tiny_train(&train_out, &[]);
    assert!(res.status.success(), "{}", stderr(&res));

    let empty = dir.path().join("empty.jsonl");
    std::fs::write(&empty, "").unwrap();
    let res = sitgru(&[
        "eval",
        "--checkpoint", train_out.join("model.ckpt").to_str().unwrap(),
        "--data", empty.to_str().unwrap(),
        "--out", dir.path().join("eval").to_str().unwrap(),
    ]);
    assert_eq!(res.status.code(), Some(1), "{}", stderr(&res));
}

#[test]
fn eval_with_single_class_labels_surfaces_the_roc_error() {
    let dir = tempfile::tempdir().unwrap();
    let train_out = dir.path().join("run");
    let res = tiny_train(&train_out, &[]);
    assert!(res.status.success(), "{}", stderr(&res));

    // Normal-only synth data: every label is zero.
    let data_out = dir.path().join("normal");
    let res = sitgru(&[
        "synth",
        "--seed", "8",
        "--frame-size", "12",
        "--synth-len", "30",
        "--synth-object", "4",
        "--out", data_out.to_str().unwrap(),
    ]);
    assert!(res.status.success(), "{}", stderr(&res));

    let res = sitgru(&[
        "eval",
        "--checkpoint", train_out.join("model.ckpt").to_str().unwrap(),
        "--data", data_out.join("manifest.jsonl").to_str().unwrap(),
        "--out", dir.path().join("eval").to_str().unwrap(),
    ]);
    assert_eq!(res.status.code(), Some(2), "{}", stderr(&res));
    assert!(
        stderr(&res).contains("at least one positive and one negative"),
        "{}",
        stderr(&res)
    );
}

#[test]
fn missing_checkpoint_is_a_data_error() {
    let res = sitgru(&[
        "eval",
        "--checkpoint", "/nonexistent/model.ckpt",
        "--data", "/nonexistent/manifest.jsonl",
        "--out", "/tmp/sitgru-evalerr",
    ]);
    assert_eq!(res.status.code(), Some(2), "{}", stderr(&res));
    assert!(stderr(&res).contains("model.ckpt"));
}

#[test]
fn gradcheck_exit_codes() {
    let ok = sitgru(&["gradcheck", "--kinds", "sitgru", "--checks", "2", "--out", "/tmp/sitgru-gc"]);
    assert!(ok.status.success(), "{}", stderr(&ok));
    let stdout = String::from_utf8_lossy(&ok.stdout);
    assert!(stdout.contains("PASS sitgru"));

    let bad = sitgru(&[
        "gradcheck", "--kinds", "sitgru", "--checks", "1", "--sabotage",
        "--out", "/tmp/sitgru-gc",
    ]);
    assert_eq!(bad.status.code(), Some(3), "{}", stderr(&bad));
}

#[test]
fn bench_writes_timing_csv() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("bench");
    let res = sitgru(&[
        "bench",
        "--epochs", "2",
        "--seed", "4",
        "--frame-size", "12",
        "--synth-len", "24",
        "--synth-object", "4",
        "--strides", "1",
        "--units", "8,4,1",
        "--out", out.to_str().unwrap(),
    ]);
    assert!(res.status.success(), "{}", stderr(&res));
    let csv = std::fs::read_to_string(out.join("timing.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "kind,min_s,max_s,median_s");
    assert_eq!(lines.len(), 4);
    assert!(lines[1].starts_with("sitgru,"));
    assert!(lines[2].starts_with("gru,"));
    assert!(lines[3].starts_with("lstm,"));
}

#[test]
fn synth_is_deterministic_per_seed() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    for out in [&a, &b] {
        let res = sitgru(&[
            "synth",
            "--seed", "21",
            "--frame-size", "16",
            "--synth-len", "12",
            "--synth-object", "4",
            "--synth-anomaly", "extra_object",
            "--window", "4:8",
            "--out", out.to_str().unwrap(),
        ]);
        assert!(res.status.success(), "{}", stderr(&res));
    }
    for i in 0..12 {
        let name = format!("{i:05}.pgm");
        assert_eq!(
            std::fs::read(a.join(&name)).unwrap(),
            std::fs::read(b.join(&name)).unwrap(),
            "frame {name} differs"
        );
    }
    assert_eq!(
        std::fs::read(a.join("manifest.jsonl")).unwrap(),
        std::fs::read(b.join("manifest.jsonl")).unwrap()
    );
}

#[test]
fn config_file_applies_with_flag_precedence() {
    let dir = tempfile::tempdir().unwrap();
    let cfg_path = dir.path().join("run.cfg");
    std::fs::write(
        &cfg_path,
        "# benchmark defaults\nseed = 33\nframe_size = 12\nsynth_len = 30\nsynth_object = 4\nstrides = 1\nunits = 8,4,1\nepochs = 2\nlr = 0.002\n",
    )
    .unwrap();

    let out = dir.path().join("run");
    let res = sitgru(&[
        "train",
        "--config", cfg_path.to_str().unwrap(),
        "--synth", "default",
        // Flag overrides the file's epochs = 2.
        "--epochs", "3",
        "--out", out.to_str().unwrap(),
    ]);
    assert!(res.status.success(), "{}", stderr(&res));
    let epochs = std::fs::read_to_string(out.join("epochs.csv")).unwrap();
    assert_eq!(epochs.lines().count(), 1 + 3);
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("run_manifest.json")).unwrap())
            .unwrap();
    assert_eq!(manifest["config"]["seed"], 33);
    assert_eq!(manifest["config"]["epochs"], 3);

    let bad_cfg = dir.path().join("bad.cfg");
    std::fs::write(&bad_cfg, "epoks = 3\n").unwrap();
    let res = sitgru(&[
        "train",
        "--config", bad_cfg.to_str().unwrap(),
        "--synth", "default",
        "--out", out.to_str().unwrap(),
    ]);
    assert_eq!(res.status.code(), Some(1));
    assert!(stderr(&res).contains("epoks"), "{}", stderr(&res));
}

#[test]
fn train_accepts_manifest_data() {
    let dir = tempfile::tempdir().unwrap();
    let data_out = dir.path().join("data");
    let res = sitgru(&[
        "synth",
        "--seed", "14",
        "--frame-size", "12",
        "--synth-len", "30",
        "--synth-object", "4",
        "--out", data_out.to_str().unwrap(),
    ]);
    assert!(res.status.success(), "{}", stderr(&res));

    let out = dir.path().join("run");
    let res = sitgru(&[
        "train",
        "--data", data_out.join("manifest.jsonl").to_str().unwrap(),
        "--epochs", "2",
        "--frame-size", "12",
        "--strides", "1",
        "--units", "8,4,1",
        "--lr", "0.002",
        "--out", out.to_str().unwrap(),
    ]);
    assert!(res.status.success(), "{}", stderr(&res));
    assert!(out.join("model.ckpt").exists());
}
