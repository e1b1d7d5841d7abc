//! End-to-end exercises of the `occlugait` binary at miniature scale:
//! dataset generation, detector and backbone training, evaluation,
//! clobber protection, and exit-code contracts.

use std::path::Path;
use std::process::{Command, Output};

fn occlugait(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_occlugait"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn assert_ok(out: &Output) {
    assert!(
        out.status.success(),
        "stdout: {}\nstderr: {}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

fn gen_tiny_dataset(root: &Path) {
    let out = occlugait(&[
        "gen-data",
        "--out",
        root.to_str().unwrap(),
        "--subjects",
        "3",
        "--seqs",
        "2",
        "--frames",
        "12",
        "--seed",
        "7",
    ]);
    assert_ok(&out);
}

#[test]
fn gen_data_writes_tree_and_refuses_clobber() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path().join("data");
    gen_tiny_dataset(&root);
    assert!(root.join("metadata.json").is_file());
    assert!(root.join("resolved_config.json").is_file());
    assert!(root.join("subj_000/seq_00/0000.png").is_file());

    // rerun without --overwrite is a config error (exit 2)
    let out = occlugait(&[
        "gen-data",
        "--out",
        root.to_str().unwrap(),
        "--subjects",
        "3",
        "--seqs",
        "2",
        "--frames",
        "12",
        "--seed",
        "7",
    ]);
    assert_eq!(code(&out), 2);

    // missing parent directory is a config error too
    let out = occlugait(&[
        "gen-data",
        "--out",
        dir.path().join("no/such/parent").to_str().unwrap(),
        "--subjects",
        "1",
    ]);
    assert_eq!(code(&out), 2);
}

#[test]
fn full_pipeline_trains_and_evaluates() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    gen_tiny_dataset(&data);

    // tiny detector: one conv block, small feature width
    let det = dir.path().join("detector.ckpt");
    let out = occlugait(&[
        "train-detector",
        "--data",
        data.to_str().unwrap(),
        "--out",
        det.to_str().unwrap(),
        "--channels",
        "4",
        "--feature-dim",
        "64",
        "--epochs",
        "1",
        "--seed",
        "3",
    ]);
    assert_ok(&out);
    assert!(det.is_file());

    // plain backbone (no injector, no detector needed)
    let plain = dir.path().join("plain.ckpt");
    let out = occlugait(&[
        "train-backbone",
        "--data",
        data.to_str().unwrap(),
        "--out",
        plain.to_str().unwrap(),
        "--channels",
        "2,3,4",
        "--embed-dim",
        "3",
        "--steps",
        "2",
        "--batch-subjects",
        "3",
        "--clips-per-subject",
        "2",
        "--seed",
        "11",
    ]);
    assert_ok(&out);
    let metrics = std::fs::read_to_string(dir.path().join("plain.ckpt.metrics.ndjson")).unwrap();
    assert_eq!(metrics.lines().count(), 2);

    // awareness-injected backbone requires --detector
    let aware = dir.path().join("aware.ckpt");
    let missing_det = occlugait(&[
        "train-backbone",
        "--data",
        data.to_str().unwrap(),
        "--out",
        aware.to_str().unwrap(),
        "--variant",
        "deferred-concat",
        "--channels",
        "2,3,4",
        "--embed-dim",
        "3",
        "--steps",
        "1",
    ]);
    assert_eq!(code(&missing_det), 2);

    let out = occlugait(&[
        "train-backbone",
        "--data",
        data.to_str().unwrap(),
        "--out",
        aware.to_str().unwrap(),
        "--variant",
        "deferred-concat",
        "--detector",
        det.to_str().unwrap(),
        "--channels",
        "2,3,4",
        "--embed-dim",
        "3",
        "--steps",
        "2",
        "--batch-subjects",
        "3",
        "--clips-per-subject",
        "2",
        "--seed",
        "11",
    ]);
    assert_ok(&out);

    // evaluating the injected model without a detector is a config error
    let eval_dir = dir.path().join("eval_aware");
    let out = occlugait(&[
        "evaluate",
        "--data",
        data.to_str().unwrap(),
        "--model",
        aware.to_str().unwrap(),
        "--out",
        eval_dir.to_str().unwrap(),
        "--runs",
        "1",
        "--ranks",
        "1",
    ]);
    assert_eq!(code(&out), 2);

    let out = occlugait(&[
        "evaluate",
        "--data",
        data.to_str().unwrap(),
        "--model",
        aware.to_str().unwrap(),
        "--detector",
        det.to_str().unwrap(),
        "--out",
        eval_dir.to_str().unwrap(),
        "--runs",
        "1",
        "--ranks",
        "1,2",
        "--seed",
        "5",
    ]);
    assert_ok(&out);
    assert!(eval_dir.join("report.json").is_file());
    assert!(eval_dir.join("report.csv").is_file());
    assert!(eval_dir.join("protocol.csv").is_file());
    assert!(eval_dir.join("manifests/run_000.csv").is_file());

    // replaying the persisted manifests reproduces the report bit-exactly
    let replay_dir = dir.path().join("eval_replay");
    let out = occlugait(&[
        "evaluate",
        "--data",
        data.to_str().unwrap(),
        "--model",
        aware.to_str().unwrap(),
        "--detector",
        det.to_str().unwrap(),
        "--out",
        replay_dir.to_str().unwrap(),
        "--runs",
        "1",
        "--ranks",
        "1,2",
        "--seed",
        "5",
        "--replay",
        eval_dir.join("manifests").to_str().unwrap(),
    ]);
    assert_ok(&out);
    let a: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(eval_dir.join("report.json")).unwrap())
            .unwrap();
    let b: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(replay_dir.join("report.json")).unwrap())
            .unwrap();
    assert_eq!(a["per_run"], b["per_run"]);
}

#[test]
fn training_is_deterministic_across_reruns() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    gen_tiny_dataset(&data);
    let mut logs = Vec::new();
    for name in ["a.ckpt", "b.ckpt"] {
        let out_path = dir.path().join(name);
        let out = occlugait(&[
            "train-backbone",
            "--data",
            data.to_str().unwrap(),
            "--out",
            out_path.to_str().unwrap(),
            "--channels",
            "2,3,4",
            "--embed-dim",
            "3",
            "--steps",
            "2",
            "--batch-subjects",
            "3",
            "--clips-per-subject",
            "2",
            "--seed",
            "21",
        ]);
        assert_ok(&out);
        let mut log_path = out_path.into_os_string();
        log_path.push(".metrics.ndjson");
        logs.push(std::fs::read(log_path).unwrap());
    }
    assert_eq!(logs[0], logs[1]);
}

#[test]
fn evaluate_reports_missing_videos_as_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    gen_tiny_dataset(&data);
    let model = dir.path().join("m.ckpt");
    let out = occlugait(&[
        "train-backbone",
        "--data",
        data.to_str().unwrap(),
        "--out",
        model.to_str().unwrap(),
        "--channels",
        "2,3,4",
        "--embed-dim",
        "3",
        "--steps",
        "1",
        "--batch-subjects",
        "3",
        "--clips-per-subject",
        "2",
    ]);
    assert_ok(&out);

    // protocol referencing a video absent from the dataset -> exit 4
    let protocol = dir.path().join("protocol.csv");
    std::fs::write(
        &protocol,
        "role,video_id,subject_id,condition,start,end\n\
         gallery,subj_000/seq_00,subj_000,all,,\n\
         probe,subj_000/seq_99,subj_000,all,,\n",
    )
    .unwrap();
    let out = occlugait(&[
        "evaluate",
        "--data",
        data.to_str().unwrap(),
        "--model",
        model.to_str().unwrap(),
        "--protocol",
        protocol.to_str().unwrap(),
        "--out",
        dir.path().join("eval").to_str().unwrap(),
        "--runs",
        "1",
        "--ranks",
        "1",
    ]);
    assert_eq!(code(&out), 4);

    // missing model checkpoint -> exit 4
    let out = occlugait(&[
        "evaluate",
        "--data",
        data.to_str().unwrap(),
        "--model",
        dir.path().join("ghost.ckpt").to_str().unwrap(),
        "--out",
        dir.path().join("eval2").to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 4);

    // missing dataset root -> exit 4
    let out = occlugait(&[
        "evaluate",
        "--data",
        dir.path().join("nodata").to_str().unwrap(),
        "--model",
        model.to_str().unwrap(),
        "--out",
        dir.path().join("eval3").to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 4);
}

#[test]
fn sliced_and_cross_modes_emit_tables() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    gen_tiny_dataset(&data);
    let model = dir.path().join("m.ckpt");
    let out = occlugait(&[
        "train-backbone",
        "--data",
        data.to_str().unwrap(),
        "--out",
        model.to_str().unwrap(),
        "--channels",
        "2,3,4",
        "--embed-dim",
        "3",
        "--steps",
        "1",
        "--batch-subjects",
        "3",
        "--clips-per-subject",
        "2",
    ]);
    assert_ok(&out);

    for (mode, expected_rows) in [("sliced", 3), ("cross", 2)] {
        let eval_dir = dir.path().join(format!("eval_{mode}"));
        let out = occlugait(&[
            "evaluate",
            "--data",
            data.to_str().unwrap(),
            "--model",
            model.to_str().unwrap(),
            "--out",
            eval_dir.to_str().unwrap(),
            "--mode",
            mode,
            "--runs",
            "1",
            "--ranks",
            "1",
        ]);
        assert_ok(&out);
        let report: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(eval_dir.join("report.json")).unwrap())
                .unwrap();
        assert_eq!(report["rows"].as_array().unwrap().len(), expected_rows);
    }
}
