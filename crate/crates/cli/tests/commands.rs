use std::fs;
use std::path::Path;
use std::process::Command as Process;

use caan_cli::commands::*;
use caan_cli::manifest::read_manifest;
use caan_cli::{run, Cli, CliError, EXIT_VALIDATION, MANIFEST_FILE};
use caan_core::data_io::{load_checkpoint, load_dataset, load_features, Annotation};
use caan_core::evaluation::EvalReport;
use caan_core::generator::{Generator, ModelConfig};
use caan_core::training::TrainingConfig;
use clap::Parser;

fn caan(args: &[&str]) -> Result<(), CliError> {
    let argv: Vec<String> = std::iter::once("caan").chain(args.iter().copied()).map(String::from).collect();
    let cli = Cli::try_parse_from(&argv).expect("flags parse");
    run(cli, &argv)
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

const SMALL_SYNTH: [&str; 10] = [
    "--min-frames", "24", "--max-frames", "40", "--feature-dim", "8", "--min-segments", "3", "--max-segments", "5",
];

fn synth(dir: &Path, videos: usize, seed: u64) {
    let (v, sd) = (videos.to_string(), seed.to_string());
    let mut args = vec!["synth", "--out", s(dir), "--videos", &v, "--seed", &sd];
    args.extend(SMALL_SYNTH);
    caan(&args).unwrap();
}

fn dir_bytes(dir: &Path, skip_manifest: bool) -> Vec<(String, Vec<u8>)> {
    let mut out: Vec<(String, Vec<u8>)> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap())
        .filter(|e| !(skip_manifest && e.file_name() == MANIFEST_FILE))
        .map(|e| (e.file_name().into_string().unwrap(), fs::read(e.path()).unwrap()))
        .collect();
    out.sort();
    out
}

#[test]
fn synth_writes_every_video_and_is_reproducible() {
    let tmp = tempfile::tempdir().unwrap();
    let a = tmp.path().join("a");
    caan(&["synth", "--out", s(&a)]).unwrap();
    let ds = load_dataset(&a).unwrap();
    assert_eq!(ds.videos.len(), 25);
    for v in &ds.videos {
        assert!(a.join(format!("{}.feat", v.id)).exists());
        assert!(a.join(format!("{}.json", v.id)).exists());
    }
    assert!(a.join(MANIFEST_FILE).exists());

    let (b, c) = (tmp.path().join("b"), tmp.path().join("c"));
    synth(&b, 4, 7);
    synth(&c, 4, 7);
    assert_eq!(dir_bytes(&b, true), dir_bytes(&c, true));

    let err = caan(&["synth", "--out", s(&tmp.path().join("bad")), "--noise", "-0.5"]).unwrap_err();
    assert_eq!(err.exit_code(), EXIT_VALIDATION);
}

#[test]
fn train_zero_epochs_saves_the_initialization() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    synth(&data, 3, 1);
    let out = tmp.path().join("run");
    caan(&["train", "--data", s(&data), "--out", s(&out), "--model", "tiny", "--epochs", "0", "--seed", "9"]).unwrap();
    let ck = load_checkpoint(&out.join(CHECKPOINT_FILE)).unwrap();
    let cfg = TrainingConfig {
        seed: 9,
        model: ModelConfig::tiny(8),
        ..ck.config.clone()
    };
    let init = Generator::<f32>::new(cfg.model.clone(), cfg.generator_seed()).unwrap();
    assert_eq!(ck.generator.params().fingerprint(), init.params().fingerprint());
    let log = fs::read_to_string(out.join(LOSS_LOG_FILE)).unwrap();
    assert_eq!(log.lines().count(), 1, "header only");
    let m = read_manifest(&out).unwrap();
    assert_eq!(m.command, "train");
    assert_eq!(m.seed, Some(9));
    assert_eq!(m.config["epochs"], 0);
}

#[test]
fn train_reruns_are_byte_identical() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    synth(&data, 3, 2);
    let run_once = |name: &str| {
        let out = tmp.path().join(name);
        caan(&[
            "train", "--data", s(&data), "--out", s(&out), "--model", "tiny", "--epochs", "2", "--lr-generator",
            "1e-3", "--seed", "4", "--checkpoint-every", "1",
        ])
        .unwrap();
        dir_bytes(&out, true)
    };
    let (a, b) = (run_once("r1"), run_once("r2"));
    assert_eq!(a.len(), 4, "two epoch checkpoints, final checkpoint, loss log");
    assert_eq!(a, b);
}

#[test]
fn supervised_training_without_ground_truth_is_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    synth(&data, 2, 3);
    let path = data.join("video_001.json");
    let mut ann: Annotation = serde_json::from_str(&fs::read_to_string(&path).unwrap()).unwrap();
    ann.gt_scores = None;
    fs::write(&path, serde_json::to_string(&ann).unwrap()).unwrap();
    let err = caan(&["train", "--data", s(&data), "--out", s(&tmp.path().join("o")), "--model", "tiny", "--supervised"])
        .unwrap_err();
    assert_eq!(err.exit_code(), EXIT_VALIDATION);
    assert!(err.to_string().contains("video_001"), "{err}");
}

#[test]
fn summarize_matches_in_process_generation() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    synth(&data, 2, 5);
    let run_dir = tmp.path().join("run");
    caan(&["train", "--data", s(&data), "--out", s(&run_dir), "--model", "tiny", "--epochs", "1", "--seed", "2"]).unwrap();
    let ckpt = run_dir.join(CHECKPOINT_FILE);
    let feats = data.join("video_000.feat");
    let out = tmp.path().join("sum");
    caan(&["summarize", "--checkpoint", s(&ckpt), "--features", s(&feats), "--out", s(&out)]).unwrap();

    let x = load_features(&feats).unwrap();
    let table = fs::read_to_string(out.join(SCORES_FILE)).unwrap();
    let scores: Vec<f32> = table.lines().skip(1).map(|l| l.split('\t').nth(1).unwrap().parse().unwrap()).collect();
    assert_eq!(scores.len(), x.rows());
    let (direct, _) = load_checkpoint(&ckpt).unwrap().generator.generate(&x).unwrap();
    assert_eq!(scores, direct);

    let summary: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join(SUMMARY_FILE)).unwrap()).unwrap();
    let selected = summary["selected_frames"].as_u64().unwrap() as usize;
    assert!(selected <= (0.15 * x.rows() as f64).floor() as usize);
    assert!(out.join(MANIFEST_FILE).exists());

    // the annotated change points replace KTS when given
    let ann = data.join("video_000.json");
    let out2 = tmp.path().join("sum2");
    caan(&[
        "summarize", "--checkpoint", s(&ckpt), "--features", s(&feats), "--annotations", s(&ann), "--out", s(&out2),
        "--ratio", "0.5",
    ])
    .unwrap();
    let summary: serde_json::Value = serde_json::from_str(&fs::read_to_string(out2.join(SUMMARY_FILE)).unwrap()).unwrap();
    let planted = load_dataset(&data).unwrap().videos[0].change_points.clone().unwrap();
    let bounds: Vec<usize> =
        summary["shot_boundaries"].as_array().unwrap().iter().map(|v| v.as_u64().unwrap() as usize).collect();
    assert_eq!(bounds, planted.boundaries());

    let other = tmp.path().join("other");
    caan(&["synth", "--out", s(&other), "--videos", "1", "--feature-dim", "5"]).unwrap();
    let err = caan(&[
        "summarize", "--checkpoint", s(&ckpt), "--features", s(&other.join("video_000.feat")), "--out",
        s(&tmp.path().join("x")),
    ])
    .unwrap_err();
    assert_eq!(err.exit_code(), EXIT_VALIDATION);
}

fn eval_args<'a>(data: &'a str, out: &'a str, extra: &[&'a str]) -> Vec<&'a str> {
    let mut v = vec![
        "eval", "--data", data, "--out", out, "--model", "tiny", "--epochs", "1", "--lr-generator", "1e-3", "--seed", "6",
    ];
    v.extend(extra);
    v
}

fn report(dir: &Path) -> EvalReport {
    serde_json::from_str(&fs::read_to_string(dir.join(REPORT_FILE)).unwrap()).unwrap()
}

#[test]
fn canonical_eval_has_five_folds_and_reruns_identically() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    synth(&data, 25, 8);
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    caan(&eval_args(s(&data), s(&a), &["--baseline-draws", "2"])).unwrap();
    caan(&eval_args(s(&data), s(&b), &["--baseline-draws", "2", "--serial"])).unwrap();
    let r = report(&a);
    assert_eq!(r.folds.len(), 5);
    assert!(r.folds.iter().all(|f| f.test_ids.len() == 5 && f.train_ids.len() == 20));
    assert_eq!(r.videos.len(), 25);
    let mean = r.folds.iter().map(|f| f.fscore).sum::<f64>() / 5.0;
    assert!((r.fscore - mean).abs() < 1e-9);
    // parallel and serial fold training give the same bytes
    assert_eq!(dir_bytes(&a, true), dir_bytes(&b, true));
    assert!(a.join(BASELINE_FILE).exists() && a.join(MANIFEST_FILE).exists());

    let few = tmp.path().join("few");
    synth(&few, 4, 1);
    let err = caan(&eval_args(s(&few), s(&tmp.path().join("x")), &[])).unwrap_err();
    assert_eq!(err.exit_code(), EXIT_VALIDATION);
}

#[test]
fn transfer_and_augmented_settings() {
    let tmp = tempfile::tempdir().unwrap();
    let (target, aux) = (tmp.path().join("target"), tmp.path().join("aux"));
    synth(&target, 5, 1);
    let (v, sd) = ("3".to_string(), "2".to_string());
    let mut args = vec!["synth", "--out", s(&aux), "--videos", &v, "--seed", &sd, "--name", "auxset"];
    args.extend(SMALL_SYNTH);
    caan(&args).unwrap();

    let t = tmp.path().join("t");
    caan(&eval_args(s(&target), s(&t), &["--mode", "transfer", "--aux", s(&aux)])).unwrap();
    let r = report(&t);
    assert_eq!(r.folds.len(), 1);
    assert_eq!(r.folds[0].test_ids.len(), 5);
    assert_eq!(r.folds[0].train_ids, ["auxset/video_000", "auxset/video_001", "auxset/video_002"]);

    let g = tmp.path().join("g");
    caan(&eval_args(s(&target), s(&g), &["--mode", "augmented", "--aux", s(&aux)])).unwrap();
    let r = report(&g);
    assert_eq!(r.folds.len(), 5);
    assert!(r.folds.iter().all(|f| f.train_ids.len() == 4 + 3));

    let err = caan(&eval_args(s(&target), s(&tmp.path().join("x")), &["--mode", "transfer"])).unwrap_err();
    assert_eq!(err.exit_code(), EXIT_VALIDATION);
}

#[test]
fn verify_lists_and_runs_suites() {
    let mut buf = Vec::new();
    let args = caan_cli::args::VerifyArgs {
        suites: vec![],
        list: true,
        out: None,
    };
    verify(&args, &[], &mut buf).unwrap();
    assert_eq!(String::from_utf8(buf).unwrap(), "gradients\nknapsack\nsegmentation\nmetrics\n");

    let tmp = tempfile::tempdir().unwrap();
    let mut buf = Vec::new();
    let args = caan_cli::args::VerifyArgs {
        suites: vec!["metrics".into()],
        list: false,
        out: Some(tmp.path().to_path_buf()),
    };
    verify(&args, &[], &mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    assert!(!text.is_empty() && text.lines().all(|l| l.starts_with("PASS metrics/")), "{text}");
    assert!(tmp.path().join(VERIFY_FILE).exists() && tmp.path().join(MANIFEST_FILE).exists());
}

#[test]
fn binary_exit_codes() {
    let bin = env!("CARGO_BIN_EXE_caan");
    let status = |args: &[&str]| Process::new(bin).args(args).output().unwrap().status.code().unwrap();
    assert_eq!(status(&["verify", "--list"]), 0);
    assert_eq!(status(&["verify", "--suite", "nonexistent"]), 2);
    assert_eq!(status(&["frobnicate"]), 2);
    let tmp = tempfile::tempdir().unwrap();
    assert_eq!(status(&["synth", "--out", s(tmp.path()), "--noise", "-1"]), 2);
    let missing = tmp.path().join("missing");
    assert_eq!(status(&["train", "--data", s(&missing), "--out", s(tmp.path())]), 1);
}
