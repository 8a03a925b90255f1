use std::fmt::Write as _;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use caan_core::data_io::{
    assemble_split, gen_synthetic, load_annotations, load_checkpoint, load_dataset, load_features, save_checkpoint,
    save_dataset, Dataset, SyntheticSpec, VideoRecord,
};
use caan_core::evaluation::{evaluate_splits, five_fold_cv, random_baseline, EvalConfig, EvalReport, FoldPlan};
use caan_core::postprocess::{kts_changepoints, summarize_segments, KtsParams, SummaryOptions};
use caan_core::training::{train_with_callback, LossReport, TrainingConfig};
use caan_core::verify::{run_suite, SUITES};
use log::info;
use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::args::{EvalArgs, SummarizeArgs, SynthArgs, TrainArgs, VerifyArgs};
use crate::manifest::{write_manifest, RunClock};
use crate::{write_json, write_text, CliError};

pub const CHECKPOINT_FILE: &str = "model.ckpt";
pub const LOSS_LOG_FILE: &str = "losses.tsv";
pub const SCORES_FILE: &str = "scores.tsv";
pub const SUMMARY_FILE: &str = "summary.json";
pub const REPORT_FILE: &str = "report.json";
pub const VIDEO_TABLE_FILE: &str = "videos.tsv";
pub const BASELINE_FILE: &str = "baseline.json";
pub const VERIFY_FILE: &str = "verify.tsv";

fn load_config<T: DeserializeOwned + Default>(path: Option<&Path>) -> Result<T, CliError> {
    let Some(path) = path else {
        return Ok(T::default());
    };
    let text = fs::read_to_string(path).map_err(|e| CliError::Validation(format!("config {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| CliError::Validation(format!("config {}: {e}", path.display())))
}

fn create_out(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

fn feature_dim(ds: &Dataset) -> Result<usize, CliError> {
    let d = ds
        .videos
        .first()
        .map(|v| v.features.cols())
        .ok_or_else(|| CliError::Validation(format!("dataset `{}` has no videos", ds.name)))?;
    if let Some(v) = ds.videos.iter().find(|v| v.features.cols() != d) {
        return Err(CliError::Validation(format!(
            "dataset `{}` mixes feature widths: `{}` is {}-d, expected {d}",
            ds.name,
            v.id,
            v.features.cols()
        )));
    }
    Ok(d)
}

fn loss_table(history: &[LossReport]) -> String {
    let mut s = String::from("epoch\tadv_d\tadv_g\trec\tspar\tsup\ttotal\n");
    for (e, r) in history.iter().enumerate() {
        let sup = r.sup.map(|v| v.to_string()).unwrap_or_else(|| "NA".into());
        writeln!(s, "{e}\t{}\t{}\t{}\t{}\t{sup}\t{}", r.adv_d, r.adv_g, r.rec, r.spar, r.total).unwrap();
    }
    s
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_else(|| "NA".into())
}

fn video_table(report: &EvalReport) -> String {
    let mut s = String::from("id\tfold\tprecision\trecall\tfscore\tkendall_tau\tspearman_rho\n");
    for v in &report.videos {
        writeln!(
            s,
            "{}\t{}\t{}\t{}\t{}\t{}\t{}",
            v.id,
            v.fold,
            v.precision,
            v.recall,
            v.fscore,
            opt(v.kendall_tau),
            opt(v.spearman_rho)
        )
        .unwrap();
    }
    s
}

pub fn synth(a: &SynthArgs, argv: &[String]) -> Result<(), CliError> {
    let clock = RunClock::start();
    let mut spec: SyntheticSpec = load_config(a.common.config.as_deref())?;
    a.apply(&mut spec);
    let videos = gen_synthetic(&spec)?;
    let ds = Dataset {
        name: a.name.clone(),
        aggregation: a.aggregation.into(),
        videos,
    };
    create_out(&a.common.out)?;
    save_dataset(&a.common.out, &ds)?;
    info!("wrote {} videos to {}", ds.videos.len(), a.common.out.display());
    let outputs = std::iter::once("dataset.json".to_string())
        .chain(ds.videos.iter().flat_map(|v| [format!("{}.feat", v.id), format!("{}.json", v.id)]))
        .collect();
    let inputs = a.common.config.iter().cloned().collect();
    let m = clock.finish("synth", argv, Some(spec.seed), &spec, inputs, outputs);
    write_manifest(&a.common.out, &m)
}

pub fn train(a: &TrainArgs, argv: &[String]) -> Result<(), CliError> {
    let clock = RunClock::start();
    let ds = load_dataset(&a.data)?;
    let mut cfg: TrainingConfig = load_config(a.common.config.as_deref())?;
    a.training.apply(&mut cfg, a.common.seed, feature_dim(&ds)?);
    cfg.validate()?;
    create_out(&a.common.out)?;

    let refs: Vec<&VideoRecord> = ds.videos.iter().collect();
    let mut outputs = vec![CHECKPOINT_FILE.to_string(), LOSS_LOG_FILE.to_string()];
    let out = &a.common.out;
    let outcome = train_with_callback(&refs, &cfg, |ev| {
        info!("epoch {}: total {:.5}", ev.epoch, ev.report.total);
        if cfg.checkpoint_every > 0 && (ev.epoch + 1) % cfg.checkpoint_every == 0 {
            let name = format!("epoch_{:04}.ckpt", ev.epoch + 1);
            save_checkpoint(&out.join(&name), &cfg, &ev.trainer.generator, &ev.trainer.discriminator)?;
            outputs.push(name);
        }
        Ok(())
    })?;
    let t = &outcome.trainer;
    save_checkpoint(&out.join(CHECKPOINT_FILE), &cfg, &t.generator, &t.discriminator)?;
    write_text(&out.join(LOSS_LOG_FILE), &loss_table(&outcome.history))?;

    let mut inputs = vec![a.data.clone()];
    inputs.extend(a.common.config.iter().cloned());
    let m = clock.finish("train", argv, Some(cfg.seed), &cfg, inputs, outputs);
    write_manifest(out, &m)
}

#[derive(Serialize)]
struct SummaryOutput {
    frames: usize,
    ratio: f64,
    budget_frames: usize,
    selected_frames: usize,
    /// Shot boundaries used for selection, `[0, ..., frames]`.
    shot_boundaries: Vec<usize>,
    selected_shots: Vec<usize>,
    /// Half-open `[start, end)` frame intervals.
    intervals: Vec<(usize, usize)>,
}

pub fn summarize(a: &SummarizeArgs, argv: &[String]) -> Result<(), CliError> {
    let clock = RunClock::start();
    let mut opts: SummaryOptions = load_config(a.common.config.as_deref())?;
    a.summary.apply(&mut opts);
    let ck = load_checkpoint(&a.checkpoint)?;
    let x = load_features(&a.features)?;
    let d = ck.generator.config().feature_dim;
    if x.cols() != d {
        return Err(CliError::Validation(format!(
            "{} has {}-d features, checkpoint expects {d}",
            a.features.display(),
            x.cols()
        )));
    }
    let seg = match &a.annotations {
        Some(path) => {
            let ann = load_annotations(path)?;
            match ann.change_points {
                Some(cp) if cp.frames() == x.rows() => Some(cp),
                Some(cp) => {
                    return Err(CliError::Validation(format!(
                        "change points cover {} frames, features have {}",
                        cp.frames(),
                        x.rows()
                    )))
                }
                None => None,
            }
        }
        None => None,
    };
    let seg = match seg {
        Some(s) => s,
        None => kts_changepoints(&x, &opts.kts.unwrap_or_else(|| KtsParams::auto(&x)))?,
    };

    let (scores, _) = ck.generator.generate(&x)?;
    let scores64: Vec<f64> = scores.iter().map(|&s| s as f64).collect();
    let summary = summarize_segments(&scores64, &seg, &opts)?;

    create_out(&a.common.out)?;
    let mut table = String::from("frame\tscore\n");
    for (i, s) in scores.iter().enumerate() {
        writeln!(table, "{i}\t{s}").unwrap();
    }
    write_text(&a.common.out.join(SCORES_FILE), &table)?;
    let out = SummaryOutput {
        frames: x.rows(),
        ratio: opts.ratio,
        budget_frames: summary.budget_frames,
        selected_frames: summary.selected_frames(),
        shot_boundaries: seg.boundaries().to_vec(),
        selected_shots: summary.selected_shots.clone(),
        intervals: summary.intervals(),
    };
    write_json(&a.common.out.join(SUMMARY_FILE), &out)?;

    let mut inputs = vec![a.checkpoint.clone(), a.features.clone()];
    inputs.extend(a.annotations.iter().cloned());
    inputs.extend(a.common.config.iter().cloned());
    let outputs = vec![SCORES_FILE.to_string(), SUMMARY_FILE.to_string()];
    let m = clock.finish("summarize", argv, a.common.seed, opts, inputs, outputs);
    write_manifest(&a.common.out, &m)
}

#[derive(Serialize)]
struct Baseline {
    draws: usize,
    seed: u64,
    fscore: f64,
}

pub fn eval(a: &EvalArgs, argv: &[String]) -> Result<(), CliError> {
    let clock = RunClock::start();
    let target = load_dataset(&a.data)?;
    let auxiliary = a.auxiliary.iter().map(|p| load_dataset(p)).collect::<Result<Vec<_>, _>>()?;
    let d = feature_dim(&target)?;
    for ds in &auxiliary {
        let da = feature_dim(ds)?;
        if da != d {
            return Err(CliError::Validation(format!(
                "auxiliary dataset `{}` is {da}-d, target `{}` is {d}-d",
                ds.name, target.name
            )));
        }
    }

    let mut cfg: EvalConfig = load_config(a.common.config.as_deref())?;
    a.training.apply(&mut cfg.training, a.common.seed, d);
    a.summary.apply(&mut cfg.summary);
    if let Some(k) = a.folds {
        cfg.folds = k;
    }
    cfg.use_change_points &= !a.ignore_change_points;
    cfg.parallel &= !a.serial;
    cfg.training.validate()?;
    let seed = cfg.training.seed;

    let report = match a.mode.into() {
        caan_core::data_io::SplitMode::Canonical => five_fold_cv(&target, &[], &cfg, seed)?,
        mode => {
            let ids: Vec<String> = target.videos.iter().map(|v| v.id.clone()).collect();
            let plan = FoldPlan::new(&ids, cfg.folds, seed)?;
            let splits = assemble_split(mode, &target, &auxiliary, &plan)?;
            evaluate_splits(&target, &auxiliary, &splits, &cfg)?
        }
    };
    info!("F-score {:.2} over {} fold(s)", report.fscore, report.folds.len());

    create_out(&a.common.out)?;
    write_json(&a.common.out.join(REPORT_FILE), &report)?;
    write_text(&a.common.out.join(VIDEO_TABLE_FILE), &video_table(&report))?;
    let mut outputs = vec![REPORT_FILE.to_string(), VIDEO_TABLE_FILE.to_string()];
    if a.baseline_draws > 0 {
        let refs: Vec<&VideoRecord> = target.videos.iter().collect();
        let fscore = random_baseline(&refs, target.aggregation, &cfg, a.baseline_draws, seed)?;
        let b = Baseline {
            draws: a.baseline_draws,
            seed,
            fscore,
        };
        write_json(&a.common.out.join(BASELINE_FILE), &b)?;
        outputs.push(BASELINE_FILE.to_string());
    }

    let mut inputs: Vec<PathBuf> = vec![a.data.clone()];
    inputs.extend(a.auxiliary.iter().cloned());
    inputs.extend(a.common.config.iter().cloned());
    #[derive(Serialize)]
    struct Resolved<'a> {
        mode: caan_core::data_io::SplitMode,
        eval: &'a EvalConfig,
    }
    let resolved = Resolved {
        mode: a.mode.into(),
        eval: &cfg,
    };
    let m = clock.finish("eval", argv, Some(seed), &resolved, inputs, outputs);
    write_manifest(&a.common.out, &m)
}

/// Runs the requested suites, printing one line per case to `w`.
pub fn verify(a: &VerifyArgs, argv: &[String], w: &mut impl Write) -> Result<(), CliError> {
    let io = |e: std::io::Error| CliError::io(Path::new("<stdout>"), e);
    if a.list {
        for s in SUITES {
            writeln!(w, "{s}").map_err(io)?;
        }
        return Ok(());
    }
    let clock = RunClock::start();
    let suites: Vec<String> = if a.suites.is_empty() {
        SUITES.iter().map(|s| s.to_string()).collect()
    } else {
        a.suites.clone()
    };
    let mut table = String::from("suite\tcase\tpassed\tdetail\n");
    let mut failed = Vec::new();
    for suite in &suites {
        let cases = run_suite(suite).ok_or_else(|| CliError::Validation(format!("unknown suite `{suite}`")))?;
        for c in cases {
            let tag = if c.passed { "PASS" } else { "FAIL" };
            writeln!(w, "{tag} {suite}/{}: {}", c.name, c.detail).map_err(io)?;
            writeln!(table, "{suite}\t{}\t{}\t{}", c.name, c.passed, c.detail).unwrap();
            if !c.passed {
                failed.push(format!("{suite}/{}", c.name));
            }
        }
    }
    if let Some(out) = &a.out {
        create_out(out)?;
        write_text(&out.join(VERIFY_FILE), &table)?;
        let m = clock.finish("verify", argv, None, &suites, Vec::new(), vec![VERIFY_FILE.to_string()]);
        write_manifest(out, &m)?;
    }
    if failed.is_empty() {
        Ok(())
    } else {
        Err(CliError::VerifyFailed(failed.join(", ")))
    }
}
