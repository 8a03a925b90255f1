//! Keyshot F-score, rank correlations and the k-fold evaluation harness.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data_io::{check_no_leak, resolve, Dataset, Split, VideoRecord};
use crate::error::{Error, Result};
use crate::generator::Generator;
use crate::postprocess::{scores_to_summary, Summary, SummaryOptions};
use crate::training::{train, TrainingConfig};

pub const DEFAULT_FOLDS: usize = 5;

/// Precision and recall in `[0, 1]`; `fscore` in percent.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct FScore {
    pub precision: f64,
    pub recall: f64,
    pub fscore: f64,
}

impl FScore {
    fn from_pr(precision: f64, recall: f64) -> Self {
        let fscore = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall) * 100.0
        } else {
            0.0
        };
        Self {
            precision,
            recall,
            fscore,
        }
    }
}

/// Temporal-overlap F-score of `pred` against `gt`.
pub fn fscore(pred: &Summary, gt: &Summary) -> Result<FScore> {
    if pred.frames() != gt.frames() {
        return Err(Error::dim(
            "fscore",
            format!("prediction covers {} frames, reference {}", pred.frames(), gt.frames()),
        ));
    }
    let overlap = pred
        .frame_mask
        .iter()
        .zip(&gt.frame_mask)
        .filter(|(&a, &b)| a && b)
        .count() as f64;
    let ratio = |n: usize| if n == 0 { 0.0 } else { overlap / n as f64 };
    Ok(FScore::from_pr(ratio(pred.selected_frames()), ratio(gt.selected_frames())))
}

/// How per-annotator scores are combined.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aggregation {
    /// Best-matching annotator.
    #[default]
    Max,
    /// Average over annotators.
    Mean,
}

/// F-score against several annotators. `Max` reports the best annotator's
/// P/R/F; `Mean` averages each component.
pub fn fscore_multi_user(pred: &Summary, users: &[Summary], mode: Aggregation) -> Result<FScore> {
    if users.is_empty() {
        return Err(Error::degenerate("fscore_multi_user", "no user summaries"));
    }
    let per_user = users.iter().map(|u| fscore(pred, u)).collect::<Result<Vec<_>>>()?;
    Ok(match mode {
        Aggregation::Max => per_user
            .into_iter()
            .reduce(|best, f| if f.fscore > best.fscore { f } else { best })
            .expect("non-empty"),
        Aggregation::Mean => {
            let n = per_user.len() as f64;
            FScore {
                precision: per_user.iter().map(|f| f.precision).sum::<f64>() / n,
                recall: per_user.iter().map(|f| f.recall).sum::<f64>() / n,
                fscore: per_user.iter().map(|f| f.fscore).sum::<f64>() / n,
            }
        }
    })
}

fn check_pair(op: &'static str, a: &[f64], b: &[f64]) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::dim(op, format!("lengths {} and {}", a.len(), b.len())));
    }
    if a.len() < 2 {
        return Err(Error::degenerate(op, format!("{} values, need at least 2", a.len())));
    }
    Ok(())
}

/// Kendall's τ-b.
pub fn kendall_tau(a: &[f64], b: &[f64]) -> Result<f64> {
    check_pair("kendall_tau", a, b)?;
    let n = a.len();
    let (mut concordant, mut discordant) = (0i64, 0i64);
    let (mut ties_a, mut ties_b) = (0i64, 0i64);
    for i in 0..n {
        for j in i + 1..n {
            let da = a[i].partial_cmp(&a[j]);
            let db = b[i].partial_cmp(&b[j]);
            match (da, db) {
                (Some(x), Some(y)) => {
                    use std::cmp::Ordering::Equal;
                    match (x == Equal, y == Equal) {
                        (true, true) => {}
                        (true, false) => ties_a += 1,
                        (false, true) => ties_b += 1,
                        (false, false) if x == y => concordant += 1,
                        (false, false) => discordant += 1,
                    }
                }
                _ => return Err(Error::degenerate("kendall_tau", "NaN in input")),
            }
        }
    }
    let n_a = (concordant + discordant + ties_a) as f64;
    let n_b = (concordant + discordant + ties_b) as f64;
    if n_a == 0.0 || n_b == 0.0 {
        return Err(Error::UndefinedCorrelation("kendall_tau: an input is constant".into()));
    }
    Ok(((concordant - discordant) as f64 / (n_a * n_b).sqrt()).clamp(-1.0, 1.0))
}

/// 1-based ranks, ties sharing their average rank.
pub fn mid_ranks(x: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..x.len()).collect();
    idx.sort_by(|&i, &j| x[i].total_cmp(&x[j]));
    let mut ranks = vec![0.0; x.len()];
    let mut start = 0;
    while start < idx.len() {
        let mut end = start + 1;
        while end < idx.len() && x[idx[end]] == x[idx[start]] {
            end += 1;
        }
        let r = (start + end + 1) as f64 / 2.0;
        for &i in &idx[start..end] {
            ranks[i] = r;
        }
        start = end;
    }
    ranks
}

/// Spearman's ρ: Pearson correlation of mid-ranks.
pub fn spearman_rho(a: &[f64], b: &[f64]) -> Result<f64> {
    check_pair("spearman_rho", a, b)?;
    if a.iter().chain(b).any(|v| v.is_nan()) {
        return Err(Error::degenerate("spearman_rho", "NaN in input"));
    }
    let (ra, rb) = (mid_ranks(a), mid_ranks(b));
    let n = ra.len() as f64;
    let (ma, mb) = (ra.iter().sum::<f64>() / n, rb.iter().sum::<f64>() / n);
    let (mut cov, mut va, mut vb) = (0.0, 0.0, 0.0);
    for (x, y) in ra.iter().zip(&rb) {
        cov += (x - ma) * (y - mb);
        va += (x - ma).powi(2);
        vb += (y - mb).powi(2);
    }
    if va == 0.0 || vb == 0.0 {
        return Err(Error::UndefinedCorrelation("spearman_rho: zero rank variance".into()));
    }
    Ok((cov / (va * vb).sqrt()).clamp(-1.0, 1.0))
}

/// Seeded partition of video ids into near-equal folds.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldPlan {
    pub seed: u64,
    pub folds: Vec<Vec<String>>,
}

impl FoldPlan {
    pub fn new(ids: &[String], k: usize, seed: u64) -> Result<Self> {
        if k < 2 {
            return Err(Error::Config(format!("{k} folds, need at least 2")));
        }
        if ids.len() < k {
            return Err(Error::Config(format!(
                "{}-fold cross-validation needs at least {k} videos, got {}",
                k,
                ids.len()
            )));
        }
        let mut order = ids.to_vec();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let mut folds = vec![Vec::new(); k];
        for (i, id) in order.into_iter().enumerate() {
            folds[i % k].push(id);
        }
        Ok(Self { seed, folds })
    }

    /// Every id outside fold `k`, in fold order.
    pub fn train_ids(&self, k: usize) -> Vec<String> {
        self.folds
            .iter()
            .enumerate()
            .filter(|&(i, _)| i != k)
            .flat_map(|(_, f)| f.iter().cloned())
            .collect()
    }
}

/// Settings shared by every fold.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    pub training: TrainingConfig,
    pub summary: SummaryOptions,
    /// Use annotated change points when a video has them; otherwise
    /// segment with KTS.
    pub use_change_points: bool,
    pub folds: usize,
    /// Train folds concurrently.
    pub parallel: bool,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            training: TrainingConfig::default(),
            summary: SummaryOptions::default(),
            use_change_points: true,
            folds: DEFAULT_FOLDS,
            parallel: true,
        }
    }
}

/// Metrics for one test video.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VideoEval {
    pub id: String,
    pub fold: usize,
    pub precision: f64,
    pub recall: f64,
    pub fscore: f64,
    /// `None` without ground-truth scores or when undefined (constant input).
    pub kendall_tau: Option<f64>,
    pub spearman_rho: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FoldReport {
    pub fold: usize,
    pub train_ids: Vec<String>,
    pub test_ids: Vec<String>,
    pub precision: f64,
    pub recall: f64,
    pub fscore: f64,
    pub kendall_tau: Option<f64>,
    pub spearman_rho: Option<f64>,
    pub epochs_run: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub precision: f64,
    pub recall: f64,
    /// Mean of the per-fold F-scores.
    pub fscore: f64,
    pub kendall_tau: Option<f64>,
    pub spearman_rho: Option<f64>,
    pub folds: Vec<FoldReport>,
    pub videos: Vec<VideoEval>,
}

fn mean(xs: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = xs.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        0.0
    } else {
        s / n as f64
    }
}

fn mean_opt(xs: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let v: Vec<f64> = xs.flatten().collect();
    (!v.is_empty()).then(|| mean(v.into_iter()))
}

fn user_summaries(v: &VideoRecord) -> Result<Vec<Summary>> {
    let users = v
        .user_summaries
        .as_ref()
        .ok_or_else(|| Error::Config(format!("video `{}` has no user summaries", v.id)))?;
    Ok(users.iter().map(|u| Summary::from_intervals(v.frames(), u)).collect())
}

/// Scores a video's frame scores against its annotations.
pub fn evaluate_scores(
    v: &VideoRecord,
    scores: &[f64],
    aggregation: Aggregation,
    summary: &SummaryOptions,
    use_change_points: bool,
) -> Result<(FScore, Option<f64>, Option<f64>)> {
    let seg = if use_change_points { v.change_points.as_ref() } else { None };
    let pred = scores_to_summary(&v.features, scores, seg, summary)?;
    let f = fscore_multi_user(&pred, &user_summaries(v)?, aggregation)?;
    let defined = |r: Result<f64>| match r {
        Ok(x) => Ok(Some(x)),
        Err(Error::UndefinedCorrelation(_)) => Ok(None),
        Err(e) => Err(e),
    };
    let (tau, rho) = match &v.gt_scores {
        Some(gt) => (defined(kendall_tau(scores, gt))?, defined(spearman_rho(scores, gt))?),
        None => (None, None),
    };
    Ok((f, tau, rho))
}

/// Evaluates a trained generator on `videos`.
pub fn evaluate_generator(
    generator: &Generator<f32>,
    videos: &[&VideoRecord],
    fold: usize,
    aggregation: Aggregation,
    cfg: &EvalConfig,
) -> Result<Vec<VideoEval>> {
    videos
        .iter()
        .map(|v| {
            let (scores, _) = generator.generate(&v.features)?;
            let scores: Vec<f64> = scores.iter().map(|&s| s as f64).collect();
            let (f, tau, rho) = evaluate_scores(v, &scores, aggregation, &cfg.summary, cfg.use_change_points)?;
            Ok(VideoEval {
                id: v.id.clone(),
                fold,
                precision: f.precision,
                recall: f.recall,
                fscore: f.fscore,
                kendall_tau: tau,
                spearman_rho: rho,
            })
        })
        .collect()
}

/// Mean F-score of uniformly random frame scores over `draws` draws.
pub fn random_baseline(videos: &[&VideoRecord], aggregation: Aggregation, cfg: &EvalConfig, draws: usize, seed: u64) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut total = 0.0;
    for _ in 0..draws {
        let mut per_video = Vec::with_capacity(videos.len());
        for v in videos {
            let scores: Vec<f64> = (0..v.frames()).map(|_| rng.random::<f64>()).collect();
            per_video.push(evaluate_scores(v, &scores, aggregation, &cfg.summary, cfg.use_change_points)?.0.fscore);
        }
        total += mean(per_video.into_iter());
    }
    Ok(total / draws.max(1) as f64)
}

/// Training seed for fold `k`, decorrelated across base seeds.
pub fn fold_seed(seed: u64, k: usize) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(k as u64)
}

struct FoldJob<'a> {
    fold: usize,
    train_ids: Vec<String>,
    test_ids: Vec<String>,
    train: Vec<&'a VideoRecord>,
    test: Vec<&'a VideoRecord>,
}

fn run_fold(job: &FoldJob<'_>, aggregation: Aggregation, cfg: &EvalConfig) -> Result<(FoldReport, Vec<VideoEval>)> {
    check_no_leak(&Split {
        train: job.train_ids.clone(),
        test: job.test_ids.clone(),
    })?;
    let mut tcfg = cfg.training.clone();
    tcfg.seed = fold_seed(cfg.training.seed, job.fold);
    let outcome = train(&job.train, &tcfg)?;
    let videos = evaluate_generator(outcome.generator(), &job.test, job.fold, aggregation, cfg)?;
    let report = FoldReport {
        fold: job.fold,
        train_ids: job.train_ids.clone(),
        test_ids: job.test_ids.clone(),
        precision: mean(videos.iter().map(|v| v.precision)),
        recall: mean(videos.iter().map(|v| v.recall)),
        fscore: mean(videos.iter().map(|v| v.fscore)),
        kendall_tau: mean_opt(videos.iter().map(|v| v.kendall_tau)),
        spearman_rho: mean_opt(videos.iter().map(|v| v.spearman_rho)),
        epochs_run: outcome.history.len(),
    };
    Ok((report, videos))
}

fn run_jobs(jobs: Vec<FoldJob<'_>>, aggregation: Aggregation, cfg: &EvalConfig) -> Result<EvalReport> {
    let results: Vec<Result<(FoldReport, Vec<VideoEval>)>> = if cfg.parallel {
        jobs.par_iter().map(|j| run_fold(j, aggregation, cfg)).collect()
    } else {
        jobs.iter().map(|j| run_fold(j, aggregation, cfg)).collect()
    };
    let mut folds = Vec::with_capacity(results.len());
    let mut videos = Vec::new();
    for r in results {
        let (f, v) = r?;
        folds.push(f);
        videos.extend(v);
    }
    Ok(EvalReport {
        precision: mean(folds.iter().map(|f| f.precision)),
        recall: mean(folds.iter().map(|f| f.recall)),
        fscore: mean(folds.iter().map(|f| f.fscore)),
        kendall_tau: mean_opt(folds.iter().map(|f| f.kendall_tau)),
        spearman_rho: mean_opt(folds.iter().map(|f| f.spearman_rho)),
        folds,
        videos,
    })
}

/// k-fold cross-validation on `dataset`; `extra_train` is appended to every
/// fold's training set and must not share ids with the dataset.
pub fn five_fold_cv(dataset: &Dataset, extra_train: &[VideoRecord], cfg: &EvalConfig, seed: u64) -> Result<EvalReport> {
    let ids: Vec<String> = dataset.videos.iter().map(|v| v.id.clone()).collect();
    let plan = FoldPlan::new(&ids, cfg.folds, seed)?;
    let get = |id: &String| dataset.get(id).expect("plan ids come from the dataset");
    let jobs = (0..plan.folds.len())
        .map(|k| {
            let mut train_ids = plan.train_ids(k);
            let mut train: Vec<&VideoRecord> = train_ids.iter().map(get).collect();
            train_ids.extend(extra_train.iter().map(|v| v.id.clone()));
            train.extend(extra_train.iter());
            FoldJob {
                fold: k,
                test: plan.folds[k].iter().map(get).collect(),
                test_ids: plan.folds[k].clone(),
                train_ids,
                train,
            }
        })
        .collect();
    run_jobs(jobs, dataset.aggregation, cfg)
}

/// Trains and evaluates each split of [`crate::data_io::assemble_split`].
pub fn evaluate_splits(target: &Dataset, auxiliary: &[Dataset], splits: &[Split], cfg: &EvalConfig) -> Result<EvalReport> {
    let lookup = |id: &String| {
        resolve(id, target, auxiliary).ok_or_else(|| Error::Config(format!("unknown video id `{id}`")))
    };
    let jobs = splits
        .iter()
        .enumerate()
        .map(|(k, s)| {
            Ok(FoldJob {
                fold: k,
                train: s.train.iter().map(lookup).collect::<Result<_>>()?,
                test: s.test.iter().map(lookup).collect::<Result<_>>()?,
                train_ids: s.train.clone(),
                test_ids: s.test.clone(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    run_jobs(jobs, target.aggregation, cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fscore_rejects_length_mismatch() {
        let a = Summary::from_mask(vec![true; 3]);
        let b = Summary::from_mask(vec![true; 4]);
        assert!(matches!(fscore(&a, &b), Err(Error::Dimension { .. })));
    }

    #[test]
    fn empty_prediction_scores_zero() {
        let a = Summary::from_mask(vec![false; 4]);
        let b = Summary::from_mask(vec![true, true, false, false]);
        assert_eq!(fscore(&a, &b).unwrap().fscore, 0.0);
        assert_eq!(fscore(&a, &a).unwrap().fscore, 0.0);
    }

    #[test]
    fn multi_user_modes() {
        let pred = Summary::from_intervals(10, &[(0, 4)]);
        let u1 = Summary::from_intervals(10, &[(0, 4)]);
        let u2 = Summary::from_intervals(10, &[(6, 10)]);
        let max = fscore_multi_user(&pred, &[u1.clone(), u2.clone()], Aggregation::Max).unwrap();
        assert_eq!(max.fscore, 100.0);
        let mean = fscore_multi_user(&pred, &[u1, u2], Aggregation::Mean).unwrap();
        assert_eq!(mean.fscore, 50.0);
        assert!(matches!(fscore_multi_user(&pred, &[], Aggregation::Max), Err(Error::Degenerate { .. })));
    }

    #[test]
    fn correlation_preconditions() {
        assert!(matches!(kendall_tau(&[1.0], &[1.0]), Err(Error::Degenerate { .. })));
        assert!(matches!(spearman_rho(&[1.0, 1.0], &[1.0, 2.0]), Err(Error::UndefinedCorrelation(_))));
        assert!(matches!(kendall_tau(&[1.0, 2.0], &[1.0]), Err(Error::Dimension { .. })));
    }

    #[test]
    fn mid_ranks_average_ties() {
        assert_eq!(mid_ranks(&[3.0, 1.0, 3.0, 2.0]), vec![3.5, 1.0, 3.5, 2.0]);
    }

    #[test]
    fn fold_plan_sizes() {
        let ids: Vec<String> = (0..23).map(|i| format!("v{i}")).collect();
        let plan = FoldPlan::new(&ids, 5, 3).unwrap();
        let sizes: Vec<usize> = plan.folds.iter().map(Vec::len).collect();
        assert_eq!(sizes, vec![5, 5, 5, 4, 4]);
        assert!(FoldPlan::new(&ids[..4], 5, 0).is_err());
    }
}
