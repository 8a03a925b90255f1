//! Frame scores to a key-shot summary: kernel temporal segmentation,
//! shot-level averaging and 0/1 knapsack selection.

use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// Fraction of the video kept in a summary.
pub const DEFAULT_SUMMARY_RATIO: f64 = 0.15;

/// Contiguous partition of `[0, F)` given by boundaries `0 = b_0 < ... < b_m = F`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<usize>", into = "Vec<usize>")]
pub struct ShotSegmentation {
    boundaries: Vec<usize>,
}

impl TryFrom<Vec<usize>> for ShotSegmentation {
    type Error = Error;

    fn try_from(b: Vec<usize>) -> Result<Self> {
        Self::new(b)
    }
}

impl From<ShotSegmentation> for Vec<usize> {
    fn from(s: ShotSegmentation) -> Self {
        s.boundaries
    }
}

impl ShotSegmentation {
    pub fn new(boundaries: Vec<usize>) -> Result<Self> {
        let valid = boundaries.len() >= 2
            && boundaries[0] == 0
            && boundaries.windows(2).all(|w| w[0] < w[1]);
        if !valid {
            return Err(Error::degenerate(
                "shot_segmentation",
                format!("boundaries {boundaries:?} are not 0 = b0 < b1 < ... < F"),
            ));
        }
        Ok(Self { boundaries })
    }

    /// One shot spanning all frames.
    pub fn single(frames: usize) -> Result<Self> {
        Self::new(vec![0, frames])
    }

    /// Segmentation from shot lengths.
    pub fn from_lengths(lengths: &[usize]) -> Result<Self> {
        let mut b = Vec::with_capacity(lengths.len() + 1);
        b.push(0);
        for &l in lengths {
            b.push(b.last().unwrap() + l);
        }
        Self::new(b)
    }

    pub fn boundaries(&self) -> &[usize] {
        &self.boundaries
    }

    pub fn frames(&self) -> usize {
        *self.boundaries.last().unwrap()
    }

    pub fn len(&self) -> usize {
        self.boundaries.len() - 1
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn shots(&self) -> impl Iterator<Item = Range<usize>> + '_ {
        self.boundaries.windows(2).map(|w| w[0]..w[1])
    }

    pub fn lengths(&self) -> Vec<usize> {
        self.shots().map(|r| r.len()).collect()
    }
}

/// Selected key shots of one video.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Summary {
    pub selected_shots: Vec<usize>,
    pub frame_mask: Vec<bool>,
    pub budget_frames: usize,
}

impl Summary {
    /// A summary given only by its frames (reference summaries).
    pub fn from_mask(frame_mask: Vec<bool>) -> Self {
        let budget_frames = frame_mask.len();
        Self {
            selected_shots: Vec::new(),
            frame_mask,
            budget_frames,
        }
    }

    pub fn from_intervals(frames: usize, intervals: &[(usize, usize)]) -> Self {
        let mut mask = vec![false; frames];
        for &(s, e) in intervals {
            mask[s.min(frames)..e.min(frames)].iter_mut().for_each(|v| *v = true);
        }
        Self::from_mask(mask)
    }

    pub fn frames(&self) -> usize {
        self.frame_mask.len()
    }

    pub fn selected_frames(&self) -> usize {
        self.frame_mask.iter().filter(|&&v| v).count()
    }

    /// Maximal runs of selected frames as half-open intervals.
    pub fn intervals(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        let mut start = None;
        for (i, &on) in self.frame_mask.iter().chain(std::iter::once(&false)).enumerate() {
            match (on, start) {
                (true, None) => start = Some(i),
                (false, Some(s)) => {
                    out.push((s, i));
                    start = None;
                }
                _ => {}
            }
        }
        out
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct KtsParams {
    /// Upper bound on the number of segments.
    pub max_segments: usize,
    /// Weight of the `m (ln(F/m) + 1)` complexity term.
    pub penalty: f64,
}

impl KtsParams {
    /// Defaults scaled to the sequence: up to one segment per 8 frames and a
    /// penalty equal to the mean per-frame scatter around the global mean.
    pub fn auto<T: Scalar>(x: &Tensor<T>) -> Self {
        let f = x.rows();
        let gram = PrefixGram::new(x);
        Self {
            max_segments: (f / 8).max(1),
            penalty: gram.scatter(0, f) / f as f64,
        }
    }
}

/// Prefix sums of the linear-kernel Gram matrix, giving any segment's
/// scatter in O(1).
struct PrefixGram {
    n: usize,
    /// `(n+1) x (n+1)`, `p[i][j] = sum_{a<i, b<j} K[a][b]`.
    p: Vec<f64>,
    /// Prefix sums of the diagonal.
    diag: Vec<f64>,
}

impl PrefixGram {
    fn new<T: Scalar>(x: &Tensor<T>) -> Self {
        let n = x.rows();
        let rows: Vec<Vec<f64>> = (0..n).map(|i| x.row(i).iter().map(|v| v.f64()).collect()).collect();
        let w = n + 1;
        let mut p = vec![0.0; w * w];
        let mut diag = vec![0.0; w];
        for i in 0..n {
            let mut row_acc = 0.0;
            for j in 0..n {
                let k: f64 = rows[i].iter().zip(&rows[j]).map(|(a, b)| a * b).sum();
                if i == j {
                    diag[i + 1] = diag[i] + k;
                }
                row_acc += k;
                p[(i + 1) * w + j + 1] = p[i * w + j + 1] + row_acc;
            }
        }
        Self { n, p, diag }
    }

    fn block(&self, a: usize, b: usize) -> f64 {
        let w = self.n + 1;
        self.p[b * w + b] - self.p[a * w + b] - self.p[b * w + a] + self.p[a * w + a]
    }

    /// `sum_{i in [a,b)} K_ii - (1/(b-a)) sum_{i,j in [a,b)} K_ij`.
    fn scatter(&self, a: usize, b: usize) -> f64 {
        let v = self.diag[b] - self.diag[a] - self.block(a, b) / (b - a) as f64;
        v.max(0.0)
    }
}

/// DP tables: `cost[m][t]` is the least scatter of `[0, t)` cut into `m`
/// segments; `arg` holds the start of the last segment.
fn segmentation_dp(gram: &PrefixGram, max_segments: usize) -> (Vec<Vec<f64>>, Vec<Vec<usize>>) {
    let n = gram.n;
    let mut cost = vec![vec![f64::INFINITY; n + 1]; max_segments + 1];
    let mut arg = vec![vec![0usize; n + 1]; max_segments + 1];
    cost[0][0] = 0.0;
    for m in 1..=max_segments {
        for t in m..=n {
            let mut best = f64::INFINITY;
            let mut best_s = m - 1;
            for s in (m - 1)..t {
                let prev = cost[m - 1][s];
                if !prev.is_finite() {
                    continue;
                }
                let c = prev + gram.scatter(s, t);
                if c < best {
                    best = c;
                    best_s = s;
                }
            }
            cost[m][t] = best;
            arg[m][t] = best_s;
        }
    }
    (cost, arg)
}

fn backtrack(arg: &[Vec<usize>], segments: usize, n: usize) -> Vec<usize> {
    let mut b = vec![n];
    let mut t = n;
    for m in (1..=segments).rev() {
        t = arg[m][t];
        b.push(t);
    }
    b.reverse();
    b
}

/// Least-scatter segmentation into exactly `segments` shots.
pub fn optimal_segmentation<T: Scalar>(x: &Tensor<T>, segments: usize) -> Result<ShotSegmentation> {
    let n = x.rows();
    if segments == 0 || segments > n {
        return Err(Error::degenerate(
            "kts_changepoints",
            format!("{segments} segments for {n} frames"),
        ));
    }
    let gram = PrefixGram::new(x);
    let (_, arg) = segmentation_dp(&gram, segments);
    ShotSegmentation::new(backtrack(&arg, segments, n))
}

/// Kernel temporal segmentation with a linear kernel.
///
/// For each segment count `m <= max_segments` the least total within-segment
/// scatter is found by dynamic programming; the returned `m` minimizes
/// `scatter + penalty * m * (ln(F/m) + 1)`.
pub fn kts_changepoints<T: Scalar>(x: &Tensor<T>, params: &KtsParams) -> Result<ShotSegmentation> {
    let n = x.rows();
    if x.shape().len() != 2 || n < 2 {
        return Err(Error::degenerate(
            "kts_changepoints",
            format!("feature shape {:?}; need at least 2 frames", x.shape()),
        ));
    }
    if params.max_segments == 0 {
        return Err(Error::degenerate("kts_changepoints", "max_segments must be >= 1"));
    }
    let max_m = params.max_segments.min(n);
    let gram = PrefixGram::new(x);
    let (cost, arg) = segmentation_dp(&gram, max_m);
    let nf = n as f64;
    let mut best_m = 1;
    let mut best = f64::INFINITY;
    for (m, row) in cost.iter().enumerate().skip(1) {
        let mf = m as f64;
        let total = row[n] + params.penalty * mf * ((nf / mf).ln() + 1.0);
        if total < best {
            best = total;
            best_m = m;
        }
    }
    ShotSegmentation::new(backtrack(&arg, best_m, n))
}

/// Mean frame score of each shot.
pub fn shot_scores(scores: &[f64], seg: &ShotSegmentation) -> Result<Vec<f64>> {
    if scores.len() != seg.frames() {
        return Err(Error::dim(
            "shot_scores",
            format!("{} scores for a {}-frame segmentation", scores.len(), seg.frames()),
        ));
    }
    Ok(seg
        .shots()
        .map(|r| scores[r.clone()].iter().sum::<f64>() / r.len() as f64)
        .collect())
}

/// How a shot's knapsack value is derived from its mean frame score.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShotValue {
    /// The shot's mean score.
    #[default]
    Mean,
    /// Mean score times shot length.
    LengthWeighted,
}

const VALUE_EPS: f64 = 1e-12;

#[derive(Clone, Copy, Debug)]
struct Best {
    value: f64,
    frames: usize,
}

impl Best {
    /// Higher value wins; near-equal values go to fewer frames.
    fn beats(self, other: Best) -> bool {
        if self.value > other.value + VALUE_EPS {
            return true;
        }
        (self.value - other.value).abs() <= VALUE_EPS && self.frames < other.frames
    }

    fn ties(self, other: Best) -> bool {
        (self.value - other.value).abs() <= VALUE_EPS && self.frames == other.frames
    }
}

/// Exact 0/1 knapsack over integer shot lengths.
///
/// Maximizes the summed value with total length at most `budget`. Ties go to
/// fewer total frames, then to the lexicographically smallest index set.
/// Returned indices are ascending.
pub fn knapsack_select(values: &[f64], lengths: &[usize], budget: usize) -> Vec<usize> {
    let n = values.len().min(lengths.len());
    let cap = budget;
    // best[i][c]: optimum over items i.. with capacity c
    let empty = Best {
        value: 0.0,
        frames: 0,
    };
    let mut best = vec![vec![empty; cap + 1]; n + 1];
    for i in (0..n).rev() {
        for c in 0..=cap {
            let skip = best[i + 1][c];
            let mut cell = skip;
            if lengths[i] <= c {
                let rest = best[i + 1][c - lengths[i]];
                let take = Best {
                    value: values[i] + rest.value,
                    frames: lengths[i] + rest.frames,
                };
                if take.beats(skip) || take.ties(skip) {
                    cell = take;
                }
            }
            best[i][c] = cell;
        }
    }
    let mut chosen = Vec::new();
    let mut c = cap;
    for i in 0..n {
        if lengths[i] > c {
            continue;
        }
        let skip = best[i + 1][c];
        let rest = best[i + 1][c - lengths[i]];
        let take = Best {
            value: values[i] + rest.value,
            frames: lengths[i] + rest.frames,
        };
        if take.beats(skip) || take.ties(skip) {
            chosen.push(i);
            c -= lengths[i];
        }
    }
    chosen
}

/// Options for [`scores_to_summary`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SummaryOptions {
    pub ratio: f64,
    pub shot_value: ShotValue,
    /// Segmentation parameters when no change points are supplied; `None`
    /// picks [`KtsParams::auto`].
    pub kts: Option<KtsParams>,
}

impl Default for SummaryOptions {
    fn default() -> Self {
        Self {
            ratio: DEFAULT_SUMMARY_RATIO,
            shot_value: ShotValue::Mean,
            kts: None,
        }
    }
}

pub fn budget_frames(frames: usize, ratio: f64) -> usize {
    (ratio * frames as f64).floor() as usize
}

/// Segments (unless `seg` is given), averages scores per shot and picks
/// shots with the knapsack under `floor(ratio * F)` frames.
pub fn scores_to_summary<T: Scalar>(
    features: &Tensor<T>,
    scores: &[f64],
    seg: Option<&ShotSegmentation>,
    opts: &SummaryOptions,
) -> Result<Summary> {
    let frames = features.rows();
    if scores.len() != frames {
        return Err(Error::dim(
            "scores_to_summary",
            format!("{} scores for {frames} frames", scores.len()),
        ));
    }
    if !(0.0..=1.0).contains(&opts.ratio) {
        return Err(Error::Config(format!("summary ratio {} outside [0, 1]", opts.ratio)));
    }
    let owned;
    let seg = match seg {
        Some(s) => {
            if s.frames() != frames {
                return Err(Error::dim(
                    "scores_to_summary",
                    format!("segmentation covers {} frames, video has {frames}", s.frames()),
                ));
            }
            s
        }
        None => {
            let params = opts.kts.unwrap_or_else(|| KtsParams::auto(features));
            owned = kts_changepoints(features, &params)?;
            &owned
        }
    };
    summarize_segments(scores, seg, opts)
}

/// Knapsack selection on a known segmentation.
pub fn summarize_segments(scores: &[f64], seg: &ShotSegmentation, opts: &SummaryOptions) -> Result<Summary> {
    let means = shot_scores(scores, seg)?;
    let lengths = seg.lengths();
    let values: Vec<f64> = match opts.shot_value {
        ShotValue::Mean => means,
        ShotValue::LengthWeighted => means.iter().zip(&lengths).map(|(m, &l)| m * l as f64).collect(),
    };
    let budget = budget_frames(seg.frames(), opts.ratio);
    let selected = knapsack_select(&values, &lengths, budget);
    let mut mask = vec![false; seg.frames()];
    let shots: Vec<Range<usize>> = seg.shots().collect();
    for &i in &selected {
        mask[shots[i].clone()].iter_mut().for_each(|v| *v = true);
    }
    Ok(Summary {
        selected_shots: selected,
        frame_mask: mask,
        budget_frames: budget,
    })
}
