//! File formats, synthetic datasets and train/test assembly.
//!
//! # Feature files (`<id>.feat`)
//!
//! | bytes      | content                                   |
//! |------------|-------------------------------------------|
//! | 0..4       | magic `CAAN`                              |
//! | 4          | version `0x01`                            |
//! | 5..9       | frame count `F`, `u32` little-endian      |
//! | 9..13      | feature dimension `d`, `u32` little-endian|
//! | 13..       | `F * d` `f32` little-endian, row-major    |
//!
//! # Annotation sidecars (`<id>.json`)
//!
//! ```json
//! {"id": "video_000", "frames": 120,
//!  "gt_scores": [0.1, ...],
//!  "user_summaries": [[[10, 18], [40, 45]], ...],
//!  "change_points": [0, 12, 30, 120]}
//! ```
//!
//! Intervals are half-open `[start, end)`. Every field but `id` and
//! `frames` is optional.
//!
//! # Dataset directories
//!
//! A `dataset.json` index (`name`, `aggregation`, `videos`) next to one
//! feature file and one sidecar per video id.

use std::collections::HashSet;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::discriminator::Discriminator;
use crate::error::{AnnotationError, Error, FormatError, Result};
use crate::evaluation::{Aggregation, FoldPlan};
use crate::generator::Generator;
use crate::postprocess::{summarize_segments, ShotSegmentation, SummaryOptions};
use crate::tensor::{ParamSet, Tensor};
use crate::training::TrainingConfig;

pub const FEATURE_MAGIC: &[u8; 4] = b"CAAN";
pub const FEATURE_VERSION: u8 = 1;
const FEATURE_HEADER: usize = 13;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"CAANCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Half-open frame intervals selected by one annotator.
pub type UserSummary = Vec<(usize, usize)>;

#[derive(Clone, Debug, PartialEq)]
pub struct VideoRecord {
    pub id: String,
    /// `[F, d]`
    pub features: Tensor<f32>,
    pub gt_scores: Option<Vec<f64>>,
    pub user_summaries: Option<Vec<UserSummary>>,
    pub change_points: Option<ShotSegmentation>,
}

impl VideoRecord {
    pub fn frames(&self) -> usize {
        self.features.rows()
    }

    pub fn annotation(&self) -> Annotation {
        Annotation {
            id: self.id.clone(),
            frames: self.frames(),
            gt_scores: self.gt_scores.clone(),
            user_summaries: self.user_summaries.clone(),
            change_points: self.change_points.clone(),
        }
    }
}

/// Annotation sidecar contents.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Annotation {
    pub id: String,
    pub frames: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gt_scores: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub user_summaries: Option<Vec<UserSummary>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub change_points: Option<ShotSegmentation>,
}

impl Annotation {
    /// Checks every field against the frame count.
    pub fn validate(&self) -> Result<(), AnnotationError> {
        let f = self.frames;
        if let Some(gt) = &self.gt_scores {
            if gt.len() != f {
                return Err(AnnotationError::ScoreLength {
                    expected: f,
                    found: gt.len(),
                });
            }
            if let Some((index, &value)) = gt.iter().enumerate().find(|(_, v)| !(0.0..=1.0).contains(*v)) {
                return Err(AnnotationError::ScoreRange { index, value });
            }
        }
        if let Some(users) = &self.user_summaries {
            for (user, intervals) in users.iter().enumerate() {
                for &(start, end) in intervals {
                    if start >= end {
                        return Err(AnnotationError::EmptyInterval { user, start, end });
                    }
                    if end > f {
                        return Err(AnnotationError::IntervalBounds {
                            user,
                            start,
                            end,
                            frames: f,
                        });
                    }
                }
                let mut sorted = intervals.clone();
                sorted.sort_unstable();
                for w in sorted.windows(2) {
                    if w[1].0 < w[0].1 {
                        return Err(AnnotationError::Overlap {
                            user,
                            a_start: w[0].0,
                            a_end: w[0].1,
                            b_start: w[1].0,
                            b_end: w[1].1,
                        });
                    }
                }
            }
        }
        if let Some(cp) = &self.change_points {
            if cp.frames() != f {
                return Err(AnnotationError::ChangePoints(cp.boundaries().to_vec()));
            }
        }
        Ok(())
    }
}

pub fn encode_features(x: &Tensor<f32>) -> Vec<u8> {
    let (f, d) = (x.rows(), x.cols());
    let mut out = Vec::with_capacity(FEATURE_HEADER + 4 * x.len());
    out.extend_from_slice(FEATURE_MAGIC);
    out.push(FEATURE_VERSION);
    out.extend_from_slice(&(f as u32).to_le_bytes());
    out.extend_from_slice(&(d as u32).to_le_bytes());
    for v in x.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode_features(bytes: &[u8]) -> Result<Tensor<f32>, FormatError> {
    if bytes.len() < 4 || &bytes[..4] != FEATURE_MAGIC {
        return Err(FormatError::BadMagic {
            expected: FEATURE_MAGIC.to_vec(),
            found: bytes[..bytes.len().min(4)].to_vec(),
        });
    }
    if bytes.len() < FEATURE_HEADER {
        return Err(FormatError::Truncated {
            expected: FEATURE_HEADER,
            found: bytes.len(),
        });
    }
    if bytes[4] != FEATURE_VERSION {
        return Err(FormatError::VersionMismatch {
            expected: FEATURE_VERSION as u32,
            found: bytes[4] as u32,
        });
    }
    let f = u32::from_le_bytes(bytes[5..9].try_into().unwrap()) as usize;
    let d = u32::from_le_bytes(bytes[9..13].try_into().unwrap()) as usize;
    if f == 0 {
        return Err(FormatError::ZeroDimension("frames"));
    }
    if d == 0 {
        return Err(FormatError::ZeroDimension("feature_dim"));
    }
    let expected = f
        .checked_mul(d)
        .and_then(|n| n.checked_mul(4))
        .and_then(|n| n.checked_add(FEATURE_HEADER))
        .ok_or_else(|| FormatError::Malformed(format!("header F={f}, d={d} overflows")))?;
    if bytes.len() < expected {
        return Err(FormatError::Truncated {
            expected,
            found: bytes.len(),
        });
    }
    if bytes.len() > expected {
        return Err(FormatError::TrailingBytes {
            expected,
            found: bytes.len(),
        });
    }
    let mut data = Vec::with_capacity(f * d);
    for (k, chunk) in bytes[FEATURE_HEADER..].chunks_exact(4).enumerate() {
        let v = f32::from_le_bytes(chunk.try_into().unwrap());
        if !v.is_finite() {
            return Err(FormatError::NonFinite { row: k / d, col: k % d });
        }
        data.push(v);
    }
    Tensor::new(vec![f, d], data).map_err(|e| FormatError::Malformed(e.to_string()))
}

pub fn save_features(path: &Path, x: &Tensor<f32>) -> Result<()> {
    fs::write(path, encode_features(x)).map_err(|e| Error::io(path, e))
}

pub fn load_features(path: &Path) -> Result<Tensor<f32>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(decode_features(&bytes)?)
}

pub fn parse_annotation(text: &str) -> Result<Annotation, AnnotationError> {
    let a: Annotation = serde_json::from_str(text).map_err(|e| AnnotationError::Parse(e.to_string()))?;
    a.validate()?;
    Ok(a)
}

pub fn load_annotations(path: &Path) -> Result<Annotation> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(parse_annotation(&text)?)
}

pub fn save_annotations(path: &Path, a: &Annotation) -> Result<()> {
    a.validate()?;
    let text = serde_json::to_string_pretty(a).expect("annotation serializes");
    fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

/// Loads `<dir>/<id>.feat` and `<dir>/<id>.json`.
pub fn load_video(dir: &Path, id: &str) -> Result<VideoRecord> {
    let features = load_features(&dir.join(format!("{id}.feat")))?;
    let ann = load_annotations(&dir.join(format!("{id}.json")))?;
    if ann.id != id {
        return Err(AnnotationError::IdMismatch {
            expected: id.to_string(),
            found: ann.id,
        }
        .into());
    }
    if ann.frames != features.rows() {
        return Err(AnnotationError::ScoreLength {
            expected: features.rows(),
            found: ann.frames,
        }
        .into());
    }
    Ok(VideoRecord {
        id: ann.id,
        features,
        gt_scores: ann.gt_scores,
        user_summaries: ann.user_summaries,
        change_points: ann.change_points,
    })
}

pub fn save_video(dir: &Path, v: &VideoRecord) -> Result<()> {
    save_features(&dir.join(format!("{}.feat", v.id)), &v.features)?;
    save_annotations(&dir.join(format!("{}.json", v.id)), &v.annotation())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetIndex {
    pub name: String,
    pub aggregation: Aggregation,
    pub videos: Vec<String>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub name: String,
    pub aggregation: Aggregation,
    pub videos: Vec<VideoRecord>,
}

impl Dataset {
    pub fn get(&self, id: &str) -> Option<&VideoRecord> {
        self.videos.iter().find(|v| v.id == id)
    }
}

pub fn load_dataset(dir: &Path) -> Result<Dataset> {
    let index_path = dir.join("dataset.json");
    let text = fs::read_to_string(&index_path).map_err(|e| Error::io(&index_path, e))?;
    let index: DatasetIndex = serde_json::from_str(&text)
        .map_err(|e| Error::Config(format!("{}: {e}", index_path.display())))?;
    let videos = index
        .videos
        .iter()
        .map(|id| load_video(dir, id))
        .collect::<Result<Vec<_>>>()?;
    Ok(Dataset {
        name: index.name,
        aggregation: index.aggregation,
        videos,
    })
}

pub fn save_dataset(dir: &Path, ds: &Dataset) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for v in &ds.videos {
        save_video(dir, v)?;
    }
    let index = DatasetIndex {
        name: ds.name.clone(),
        aggregation: ds.aggregation,
        videos: ds.videos.iter().map(|v| v.id.clone()).collect(),
    };
    let path = dir.join("dataset.json");
    let text = serde_json::to_string_pretty(&index).expect("index serializes");
    fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))
}

/// Parameters of a synthetic dataset with planted important segments.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticSpec {
    pub videos: usize,
    pub min_frames: usize,
    pub max_frames: usize,
    pub feature_dim: usize,
    pub min_segments: usize,
    pub max_segments: usize,
    /// Fraction of segments marked important.
    pub important_fraction: f64,
    /// Standard deviation of per-frame Gaussian noise.
    pub noise: f64,
    /// Scale of important-segment prototypes relative to the others.
    pub salience: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            videos: 25,
            min_frames: 96,
            max_frames: 160,
            feature_dim: 64,
            min_segments: 6,
            max_segments: 12,
            important_fraction: 0.3,
            noise: 0.1,
            salience: 2.0,
            seed: 0,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.videos == 0 || self.feature_dim == 0 {
            return bad("videos and feature_dim must be positive".into());
        }
        if self.min_segments == 0 || self.min_segments > self.max_segments {
            return bad(format!("segment range {}..={} is empty", self.min_segments, self.max_segments));
        }
        if self.min_frames > self.max_frames || self.min_frames < 2 * self.max_segments {
            return bad(format!(
                "frame range {}..={} must be ordered and allow 2 frames per segment ({} segments)",
                self.min_frames, self.max_frames, self.max_segments
            ));
        }
        if !(self.important_fraction > 0.0 && self.important_fraction < 1.0) {
            return bad(format!("important_fraction {} must lie in (0, 1)", self.important_fraction));
        }
        if !(self.noise >= 0.0) || !self.noise.is_finite() {
            return bad(format!("noise {} must be >= 0", self.noise));
        }
        if !(self.salience > 0.0) || !self.salience.is_finite() {
            return bad(format!("salience {} must be > 0", self.salience));
        }
        Ok(())
    }
}

/// Planted-structure dataset; a pure function of `spec`.
pub fn gen_synthetic(spec: &SyntheticSpec) -> Result<Vec<VideoRecord>> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let unit = Normal::new(0.0, 1.0).expect("valid normal");
    let noise = Normal::new(0.0, spec.noise).expect("valid normal");
    let d = spec.feature_dim;
    let mut out = Vec::with_capacity(spec.videos);
    for vi in 0..spec.videos {
        let frames = rng.random_range(spec.min_frames..=spec.max_frames);
        let k = rng.random_range(spec.min_segments..=spec.max_segments);
        let mut lengths = vec![2usize; k];
        for _ in 0..frames - 2 * k {
            let j = rng.random_range(0..k);
            lengths[j] += 1;
        }
        let seg = ShotSegmentation::from_lengths(&lengths)?;

        let n_imp = ((spec.important_fraction * k as f64).round() as usize).clamp(1, k - 1);
        let mut order: Vec<usize> = (0..k).collect();
        order.shuffle(&mut rng);
        let mut important = vec![false; k];
        for &j in &order[..n_imp] {
            important[j] = true;
        }

        let mut data = Vec::with_capacity(frames * d);
        let mut gt = Vec::with_capacity(frames);
        for (j, shot) in seg.shots().enumerate() {
            let scale = if important[j] { 1.0 } else { 1.0 / spec.salience };
            let proto: Vec<f64> = (0..d).map(|_| scale * unit.sample(&mut rng)).collect();
            for _ in shot {
                for &p in &proto {
                    let e = if spec.noise > 0.0 { noise.sample(&mut rng) } else { 0.0 };
                    data.push((p + e) as f32);
                }
                gt.push(if important[j] {
                    rng.random_range(0.8..=1.0)
                } else {
                    rng.random_range(0.0..=0.2)
                });
            }
        }
        let summary = summarize_segments(&gt, &seg, &SummaryOptions::default())?;
        out.push(VideoRecord {
            id: format!("video_{vi:03}"),
            features: Tensor::new(vec![frames, d], data)?,
            gt_scores: Some(gt),
            user_summaries: Some(vec![summary.intervals()]),
            change_points: Some(seg),
        });
    }
    Ok(out)
}

/// Evaluation setting.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitMode {
    /// k-fold cross-validation within the target dataset.
    Canonical,
    /// k-fold folds with every auxiliary video added to training.
    Augmented,
    /// Train on the auxiliaries, test on the whole target.
    Transfer,
}

/// One train/test split. Auxiliary ids are qualified as `<dataset>/<id>`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<String>,
    pub test: Vec<String>,
}

pub fn qualified_id(dataset: &str, id: &str) -> String {
    format!("{dataset}/{id}")
}

/// Builds the train/test lists for `mode`.
pub fn assemble_split(mode: SplitMode, target: &Dataset, auxiliary: &[Dataset], plan: &FoldPlan) -> Result<Vec<Split>> {
    let aux_ids: Vec<String> = auxiliary
        .iter()
        .flat_map(|ds| ds.videos.iter().map(|v| qualified_id(&ds.name, &v.id)))
        .collect();
    let all: Vec<String> = target.videos.iter().map(|v| v.id.clone()).collect();
    let splits = match mode {
        SplitMode::Canonical | SplitMode::Augmented => {
            if mode == SplitMode::Augmented && aux_ids.is_empty() {
                return Err(Error::Config("augmented setting needs auxiliary datasets".into()));
            }
            (0..plan.folds.len())
                .map(|k| {
                    let mut train = plan.train_ids(k);
                    if mode == SplitMode::Augmented {
                        train.extend(aux_ids.iter().cloned());
                    }
                    Split {
                        train,
                        test: plan.folds[k].clone(),
                    }
                })
                .collect::<Vec<_>>()
        }
        SplitMode::Transfer => {
            if aux_ids.is_empty() {
                return Err(Error::Config("transfer setting needs auxiliary datasets".into()));
            }
            vec![Split {
                train: aux_ids,
                test: all,
            }]
        }
    };
    for s in &splits {
        check_no_leak(s)?;
    }
    Ok(splits)
}

pub fn check_no_leak(split: &Split) -> Result<()> {
    let train: HashSet<&str> = split.train.iter().map(String::as_str).collect();
    match split.test.iter().find(|id| train.contains(id.as_str())) {
        Some(id) => Err(Error::Leak(id.clone())),
        None => Ok(()),
    }
}

/// Looks up a possibly qualified id in the target or auxiliary datasets.
pub fn resolve<'a>(id: &str, target: &'a Dataset, auxiliary: &'a [Dataset]) -> Option<&'a VideoRecord> {
    if let Some((ds, vid)) = id.split_once('/') {
        auxiliary.iter().find(|d| d.name == ds).and_then(|d| d.get(vid))
    } else {
        target.get(id)
    }
}

/// Serialized model state.
#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub config: TrainingConfig,
    pub generator: Generator<f32>,
    pub discriminator: Discriminator<f32>,
}

fn write_params(out: &mut Vec<u8>, prefix: &str, ps: &ParamSet<f32>) {
    for (name, t) in ps.iter() {
        let full = format!("{prefix}.{name}");
        out.extend_from_slice(&(full.len() as u32).to_le_bytes());
        out.extend_from_slice(full.as_bytes());
        out.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
        for &s in t.shape() {
            out.extend_from_slice(&(s as u32).to_le_bytes());
        }
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
}

pub fn encode_checkpoint(config: &TrainingConfig, g: &Generator<f32>, d: &Discriminator<f32>) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    let json = serde_json::to_vec(config).expect("config serializes");
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    let count = g.params().len() + d.params().len();
    out.extend_from_slice(&(count as u32).to_le_bytes());
    write_params(&mut out, "generator", g.params());
    write_params(&mut out, "discriminator", d.params());
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], FormatError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or(FormatError::Truncated {
            expected: self.pos.saturating_add(n),
            found: self.bytes.len(),
        })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, FormatError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}

fn read_params(r: &mut Reader<'_>, prefix: &str, ps: &mut ParamSet<f32>) -> Result<(), FormatError> {
    for id in ps.ids().collect::<Vec<_>>() {
        let expected_name = format!("{prefix}.{}", ps.name(id));
        let len = r.u32()? as usize;
        let name = String::from_utf8(r.take(len)?.to_vec())
            .map_err(|_| FormatError::Malformed("tensor name is not UTF-8".into()))?;
        if name != expected_name {
            return Err(FormatError::Malformed(format!("expected tensor `{expected_name}`, found `{name}`")));
        }
        let ndim = r.u32()? as usize;
        let shape = (0..ndim).map(|_| r.u32().map(|v| v as usize)).collect::<Result<Vec<_>, _>>()?;
        let expected_shape = ps.get(id).shape().to_vec();
        if shape != expected_shape {
            return Err(FormatError::ShapeMismatch {
                name,
                expected: expected_shape,
                found: shape,
            });
        }
        let n: usize = shape.iter().product();
        let raw = r.take(n * 4)?;
        let data: Vec<f32> = raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
        if data.iter().any(|v| !v.is_finite()) {
            return Err(FormatError::Malformed(format!("non-finite value in `{name}`")));
        }
        ps.set(id, Tensor::new(shape, data).map_err(|e| FormatError::Malformed(e.to_string()))?)
            .map_err(|e| FormatError::Malformed(e.to_string()))?;
    }
    Ok(())
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Checkpoint> {
    let mut r = Reader { bytes, pos: 0 };
    let magic = r.take(CHECKPOINT_MAGIC.len()).map_err(|_| FormatError::BadMagic {
        expected: CHECKPOINT_MAGIC.to_vec(),
        found: bytes.to_vec(),
    })?;
    if magic != CHECKPOINT_MAGIC {
        return Err(FormatError::BadMagic {
            expected: CHECKPOINT_MAGIC.to_vec(),
            found: magic.to_vec(),
        }
        .into());
    }
    let version = r.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(FormatError::VersionMismatch {
            expected: CHECKPOINT_VERSION,
            found: version,
        }
        .into());
    }
    let json_len = r.u32()? as usize;
    let config: TrainingConfig = serde_json::from_slice(r.take(json_len)?)
        .map_err(|e| FormatError::Malformed(format!("config echo: {e}")))?;
    config.validate()?;
    let mut generator = Generator::new(config.model.clone(), 0)?;
    let mut discriminator = Discriminator::new(config.discriminator_config(), 0);
    let count = r.u32()? as usize;
    if count != generator.params().len() + discriminator.params().len() {
        return Err(FormatError::Malformed(format!("{count} tensors, model has {}", generator.params().len() + discriminator.params().len())).into());
    }
    read_params(&mut r, "generator", generator.params_mut())?;
    read_params(&mut r, "discriminator", discriminator.params_mut())?;
    if r.pos != bytes.len() {
        return Err(FormatError::TrailingBytes {
            expected: r.pos,
            found: bytes.len(),
        }
        .into());
    }
    Ok(Checkpoint {
        config,
        generator,
        discriminator,
    })
}

pub fn save_checkpoint(path: &Path, config: &TrainingConfig, g: &Generator<f32>, d: &Discriminator<f32>) -> Result<()> {
    fs::write(path, encode_checkpoint(config, g, d)).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes)
}
