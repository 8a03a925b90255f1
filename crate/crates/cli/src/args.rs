use std::path::PathBuf;

use caan_core::data_io::{SplitMode, SyntheticSpec};
use caan_core::evaluation::Aggregation;
use caan_core::generator::ModelConfig;
use caan_core::postprocess::{ShotValue, SummaryOptions};
use caan_core::training::TrainingConfig;
use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "caan", version, about = "Adversarial video summarization: synthesize, train, summarize, evaluate, verify")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset with planted important segments.
    Synth(SynthArgs),
    /// Train a generator/discriminator pair on a dataset.
    Train(TrainArgs),
    /// Score one feature file with a checkpoint and select key shots.
    Summarize(SummarizeArgs),
    /// Cross-validated evaluation in the canonical, augmented or transfer setting.
    Eval(EvalArgs),
    /// Run the built-in verification suites.
    Verify(VerifyArgs),
}

/// Flags shared by every reproducible command.
#[derive(Debug, Clone, Args)]
pub struct Common {
    /// Seed for every random choice the command makes.
    #[arg(long)]
    pub seed: Option<u64>,
    /// JSON config file; explicit flags override its fields.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory (created if missing).
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct SynthArgs {
    #[command(flatten)]
    pub common: Common,
    /// Dataset name written to dataset.json.
    #[arg(long, default_value = "synthetic")]
    pub name: String,
    #[arg(long, value_enum, default_value_t = AggregationArg::Max)]
    pub aggregation: AggregationArg,
    #[arg(long)]
    pub videos: Option<usize>,
    #[arg(long)]
    pub min_frames: Option<usize>,
    #[arg(long)]
    pub max_frames: Option<usize>,
    #[arg(long)]
    pub feature_dim: Option<usize>,
    #[arg(long)]
    pub min_segments: Option<usize>,
    #[arg(long)]
    pub max_segments: Option<usize>,
    #[arg(long)]
    pub important_fraction: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    pub noise: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    pub salience: Option<f64>,
}

impl SynthArgs {
    pub fn apply(&self, spec: &mut SyntheticSpec) {
        macro_rules! set {
            ($($f:ident),*) => { $(if let Some(v) = self.$f { spec.$f = v; })* };
        }
        set!(videos, min_frames, max_frames, feature_dim, min_segments, max_segments, important_fraction, noise, salience);
        if let Some(s) = self.common.seed {
            spec.seed = s;
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum AggregationArg {
    Max,
    Mean,
}

impl From<AggregationArg> for Aggregation {
    fn from(a: AggregationArg) -> Self {
        match a {
            AggregationArg::Max => Aggregation::Max,
            AggregationArg::Mean => Aggregation::Mean,
        }
    }
}

/// Channel-schedule presets; the feature width always comes from the data.
#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModelPreset {
    Canonical,
    Small,
    Tiny,
}

impl ModelPreset {
    pub fn config(self, feature_dim: usize) -> ModelConfig {
        match self {
            ModelPreset::Canonical => ModelConfig {
                feature_dim,
                ..ModelConfig::canonical()
            },
            ModelPreset::Small => ModelConfig::small(feature_dim),
            ModelPreset::Tiny => ModelConfig::tiny(feature_dim),
        }
    }
}

/// One flag per `TrainingConfig` field.
#[derive(Debug, Clone, Default, Args)]
pub struct TrainingFlags {
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    pub lr_generator: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    pub lr_discriminator: Option<f64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub steps_per_video: Option<usize>,
    /// Add the supervised loss; every training video needs gt_scores.
    #[arg(long)]
    pub supervised: bool,
    /// Use -ln p(X̃) as the generator's adversarial loss.
    #[arg(long)]
    pub non_saturating_g_loss: bool,
    #[arg(long)]
    pub clip_norm: Option<f64>,
    /// Epochs without improvement before stopping; 0 disables.
    #[arg(long)]
    pub patience: Option<usize>,
    /// Write a checkpoint every N epochs; 0 disables.
    #[arg(long)]
    pub checkpoint_every: Option<usize>,
    /// Model size preset; defaults to the config file's model.
    #[arg(long, value_enum)]
    pub model: Option<ModelPreset>,
}

impl TrainingFlags {
    /// Overlays the flags on `cfg` and fixes the model width to `feature_dim`.
    pub fn apply(&self, cfg: &mut TrainingConfig, seed: Option<u64>, feature_dim: usize) {
        macro_rules! set {
            ($($f:ident),*) => { $(if let Some(v) = self.$f { cfg.$f = v; })* };
        }
        set!(alpha, lr_generator, lr_discriminator, epochs, steps_per_video, clip_norm, patience, checkpoint_every);
        cfg.supervised |= self.supervised;
        cfg.non_saturating_g_loss |= self.non_saturating_g_loss;
        if let Some(p) = self.model {
            cfg.model = p.config(feature_dim);
        }
        cfg.model.feature_dim = feature_dim;
        if let Some(s) = seed {
            cfg.seed = s;
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub common: Common,
    /// Dataset directory (with dataset.json).
    #[arg(long)]
    pub data: PathBuf,
    #[command(flatten)]
    pub training: TrainingFlags,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ShotValueArg {
    Mean,
    LengthWeighted,
}

impl From<ShotValueArg> for ShotValue {
    fn from(v: ShotValueArg) -> Self {
        match v {
            ShotValueArg::Mean => ShotValue::Mean,
            ShotValueArg::LengthWeighted => ShotValue::LengthWeighted,
        }
    }
}

/// Key-shot selection flags.
#[derive(Debug, Clone, Default, Args)]
pub struct SummaryFlags {
    /// Summary length as a fraction of the video.
    #[arg(long)]
    pub ratio: Option<f64>,
    #[arg(long, value_enum)]
    pub shot_value: Option<ShotValueArg>,
}

impl SummaryFlags {
    pub fn apply(&self, opts: &mut SummaryOptions) {
        if let Some(r) = self.ratio {
            opts.ratio = r;
        }
        if let Some(v) = self.shot_value {
            opts.shot_value = v.into();
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct SummarizeArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Binary feature file.
    #[arg(long)]
    pub features: PathBuf,
    /// Annotation sidecar whose change points replace KTS segmentation.
    #[arg(long)]
    pub annotations: Option<PathBuf>,
    #[command(flatten)]
    pub summary: SummaryFlags,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    Canonical,
    Augmented,
    Transfer,
}

impl From<ModeArg> for SplitMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Canonical => SplitMode::Canonical,
            ModeArg::Augmented => SplitMode::Augmented,
            ModeArg::Transfer => SplitMode::Transfer,
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long, value_enum, default_value_t = ModeArg::Canonical)]
    pub mode: ModeArg,
    /// Target dataset directory.
    #[arg(long)]
    pub data: PathBuf,
    /// Auxiliary dataset directories (augmented and transfer settings).
    #[arg(long = "aux")]
    pub auxiliary: Vec<PathBuf>,
    #[arg(long)]
    pub folds: Option<usize>,
    /// Segment with KTS even when annotated change points exist.
    #[arg(long)]
    pub ignore_change_points: bool,
    /// Train folds one after another.
    #[arg(long)]
    pub serial: bool,
    /// Also score uniformly random frame scores over this many draws.
    #[arg(long, default_value_t = 0)]
    pub baseline_draws: usize,
    #[command(flatten)]
    pub training: TrainingFlags,
    #[command(flatten)]
    pub summary: SummaryFlags,
}

#[derive(Debug, Clone, Args)]
pub struct VerifyArgs {
    /// Suites to run (default: all).
    #[arg(long = "suite", value_parser = clap::builder::PossibleValuesParser::new(caan_core::verify::SUITES))]
    pub suites: Vec<String>,
    /// Print the available suites and exit.
    #[arg(long)]
    pub list: bool,
    /// Also write the results as TSV to this directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
}
