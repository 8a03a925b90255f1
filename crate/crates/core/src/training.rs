//! Losses and the alternating adversarial training loop.
//!
//! The generator objective is the unit-weighted sum
//! `adv_g + rec + spar` (plus `sup` in supervised mode).

use log::{debug, info};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data_io::VideoRecord;
use crate::discriminator::{Discriminator, DiscriminatorConfig};
use crate::error::{Error, Result};
use crate::generator::{Generator, ModelConfig};
use crate::tensor::{Adam, AdamConfig, Scalar, Tape, Tensor, Var};

/// Probabilities are clamped into `[PROB_EPS, 1 - PROB_EPS]` before logs.
pub const PROB_EPS: f64 = 1e-7;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainingConfig {
    /// Target mean score.
    pub alpha: f64,
    pub lr_generator: f64,
    pub lr_discriminator: f64,
    pub epochs: usize,
    pub steps_per_video: usize,
    pub seed: u64,
    pub model: ModelConfig,
    pub supervised: bool,
    pub non_saturating_g_loss: bool,
    /// Global gradient-norm clip applied to both networks.
    pub clip_norm: f64,
    /// Stop after this many epochs without a lower mean total loss; 0 disables.
    pub patience: usize,
    /// Checkpoint cadence in epochs; 0 disables.
    pub checkpoint_every: usize,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            alpha: 0.3,
            lr_generator: 3e-5,
            lr_discriminator: 1e-5,
            epochs: 100,
            steps_per_video: 1,
            seed: 0,
            model: ModelConfig::canonical(),
            supervised: false,
            non_saturating_g_loss: false,
            clip_norm: 5.0,
            patience: 20,
            checkpoint_every: 0,
        }
    }
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::Config(format!("alpha {} must lie in (0, 1)", self.alpha)));
        }
        for (name, lr) in [("lr_generator", self.lr_generator), ("lr_discriminator", self.lr_discriminator)] {
            if !(lr >= 0.0) || !lr.is_finite() {
                return Err(Error::Config(format!("{name} {lr} must be a finite non-negative number")));
            }
        }
        if self.steps_per_video == 0 {
            return Err(Error::Config("steps_per_video must be >= 1".into()));
        }
        if !(self.clip_norm > 0.0) {
            return Err(Error::Config(format!("clip_norm {} must be positive", self.clip_norm)));
        }
        self.model.validate()
    }

    pub fn discriminator_config(&self) -> DiscriminatorConfig {
        DiscriminatorConfig {
            feature_dim: self.model.feature_dim,
            hidden: self.model.disc_hidden,
        }
    }

    fn derived_seed(&self, stream: u64) -> u64 {
        self.seed
            .wrapping_mul(0x9E37_79B9_7F4A_7C15)
            .wrapping_add(stream.wrapping_mul(0xD1B5_4A32_D192_ED03))
    }

    pub fn generator_seed(&self) -> u64 {
        self.derived_seed(1)
    }

    pub fn discriminator_seed(&self) -> u64 {
        self.derived_seed(2)
    }

    fn shuffle_seed(&self) -> u64 {
        self.derived_seed(3)
    }
}

/// Loss components of one step or the mean over one epoch.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub adv_d: f64,
    pub adv_g: f64,
    pub rec: f64,
    pub spar: f64,
    pub sup: Option<f64>,
    pub total: f64,
}

impl LossReport {
    fn mean(reports: &[LossReport]) -> LossReport {
        let n = reports.len().max(1) as f64;
        let sum = |f: fn(&LossReport) -> f64| reports.iter().map(f).sum::<f64>() / n;
        let sup = if reports.iter().all(|r| r.sup.is_some()) && !reports.is_empty() {
            Some(reports.iter().filter_map(|r| r.sup).sum::<f64>() / n)
        } else {
            None
        };
        LossReport {
            adv_d: sum(|r| r.adv_d),
            adv_g: sum(|r| r.adv_g),
            rec: sum(|r| r.rec),
            spar: sum(|r| r.spar),
            sup,
            total: sum(|r| r.total),
        }
    }

    fn first_non_finite(&self) -> Option<&'static str> {
        [
            ("adv_d", self.adv_d),
            ("adv_g", self.adv_g),
            ("rec", self.rec),
            ("spar", self.spar),
            ("sup", self.sup.unwrap_or(0.0)),
            ("total", self.total),
        ]
        .into_iter()
        .find(|(_, v)| !v.is_finite())
        .map(|(n, _)| n)
    }
}

fn clamp_prob(p: f64) -> f64 {
    p.clamp(PROB_EPS, 1.0 - PROB_EPS)
}

/// `(d_loss, g_loss)` for discriminator outputs on `X` and `X̃`.
///
/// `d_loss = -ln p_x - ln(1 - p_xt)`; `g_loss = ln(1 - p_xt)`, or
/// `-ln p_xt` in the non-saturating variant.
pub fn adversarial_losses(p_x: f64, p_xt: f64, non_saturating: bool) -> (f64, f64) {
    let (px, pxt) = (clamp_prob(p_x), clamp_prob(p_xt));
    let d = -px.ln() - (1.0 - pxt).ln();
    let g = if non_saturating {
        -pxt.ln()
    } else {
        (1.0 - pxt).ln()
    };
    (d, g)
}

/// Euclidean distance (not squared).
pub fn reconstruction_loss(phi_x: &[f64], phi_xt: &[f64]) -> Result<f64> {
    if phi_x.len() != phi_xt.len() {
        return Err(Error::dim(
            "reconstruction_loss",
            format!("{} vs {}", phi_x.len(), phi_xt.len()),
        ));
    }
    Ok(phi_x
        .iter()
        .zip(phi_xt)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt())
}

/// `|mean(S) - alpha|`.
pub fn sparsity_loss(scores: &[f64], alpha: f64) -> Result<f64> {
    if scores.is_empty() {
        return Err(Error::degenerate("sparsity_loss", "empty score sequence"));
    }
    Ok((scores.iter().sum::<f64>() / scores.len() as f64 - alpha).abs())
}

/// Mean squared difference.
pub fn supervised_loss(scores: &[f64], target: &[f64]) -> Result<f64> {
    if scores.len() != target.len() || scores.is_empty() {
        return Err(Error::dim(
            "supervised_loss",
            format!("{} scores vs {} targets", scores.len(), target.len()),
        ));
    }
    Ok(scores.iter().zip(target).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / scores.len() as f64)
}

/// Tape forms of the losses. Each takes `[1, 1]` probability vars or
/// vectors and returns a scalar var.
pub mod graph {
    use super::*;

    fn clamped_log<T: Scalar>(tape: &mut Tape<T>, p: Var, complement: bool) -> Var {
        let p = tape.clamp(p, PROB_EPS, 1.0 - PROB_EPS);
        let q = if complement {
            let n = tape.neg(p);
            tape.add_scalar(n, 1.0)
        } else {
            p
        };
        let l = tape.log(q);
        tape.sum(l)
    }

    pub fn d_loss<T: Scalar>(tape: &mut Tape<T>, p_x: Var, p_xt: Var) -> Result<Var> {
        let a = clamped_log(tape, p_x, false);
        let b = clamped_log(tape, p_xt, true);
        let s = tape.add(a, b)?;
        Ok(tape.neg(s))
    }

    pub fn g_loss<T: Scalar>(tape: &mut Tape<T>, p_xt: Var, non_saturating: bool) -> Var {
        if non_saturating {
            let l = clamped_log(tape, p_xt, false);
            tape.neg(l)
        } else {
            clamped_log(tape, p_xt, true)
        }
    }

    pub fn reconstruction<T: Scalar>(tape: &mut Tape<T>, phi_x: Var, phi_xt: Var) -> Result<Var> {
        let d = tape.sub(phi_x, phi_xt)?;
        let sq = tape.mul(d, d)?;
        let s = tape.sum(sq);
        Ok(tape.sqrt(s))
    }

    pub fn sparsity<T: Scalar>(tape: &mut Tape<T>, scores: Var, alpha: f64) -> Var {
        let m = tape.mean(scores);
        let m = tape.add_scalar(m, -alpha);
        tape.abs(m)
    }

    pub fn supervised<T: Scalar>(tape: &mut Tape<T>, scores: Var, target: Var) -> Result<Var> {
        let d = tape.sub(scores, target)?;
        let sq = tape.mul(d, d)?;
        Ok(tape.mean(sq))
    }
}

/// Generator, discriminator and their optimizers.
#[derive(Clone, Debug)]
pub struct Trainer {
    pub generator: Generator<f32>,
    pub discriminator: Discriminator<f32>,
    pub opt_g: Adam,
    pub opt_d: Adam,
    pub config: TrainingConfig,
    steps: usize,
}

impl Trainer {
    pub fn new(config: TrainingConfig) -> Result<Self> {
        config.validate()?;
        let generator = Generator::new(config.model.clone(), config.generator_seed())?;
        let discriminator = Discriminator::new(config.discriminator_config(), config.discriminator_seed());
        Self::from_parts(config, generator, discriminator)
    }

    pub fn from_parts(config: TrainingConfig, generator: Generator<f32>, discriminator: Discriminator<f32>) -> Result<Self> {
        config.validate()?;
        let opt_g = Adam::new(AdamConfig::with_lr(config.lr_generator), generator.params())?;
        let opt_d = Adam::new(AdamConfig::with_lr(config.lr_discriminator), discriminator.params())?;
        Ok(Self {
            generator,
            discriminator,
            opt_g,
            opt_d,
            config,
            steps: 0,
        })
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    /// One discriminator update followed by one generator update.
    pub fn train_step(&mut self, features: &Tensor<f32>, gt_scores: Option<&[f64]>) -> Result<LossReport> {
        let step = self.steps;
        self.steps += 1;
        if !features.is_finite() {
            return Err(Error::NonFinite {
                component: "input",
                step,
            });
        }
        if self.config.supervised && gt_scores.is_none() {
            return Err(Error::Config("supervised training needs gt_scores".into()));
        }
        let adv_d = self.discriminator_update(features, step)?;
        let mut report = self.generator_update(features, gt_scores, step)?;
        report.adv_d = adv_d;
        if let Some(component) = report.first_non_finite() {
            return Err(Error::NonFinite { component, step });
        }
        Ok(report)
    }

    fn discriminator_update(&mut self, features: &Tensor<f32>, step: usize) -> Result<f64> {
        let weighted = {
            let mut tape = Tape::new();
            let x = tape.constant(features.clone());
            let (out, _) = self.generator.forward(&mut tape, x, false)?;
            tape.value(out.weighted).clone()
        };
        let mut tape = Tape::new();
        let x = tape.constant(features.clone());
        let xt = tape.constant(weighted);
        let bound = self.discriminator.params().bind(&mut tape, true);
        let real = self.discriminator.forward_with(&mut tape, x, &bound)?;
        let fake = self.discriminator.forward_with(&mut tape, xt, &bound)?;
        let loss = graph::d_loss(&mut tape, real.prob, fake.prob)?;
        let value = tape.value(loss).item().f64();
        if !value.is_finite() {
            return Err(Error::NonFinite {
                component: "adv_d",
                step,
            });
        }
        tape.backward(loss)?;
        let params = self.discriminator.params_mut();
        params.zero_grad();
        params.accumulate_grads(&tape, &bound);
        params.clip_grad_norm(self.config.clip_norm);
        self.opt_d.step(params)?;
        Ok(value)
    }

    fn generator_update(&mut self, features: &Tensor<f32>, gt_scores: Option<&[f64]>, step: usize) -> Result<LossReport> {
        let cfg = &self.config;
        let mut tape = Tape::new();
        let x = tape.constant(features.clone());
        let (gen, bound) = self.generator.forward(&mut tape, x, true)?;
        let d_vars = self.discriminator.params().bind(&mut tape, false);
        let real = self.discriminator.forward_with(&mut tape, x, &d_vars)?;
        let fake = self.discriminator.forward_with(&mut tape, gen.weighted, &d_vars)?;

        let adv = graph::g_loss(&mut tape, fake.prob, cfg.non_saturating_g_loss);
        let rec = graph::reconstruction(&mut tape, real.phi, fake.phi)?;
        let spar = graph::sparsity(&mut tape, gen.scores, cfg.alpha);
        let mut total = tape.add(adv, rec)?;
        total = tape.add(total, spar)?;
        let sup = if cfg.supervised {
            let gt = gt_scores.ok_or_else(|| Error::Config("supervised training needs gt_scores".into()))?;
            let target = Tensor::new(vec![gt.len()], gt.iter().map(|&v| v as f32).collect())?;
            let target = tape.constant(target);
            let sup = graph::supervised(&mut tape, gen.scores, target)?;
            total = tape.add(total, sup)?;
            Some(sup)
        } else {
            None
        };
        let item = |tape: &Tape<f32>, v: Var| tape.value(v).item().f64();
        let report = LossReport {
            adv_d: 0.0,
            adv_g: item(&tape, adv),
            rec: item(&tape, rec),
            spar: item(&tape, spar),
            sup: sup.map(|v| item(&tape, v)),
            total: item(&tape, total),
        };
        if let Some(component) = report.first_non_finite() {
            return Err(Error::NonFinite { component, step });
        }
        tape.backward(total)?;
        let params = self.generator.params_mut();
        params.zero_grad();
        params.accumulate_grads(&tape, &bound);
        params.clip_grad_norm(self.config.clip_norm);
        self.opt_g.step(params)?;
        Ok(report)
    }
}

/// Per-epoch progress passed to the training callback.
pub struct EpochEvent<'a> {
    pub epoch: usize,
    pub report: &'a LossReport,
    pub trainer: &'a Trainer,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub trainer: Trainer,
    /// Mean loss report per completed epoch.
    pub history: Vec<LossReport>,
    pub stopped_early: bool,
}

impl TrainOutcome {
    pub fn generator(&self) -> &Generator<f32> {
        &self.trainer.generator
    }
}

/// Trains on `videos` for `config.epochs` epochs in seeded shuffled order.
pub fn train(videos: &[&VideoRecord], config: &TrainingConfig) -> Result<TrainOutcome> {
    train_with_callback(videos, config, |_| Ok(()))
}

pub fn train_with_callback<F>(videos: &[&VideoRecord], config: &TrainingConfig, mut on_epoch: F) -> Result<TrainOutcome>
where
    F: FnMut(&EpochEvent<'_>) -> Result<()>,
{
    if videos.is_empty() {
        return Err(Error::Config("training set is empty".into()));
    }
    config.validate()?;
    for v in videos {
        if v.features.cols() != config.model.feature_dim {
            return Err(Error::dim(
                "train",
                format!(
                    "video `{}` has {}-d features, model expects {}",
                    v.id,
                    v.features.cols(),
                    config.model.feature_dim
                ),
            ));
        }
        if config.supervised && v.gt_scores.is_none() {
            return Err(Error::Config(format!(
                "supervised training needs gt_scores, video `{}` has none",
                v.id
            )));
        }
    }

    let mut trainer = Trainer::new(config.clone())?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.shuffle_seed());
    let mut order: Vec<usize> = (0..videos.len()).collect();
    let mut history = Vec::with_capacity(config.epochs);
    let mut best = f64::INFINITY;
    let mut since_best = 0;
    let mut stopped_early = false;

    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut reports = Vec::with_capacity(videos.len() * config.steps_per_video);
        for &i in &order {
            let v = videos[i];
            for _ in 0..config.steps_per_video {
                reports.push(trainer.train_step(&v.features, v.gt_scores.as_deref())?);
            }
        }
        let mean = LossReport::mean(&reports);
        debug!("epoch {epoch}: {mean:?}");
        history.push(mean);
        on_epoch(&EpochEvent {
            epoch,
            report: &mean,
            trainer: &trainer,
        })?;

        if mean.total < best - 1e-9 {
            best = mean.total;
            since_best = 0;
        } else {
            since_best += 1;
        }
        if config.patience > 0 && since_best >= config.patience {
            info!("stopping after epoch {epoch}: no improvement for {since_best} epochs");
            stopped_early = true;
            break;
        }
    }
    Ok(TrainOutcome {
        trainer,
        history,
        stopped_early,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn adversarial_examples() {
        let (d, g) = adversarial_losses(0.5, 0.5, false);
        assert!((d - 2.0 * std::f64::consts::LN_2).abs() < 1e-15);
        assert!((g - 0.5f64.ln()).abs() < 1e-15);
        let (d, _) = adversarial_losses(1.0 - 1e-7, 1e-7, false);
        assert!(d < 1e-6, "{d}");
        let (_, g) = adversarial_losses(0.5, 0.25, true);
        assert!((g + 0.25f64.ln()).abs() < 1e-15);
        // clamping keeps logs finite
        let (d, g) = adversarial_losses(0.0, 1.0, false);
        assert!(d.is_finite() && g.is_finite());
    }

    #[test]
    fn reconstruction_examples() {
        assert_eq!(reconstruction_loss(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert_eq!(reconstruction_loss(&[1.0, 2.0, 0.0], &[1.0, 2.0, 1.0]).unwrap(), 1.0);
        assert!(reconstruction_loss(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn sparsity_examples() {
        assert!(sparsity_loss(&[0.3; 7], 0.3).unwrap() < 1e-15);
        assert!((sparsity_loss(&[1.0; 7], 0.3).unwrap() - 0.7).abs() < 1e-15);
        assert!((sparsity_loss(&[0.0; 7], 0.3).unwrap() - 0.3).abs() < 1e-15);
        assert!(matches!(sparsity_loss(&[], 0.3), Err(Error::Degenerate { .. })));
    }

    #[test]
    fn supervised_examples() {
        assert_eq!(supervised_loss(&[0.2, 0.4], &[0.2, 0.4]).unwrap(), 0.0);
        assert_eq!(supervised_loss(&[1.0; 4], &[0.0; 4]).unwrap(), 1.0);
        assert!(supervised_loss(&[1.0; 4], &[0.0; 3]).is_err());
    }

    #[test]
    fn config_validation() {
        let mut c = TrainingConfig::default();
        c.alpha = 1.0;
        assert!(matches!(c.validate(), Err(Error::Config(_))));
        let mut c = TrainingConfig::default();
        c.lr_generator = -1.0;
        assert!(c.validate().is_err());
    }
}
