//! The generator: a fully convolutional temporal encoder-decoder followed by
//! self-attention and a two-layer score head.
//!
//! ```text
//! X ─ FCSN ─ Y ─┐
//! │             ├─ softmax(X Wq (Y Wk)^T / sqrt d) Y Wv ─ (+X) ─ LN ─ MLP ─ sigmoid ─ S
//! └─────────────┘                                                               │
//!                                                                       X̃ = S ∘ X
//! ```

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{NormAxis, ParamId, ParamSet, Scalar, Tape, Tensor, Var};

/// Epsilon inside the square root of both normalizations.
pub const NORM_EPS: f64 = 1e-5;

/// Temporal resolution halves four times in the encoder.
const DEPTH: usize = 4;
const TIME_MULTIPLE: usize = 1 << DEPTH;
/// Smallest padded length; keeps at least four frames at the bottleneck.
/// With only two, temporal normalization there maps each channel to about
/// ±1 whatever the input, which flattens its gradient and makes the graph
/// very sharply curved.
const MIN_PADDED: usize = 4 * TIME_MULTIPLE;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Per-frame feature dimension `d`.
    pub feature_dim: usize,
    /// Encoder channel schedule; five entries, the first after the input
    /// double-convolution and one per pooling stage.
    pub channels: Vec<usize>,
    /// Width of the hidden score-head layer.
    pub score_hidden: usize,
    /// Discriminator LSTM width.
    pub disc_hidden: usize,
}

impl ModelConfig {
    /// Full-size model for 1024-d frame features.
    pub fn canonical() -> Self {
        Self {
            feature_dim: 1024,
            channels: vec![64, 128, 256, 512, 1024],
            score_hidden: 1024,
            disc_hidden: 1024,
        }
    }

    /// Smallest configuration, used for gradient checks and overfitting tests.
    pub fn tiny(feature_dim: usize) -> Self {
        Self {
            feature_dim,
            channels: vec![4, 8, 16, 32, 64],
            score_hidden: 8,
            disc_hidden: 8,
        }
    }

    /// Desk-scale model for synthetic experiments.
    pub fn small(feature_dim: usize) -> Self {
        Self {
            feature_dim,
            channels: vec![8, 16, 32, 64, 128],
            score_hidden: 64,
            disc_hidden: 64,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.feature_dim == 0 || self.score_hidden == 0 || self.disc_hidden == 0 {
            return Err(Error::Config("model dimensions must be positive".into()));
        }
        if self.channels.len() != DEPTH + 1 || self.channels.contains(&0) {
            return Err(Error::Config(format!(
                "channel schedule needs {} positive entries, got {:?}",
                DEPTH + 1,
                self.channels
            )));
        }
        Ok(())
    }
}

/// Length the FCSN runs at for `frames` input frames.
pub fn padded_len(frames: usize) -> usize {
    frames.div_ceil(TIME_MULTIPLE).max(1).saturating_mul(TIME_MULTIPLE).max(MIN_PADDED)
}

#[derive(Clone, Copy, Debug)]
struct DoubleConv {
    k1: ParamId,
    g1: ParamId,
    b1: ParamId,
    k2: ParamId,
    g2: ParamId,
    b2: ParamId,
}

#[derive(Clone, Copy, Debug)]
struct UpStage {
    kernel: ParamId,
    bias: ParamId,
    conv: DoubleConv,
}

#[derive(Clone, Debug)]
struct Layout {
    encoder: Vec<DoubleConv>,
    decoder: Vec<UpStage>,
    out_kernel: ParamId,
    out_bias: ParamId,
    wq: ParamId,
    wk: ParamId,
    wv: ParamId,
    ln_gamma: ParamId,
    ln_beta: ParamId,
    head_w1: ParamId,
    head_b1: ParamId,
    head_w2: ParamId,
    head_b2: ParamId,
}

/// Vars produced by [`Generator::forward_with`].
#[derive(Clone, Copy, Debug)]
pub struct GeneratorOutput {
    /// FCSN output `[F, d]`.
    pub y: Var,
    /// Row-stochastic attention weights `[F, F]`.
    pub attention: Var,
    /// Attention output `[F, d]` before the residual.
    pub h: Var,
    /// Importance scores `[F]`.
    pub scores: Var,
    /// Score-weighted features `[F, d]`.
    pub weighted: Var,
}

#[derive(Clone, Copy, Debug)]
pub struct AttentionOutput {
    pub attention: Var,
    pub h: Var,
    pub scores: Var,
}

#[derive(Clone, Debug)]
pub struct Generator<T: Scalar = f32> {
    config: ModelConfig,
    params: ParamSet<T>,
    layout: Layout,
}

fn fan_in_uniform<T: Scalar>(shape: &[usize], fan_in: usize, rng: &mut ChaCha8Rng) -> Tensor<T> {
    Tensor::uniform(shape, (1.0 / fan_in as f64).sqrt(), rng)
}

fn double_conv<T: Scalar>(
    ps: &mut ParamSet<T>,
    rng: &mut ChaCha8Rng,
    name: &str,
    c_in: usize,
    c_out: usize,
) -> DoubleConv {
    let k1 = ps.add(format!("{name}.conv1.kernel"), fan_in_uniform(&[3, c_in, c_out], 3 * c_in, rng));
    let g1 = ps.add(format!("{name}.norm1.gamma"), Tensor::full(&[c_out], T::one()));
    let b1 = ps.add(format!("{name}.norm1.beta"), Tensor::zeros(&[c_out]));
    let k2 = ps.add(format!("{name}.conv2.kernel"), fan_in_uniform(&[3, c_out, c_out], 3 * c_out, rng));
    let g2 = ps.add(format!("{name}.norm2.gamma"), Tensor::full(&[c_out], T::one()));
    let b2 = ps.add(format!("{name}.norm2.beta"), Tensor::zeros(&[c_out]));
    DoubleConv { k1, g1, b1, k2, g2, b2 }
}

fn run_double_conv<T: Scalar>(tape: &mut Tape<T>, x: Var, p: &DoubleConv, v: &[Var]) -> Result<Var> {
    let a = tape.conv1d(x, v[p.k1.0], 1, 1)?;
    let a = tape.norm(a, v[p.g1.0], v[p.b1.0], NORM_EPS, NormAxis::Temporal)?;
    let a = tape.relu(a);
    let b = tape.conv1d(a, v[p.k2.0], 1, 1)?;
    let b = tape.norm(b, v[p.g2.0], v[p.b2.0], NORM_EPS, NormAxis::Temporal)?;
    Ok(tape.relu(b))
}

impl<T: Scalar> Generator<T> {
    /// Fresh weights: uniform in `±sqrt(1/fan_in)`, zero biases, unit norm gains.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut ps = ParamSet::new();
        let d = config.feature_dim;
        let ch = &config.channels;

        let mut encoder = Vec::with_capacity(DEPTH + 1);
        encoder.push(double_conv(&mut ps, &mut rng, "enc0", d, ch[0]));
        for i in 1..=DEPTH {
            encoder.push(double_conv(&mut ps, &mut rng, &format!("enc{i}"), ch[i - 1], ch[i]));
        }
        let mut decoder = Vec::with_capacity(DEPTH);
        for i in 0..DEPTH {
            let level = DEPTH - 1 - i;
            let (c_deep, c_out) = (ch[level + 1], ch[level]);
            let name = format!("dec{i}");
            let kernel = ps.add(
                format!("{name}.deconv.kernel"),
                fan_in_uniform(&[4, c_out, c_deep], 4 * c_deep, &mut rng),
            );
            let bias = ps.add(format!("{name}.deconv.bias"), Tensor::zeros(&[c_out]));
            let conv = double_conv(&mut ps, &mut rng, &name, 2 * c_out, c_out);
            decoder.push(UpStage { kernel, bias, conv });
        }
        let out_kernel = ps.add("out.kernel", fan_in_uniform(&[1, ch[0], d], ch[0], &mut rng));
        let out_bias = ps.add("out.bias", Tensor::zeros(&[d]));

        let wq = ps.add("attn.wq", fan_in_uniform(&[d, d], d, &mut rng));
        let wk = ps.add("attn.wk", fan_in_uniform(&[d, d], d, &mut rng));
        let wv = ps.add("attn.wv", fan_in_uniform(&[d, d], d, &mut rng));
        let ln_gamma = ps.add("attn.norm.gamma", Tensor::full(&[d], T::one()));
        let ln_beta = ps.add("attn.norm.beta", Tensor::zeros(&[d]));
        let hdim = config.score_hidden;
        let head_w1 = ps.add("head.w1", fan_in_uniform(&[d, hdim], d, &mut rng));
        let head_b1 = ps.add("head.b1", Tensor::zeros(&[hdim]));
        let head_w2 = ps.add("head.w2", fan_in_uniform(&[hdim, 1], hdim, &mut rng));
        let head_b2 = ps.add("head.b2", Tensor::zeros(&[1]));

        Ok(Self {
            config,
            params: ps,
            layout: Layout {
                encoder,
                decoder,
                out_kernel,
                out_bias,
                wq,
                wk,
                wv,
                ln_gamma,
                ln_beta,
                head_w1,
                head_b1,
                head_w2,
                head_b2,
            },
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamSet<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet<T> {
        &mut self.params
    }

    pub fn parameter_count(&self) -> usize {
        self.params.numel()
    }

    pub fn attention_ids(&self) -> [ParamId; 3] {
        [self.layout.wq, self.layout.wk, self.layout.wv]
    }

    pub fn head_ids(&self) -> [ParamId; 4] {
        let l = &self.layout;
        [l.head_w1, l.head_b1, l.head_w2, l.head_b2]
    }

    /// Same weights in another precision.
    pub fn cast<U: Scalar>(&self) -> Generator<U> {
        Generator {
            config: self.config.clone(),
            params: self.params.cast(),
            layout: self.layout.clone(),
        }
    }

    fn check_input(&self, tape: &Tape<T>, x: Var, op: &'static str) -> Result<usize> {
        let shape = tape.value(x).shape();
        let [frames, d] = shape[..] else {
            return Err(Error::dim(op, format!("features must be [F, d], got {shape:?}")));
        };
        if d != self.config.feature_dim {
            return Err(Error::dim(
                op,
                format!("feature dimension {d}, model expects {}", self.config.feature_dim),
            ));
        }
        if frames < 2 {
            return Err(Error::degenerate(op, format!("{frames} frame(s); at least 2 required")));
        }
        Ok(frames)
    }

    /// Refined features `Y` with the same shape as `x`.
    pub fn fcsn_forward(&self, tape: &mut Tape<T>, x: Var, v: &[Var]) -> Result<Var> {
        let frames = self.check_input(tape, x, "fcsn_forward")?;
        let l = &self.layout;
        let padded = padded_len(frames);
        let mut h = if padded > frames {
            tape.pad_rows(x, padded - frames)?
        } else {
            x
        };

        let mut skips = Vec::with_capacity(DEPTH + 1);
        h = run_double_conv(tape, h, &l.encoder[0], v)?;
        skips.push(h);
        for stage in &l.encoder[1..] {
            let pooled = tape.max_pool2(h)?;
            h = run_double_conv(tape, pooled, stage, v)?;
            skips.push(h);
        }
        for (i, up) in l.decoder.iter().enumerate() {
            let level = DEPTH - 1 - i;
            let u = tape.conv_transpose1d(h, v[up.kernel.0], 2, 1)?;
            let u = tape.add_row_vector(u, v[up.bias.0])?;
            let cat = tape.concat_cols(&[u, skips[level]])?;
            h = run_double_conv(tape, cat, &up.conv, v)?;
        }
        let y = tape.conv1d(h, v[l.out_kernel.0], 1, 0)?;
        let y = tape.add_row_vector(y, v[l.out_bias.0])?;
        if padded > frames {
            tape.slice_rows(y, 0, frames)
        } else {
            Ok(y)
        }
    }

    /// Self-attention with queries from `x` and keys/values from `y`, then
    /// residual, layer norm and the score head.
    pub fn attention_forward(&self, tape: &mut Tape<T>, x: Var, y: Var, v: &[Var]) -> Result<AttentionOutput> {
        let (xs, ys) = (tape.value(x).shape().to_vec(), tape.value(y).shape().to_vec());
        if xs != ys {
            return Err(Error::dim("attention_forward", format!("X {xs:?} vs Y {ys:?}")));
        }
        let frames = self.check_input(tape, x, "attention_forward")?;
        let l = &self.layout;
        let d = self.config.feature_dim as f64;

        let q = tape.matmul(x, v[l.wq.0])?;
        let k = tape.matmul(y, v[l.wk.0])?;
        let val = tape.matmul(y, v[l.wv.0])?;
        let kt = tape.transpose(k)?;
        let logits = tape.matmul(q, kt)?;
        let logits = tape.scale(logits, 1.0 / d.sqrt());
        let attention = tape.softmax_rows(logits)?;
        let h = tape.matmul(attention, val)?;

        let r = tape.add(h, x)?;
        let n = tape.norm(r, v[l.ln_gamma.0], v[l.ln_beta.0], NORM_EPS, NormAxis::Feature)?;
        let z = tape.matmul(n, v[l.head_w1.0])?;
        let z = tape.add_row_vector(z, v[l.head_b1.0])?;
        let z = tape.relu(z);
        let s = tape.matmul(z, v[l.head_w2.0])?;
        let s = tape.add_row_vector(s, v[l.head_b2.0])?;
        let s = tape.sigmoid(s);
        let scores = tape.reshape(s, &[frames])?;
        Ok(AttentionOutput { attention, h, scores })
    }

    /// Full generator pass with parameters already bound to `v` (in
    /// [`ParamSet`] order).
    pub fn forward_with(&self, tape: &mut Tape<T>, x: Var, v: &[Var]) -> Result<GeneratorOutput> {
        if v.len() != self.params.len() {
            return Err(Error::dim(
                "generate",
                format!("{} bound parameters for {} tensors", v.len(), self.params.len()),
            ));
        }
        let y = self.fcsn_forward(tape, x, v)?;
        let att = self.attention_forward(tape, x, y, v)?;
        let weighted = weighted_features(tape, x, att.scores)?;
        Ok(GeneratorOutput {
            y,
            attention: att.attention,
            h: att.h,
            scores: att.scores,
            weighted,
        })
    }

    /// Binds the parameters (trainable or frozen) and runs the full pass.
    pub fn forward(&self, tape: &mut Tape<T>, x: Var, trainable: bool) -> Result<(GeneratorOutput, Vec<Var>)> {
        let bound = self.params.bind(tape, trainable);
        let out = self.forward_with(tape, x, &bound)?;
        Ok((out, bound))
    }

    /// Importance scores and score-weighted features for one video.
    pub fn generate(&self, features: &Tensor<T>) -> Result<(Vec<T>, Tensor<T>)> {
        let mut tape = Tape::new();
        let x = tape.constant(features.clone());
        let (out, _) = self.forward(&mut tape, x, false)?;
        Ok((
            tape.value(out.scores).data().to_vec(),
            tape.value(out.weighted).clone(),
        ))
    }
}

/// `x̃_f = s_f · x_f`.
pub fn weighted_features<T: Scalar>(tape: &mut Tape<T>, x: Var, scores: Var) -> Result<Var> {
    let (frames, n) = (tape.value(x).rows(), tape.value(scores).len());
    if frames != n {
        return Err(Error::dim(
            "weighted_features",
            format!("{n} scores for {frames} frames"),
        ));
    }
    tape.scale_rows(x, scores)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn padding_rule() {
        assert_eq!(padded_len(2), 64);
        assert_eq!(padded_len(16), 64);
        assert_eq!(padded_len(64), 64);
        assert_eq!(padded_len(65), 80);
        assert_eq!(padded_len(100), 112);
        assert_eq!(padded_len(128), 128);
    }

    #[test]
    fn rejects_single_frame() {
        let g = Generator::<f32>::new(ModelConfig::tiny(4), 0).unwrap();
        let err = g.generate(&Tensor::zeros(&[1, 4])).unwrap_err();
        assert!(matches!(err, Error::Degenerate { .. }), "{err}");
    }

    #[test]
    fn rejects_wrong_feature_dim() {
        let g = Generator::<f32>::new(ModelConfig::tiny(4), 0).unwrap();
        let err = g.generate(&Tensor::zeros(&[8, 5])).unwrap_err();
        assert!(matches!(err, Error::Dimension { .. }), "{err}");
    }

    #[test]
    fn weighted_features_scalar_rows() {
        let mut tape = Tape::<f32>::new();
        let x = tape.constant(Tensor::from_rows(&[vec![2.0, 2.0], vec![3.0, 3.0]]).unwrap());
        let s = tape.constant(Tensor::new(vec![2], vec![0.5, 1.0]).unwrap());
        let w = weighted_features(&mut tape, x, s).unwrap();
        assert_eq!(tape.value(w).data(), &[1.0, 1.0, 3.0, 3.0]);

        let short = tape.constant(Tensor::new(vec![1], vec![0.5]).unwrap());
        assert!(weighted_features(&mut tape, x, short).is_err());
    }

    #[test]
    fn parameter_count_depends_only_on_dims() {
        let a = Generator::<f32>::new(ModelConfig::tiny(8), 1).unwrap();
        let b = Generator::<f32>::new(ModelConfig::tiny(8), 2).unwrap();
        assert_eq!(a.parameter_count(), b.parameter_count());
        let c = Generator::<f32>::new(ModelConfig::tiny(16), 1).unwrap();
        assert!(c.parameter_count() > a.parameter_count());
    }

    #[test]
    fn config_validation() {
        let mut cfg = ModelConfig::tiny(8);
        cfg.channels.pop();
        assert!(matches!(Generator::<f32>::new(cfg, 0), Err(Error::Config(_))));
    }
}
