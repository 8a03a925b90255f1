//! LSTM discriminator: real features `X` versus score-weighted `X̃`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{lstm_forward, LstmVars, ParamId, ParamSet, Scalar, Tape, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DiscriminatorConfig {
    pub feature_dim: usize,
    pub hidden: usize,
}

/// `prob` is `[1, 1]`, `phi` (the last LSTM hidden state) is `[1, hidden]`.
#[derive(Clone, Copy, Debug)]
pub struct DiscriminatorOutput {
    pub prob: Var,
    pub phi: Var,
}

#[derive(Clone, Debug)]
pub struct Discriminator<T: Scalar = f32> {
    config: DiscriminatorConfig,
    params: ParamSet<T>,
    w_ih: ParamId,
    w_hh: ParamId,
    bias: ParamId,
    fc_w: ParamId,
    fc_b: ParamId,
}

impl<T: Scalar> Discriminator<T> {
    pub fn new(config: DiscriminatorConfig, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (d, h) = (config.feature_dim, config.hidden);
        let mut ps = ParamSet::new();
        let bound_h = (1.0 / h as f64).sqrt();
        let w_ih = ps.add("lstm.w_ih", Tensor::uniform(&[d, 4 * h], (1.0 / d as f64).sqrt(), &mut rng));
        let w_hh = ps.add("lstm.w_hh", Tensor::uniform(&[h, 4 * h], bound_h, &mut rng));
        let bias = ps.add("lstm.bias", Tensor::zeros(&[4 * h]));
        let fc_w = ps.add("fc.w", Tensor::uniform(&[h, 1], bound_h, &mut rng));
        let fc_b = ps.add("fc.b", Tensor::zeros(&[1]));
        Self {
            config,
            params: ps,
            w_ih,
            w_hh,
            bias,
            fc_w,
            fc_b,
        }
    }

    /// Every weight and bias set to zero.
    pub fn zeroed(config: DiscriminatorConfig) -> Self {
        let mut d = Self::new(config, 0);
        for id in d.params.ids().collect::<Vec<_>>() {
            let shape = d.params.get(id).shape().to_vec();
            d.params.set(id, Tensor::zeros(&shape)).expect("same shape");
        }
        d
    }

    pub fn config(&self) -> DiscriminatorConfig {
        self.config
    }

    pub fn params(&self) -> &ParamSet<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet<T> {
        &mut self.params
    }

    pub fn cast<U: Scalar>(&self) -> Discriminator<U> {
        Discriminator {
            config: self.config,
            params: self.params.cast(),
            w_ih: self.w_ih,
            w_hh: self.w_hh,
            bias: self.bias,
            fc_w: self.fc_w,
            fc_b: self.fc_b,
        }
    }

    /// Runs the LSTM from zero state and classifies the last hidden state.
    pub fn forward_with(&self, tape: &mut Tape<T>, seq: Var, v: &[Var]) -> Result<DiscriminatorOutput> {
        let shape = tape.value(seq).shape();
        if shape.len() != 2 || shape[1] != self.config.feature_dim {
            return Err(Error::dim(
                "discriminate",
                format!("sequence {shape:?}, discriminator expects [F, {}]", self.config.feature_dim),
            ));
        }
        if v.len() != self.params.len() {
            return Err(Error::dim(
                "discriminate",
                format!("{} bound parameters for {} tensors", v.len(), self.params.len()),
            ));
        }
        let h = self.config.hidden;
        let h0 = tape.constant(Tensor::zeros(&[1, h]));
        let c0 = tape.constant(Tensor::zeros(&[1, h]));
        let w = LstmVars {
            w_ih: v[self.w_ih.0],
            w_hh: v[self.w_hh.0],
            bias: v[self.bias.0],
        };
        let out = lstm_forward(tape, seq, w, h0, c0)?;
        let logit = tape.matmul(out.last_hidden, v[self.fc_w.0])?;
        let logit = tape.add_row_vector(logit, v[self.fc_b.0])?;
        let prob = tape.sigmoid(logit);
        Ok(DiscriminatorOutput {
            prob,
            phi: out.last_hidden,
        })
    }

    pub fn forward(&self, tape: &mut Tape<T>, seq: Var, trainable: bool) -> Result<(DiscriminatorOutput, Vec<Var>)> {
        let bound = self.params.bind(tape, trainable);
        let out = self.forward_with(tape, seq, &bound)?;
        Ok((out, bound))
    }

    /// Probability that `seq` is an original feature sequence, and `phi`.
    pub fn discriminate(&self, seq: &Tensor<T>) -> Result<(f64, Vec<T>)> {
        let mut tape = Tape::new();
        let x = tape.constant(seq.clone());
        let (out, _) = self.forward(&mut tape, x, false)?;
        Ok((
            tape.value(out.prob).item().f64(),
            tape.value(out.phi).data().to_vec(),
        ))
    }
}
