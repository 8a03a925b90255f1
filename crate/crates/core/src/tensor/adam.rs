use serde::{Deserialize, Serialize};

use super::{ParamSet, Scalar, Tensor};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        Self {
            lr,
            ..Self::default()
        }
    }
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Moment buffers, kept in `f64` regardless of parameter precision.
#[derive(Clone, Debug)]
pub struct AdamState {
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
    pub t: u64,
}

#[derive(Clone, Debug)]
pub struct Adam {
    pub config: AdamConfig,
    pub state: AdamState,
}

impl Adam {
    pub fn new<T: Scalar>(config: AdamConfig, params: &ParamSet<T>) -> Result<Self> {
        if !(config.lr >= 0.0) {
            return Err(Error::Config(format!("Adam learning rate {} must be >= 0", config.lr)));
        }
        let zeros = |p: &ParamSet<T>| p.iter().map(|(_, t)| vec![0.0; t.len()]).collect();
        Ok(Self {
            config,
            state: AdamState {
                m: zeros(params),
                v: zeros(params),
                t: 0,
            },
        })
    }

    /// One bias-corrected update using the gradient buffers of `params`.
    pub fn step<T: Scalar>(&mut self, params: &mut ParamSet<T>) -> Result<()> {
        let (values, grads) = params.values_and_grads();
        self.update(values, grads)
    }

    pub fn update<T: Scalar>(&mut self, values: &mut [Tensor<T>], grads: &[Tensor<T>]) -> Result<()> {
        if values.len() != self.state.m.len() || grads.len() != values.len() {
            return Err(Error::dim(
                "adam_step",
                format!(
                    "{} parameters, {} gradients, state for {}",
                    values.len(),
                    grads.len(),
                    self.state.m.len()
                ),
            ));
        }
        for (i, (p, g)) in values.iter().zip(grads).enumerate() {
            if p.shape() != g.shape() || p.len() != self.state.m[i].len() {
                return Err(Error::dim(
                    "adam_step",
                    format!("parameter {i}: value {:?} vs gradient {:?}", p.shape(), g.shape()),
                ));
            }
        }
        let AdamConfig {
            lr,
            beta1,
            beta2,
            eps,
        } = self.config;
        self.state.t += 1;
        let t = self.state.t as i32;
        let c1 = 1.0 - beta1.powi(t);
        let c2 = 1.0 - beta2.powi(t);
        for (i, (p, g)) in values.iter_mut().zip(grads).enumerate() {
            let m = &mut self.state.m[i];
            let v = &mut self.state.v[i];
            for (j, (w, gj)) in p.data_mut().iter_mut().zip(g.data()).enumerate() {
                let gj = gj.f64();
                m[j] = beta1 * m[j] + (1.0 - beta1) * gj;
                v[j] = beta2 * v[j] + (1.0 - beta2) * gj * gj;
                let mhat = m[j] / c1;
                let vhat = v[j] / c2;
                let delta = lr * mhat / (vhat.sqrt() + eps);
                *w = *w - T::of(delta);
            }
        }
        Ok(())
    }
}
