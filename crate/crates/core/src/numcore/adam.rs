use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::scalar::Scalar;
use super::tensor::ParamSet;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Global gradient-norm clip applied before the update.
    pub clip_norm: Option<f64>,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            clip_norm: None,
        }
    }
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        AdamConfig {
            lr,
            ..Default::default()
        }
    }
}

/// Bias-corrected Adam.
#[derive(Clone, Debug)]
pub struct AdamState<T: Scalar> {
    pub config: AdamConfig,
    step: u64,
    m: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(config: AdamConfig) -> Self {
        AdamState {
            config,
            step: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// Applies one update to every trainable parameter, then clears all gradients.
    pub fn step(&mut self, params: &mut ParamSet<T>) -> Result<()> {
        for (name, t) in params.iter() {
            if t.requires_grad && t.grad.is_none() {
                return Err(Error::MissingGrad(name.to_string()));
            }
        }
        if self.m.len() != params.len() {
            self.m = params
                .iter()
                .map(|(_, t)| vec![T::zero(); t.len()])
                .collect();
            self.v = self.m.clone();
        }
        let clip = match self.config.clip_norm {
            Some(max) => {
                let sq: f64 = params
                    .iter()
                    .filter_map(|(_, t)| t.grad.as_ref())
                    .flat_map(|g| g.iter().map(|x| x.as_f64() * x.as_f64()))
                    .sum();
                let norm = sq.sqrt();
                if norm > max {
                    max / norm
                } else {
                    1.0
                }
            }
            None => 1.0,
        };
        self.step += 1;
        let c = self.config;
        let b1 = T::from_f64(c.beta1);
        let b2 = T::from_f64(c.beta2);
        let one = T::one();
        let bc1 = T::from_f64(1.0 - c.beta1.powi(self.step as i32));
        let bc2 = T::from_f64(1.0 - c.beta2.powi(self.step as i32));
        let lr = T::from_f64(c.lr);
        let eps = T::from_f64(c.eps);
        let clip = T::from_f64(clip);
        for i in 0..params.len() {
            let t = params.by_index_mut(i);
            if t.len() != self.m[i].len() {
                return Err(Error::Contract(format!(
                    "Adam moment buffer {i} does not match parameter shape {:?}",
                    t.shape()
                )));
            }
            if !t.requires_grad {
                t.grad = None;
                continue;
            }
            let grad = t.grad.take().expect("checked above");
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            for (j, p) in t.data_mut().iter_mut().enumerate() {
                let gj = grad[j] * clip;
                m[j] = b1 * m[j] + (one - b1) * gj;
                v[j] = b2 * v[j] + (one - b2) * gj * gj;
                let mh = m[j] / bc1;
                let vh = v[j] / bc2;
                *p -= lr * mh / (vh.sqrt() + eps);
            }
        }
        Ok(())
    }
}
