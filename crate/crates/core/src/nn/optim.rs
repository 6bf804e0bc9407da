use serde::{Deserialize, Serialize};

use super::param::ParamStore;
use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum OptimizerKind {
    Sgd,
    Momentum { beta: f64 },
    Adam { beta1: f64, beta2: f64, eps: f64 },
}

impl OptimizerKind {
    pub fn adam() -> Self {
        OptimizerKind::Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl Default for OptimizerKind {
    fn default() -> Self {
        Self::adam()
    }
}

/// First-order optimizer over the trainable entries of a [`ParamStore`].
#[derive(Debug, Clone)]
pub struct Optimizer {
    kind: OptimizerKind,
    lr: f64,
    step: u64,
    first: Vec<Option<Tensor>>,
    second: Vec<Option<Tensor>>,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, lr: f64) -> Result<Self> {
        if !(lr > 0.0 && lr.is_finite()) {
            return Err(Error::Config(format!("learning rate must be positive, got {lr}")));
        }
        match kind {
            OptimizerKind::Momentum { beta } if !(0.0..1.0).contains(&beta) => {
                return Err(Error::Config(format!("momentum {beta} outside [0, 1)")));
            }
            OptimizerKind::Adam { beta1, beta2, eps }
                if !(0.0..1.0).contains(&beta1) || !(0.0..1.0).contains(&beta2) || eps <= 0.0 =>
            {
                return Err(Error::Config("invalid adam settings".into()));
            }
            _ => {}
        }
        Ok(Self {
            kind,
            lr,
            step: 0,
            first: Vec::new(),
            second: Vec::new(),
        })
    }

    pub fn sgd(lr: f64) -> Result<Self> {
        Self::new(OptimizerKind::Sgd, lr)
    }

    pub fn lr(&self) -> f64 {
        self.lr
    }

    pub fn step(&mut self, store: &mut ParamStore) {
        self.step += 1;
        if self.first.len() < store.len() {
            self.first.resize(store.len(), None);
            self.second.resize(store.len(), None);
        }
        let lr = self.lr;
        for (i, p) in store.iter_mut().enumerate() {
            if !p.trainable {
                continue;
            }
            match self.kind {
                OptimizerKind::Sgd => {
                    for (v, g) in p.value.data_mut().iter_mut().zip(p.gradient.data()) {
                        *v -= lr * g;
                    }
                }
                OptimizerKind::Momentum { beta } => {
                    let vel = self.first[i].get_or_insert_with(|| Tensor::zeros(p.value.shape()));
                    for ((v, m), g) in p
                        .value
                        .data_mut()
                        .iter_mut()
                        .zip(vel.data_mut())
                        .zip(p.gradient.data())
                    {
                        *m = beta * *m + g;
                        *v -= lr * *m;
                    }
                }
                OptimizerKind::Adam { beta1, beta2, eps } => {
                    let t = self.step as i32;
                    let bc1 = 1.0 - beta1.powi(t);
                    let bc2 = 1.0 - beta2.powi(t);
                    let m = self.first[i].get_or_insert_with(|| Tensor::zeros(p.value.shape()));
                    let s = self.second[i].get_or_insert_with(|| Tensor::zeros(p.value.shape()));
                    for (((v, m), s), g) in p
                        .value
                        .data_mut()
                        .iter_mut()
                        .zip(m.data_mut())
                        .zip(s.data_mut())
                        .zip(p.gradient.data())
                    {
                        *m = beta1 * *m + (1.0 - beta1) * g;
                        *s = beta2 * *s + (1.0 - beta2) * g * g;
                        let m_hat = *m / bc1;
                        let s_hat = *s / bc2;
                        *v -= lr * m_hat / (s_hat.sqrt() + eps);
                    }
                }
            }
        }
    }
}
