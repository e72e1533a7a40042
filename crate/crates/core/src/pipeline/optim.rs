use serde::{Deserialize, Serialize};

use crate::backbone::{Gradients, Param};
use crate::error::{config_err, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum OptimizerConfig {
    /// Adam with decoupled weight decay.
    Adamw {
        beta1: f64,
        beta2: f64,
        eps: f64,
        weight_decay: f64,
    },
    Sgd {
        momentum: f64,
        weight_decay: f64,
    },
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self::Adamw {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.01,
        }
    }
}

impl OptimizerConfig {
    pub fn sgd() -> Self {
        Self::Sgd {
            momentum: 0.9,
            weight_decay: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            Self::Adamw {
                beta1,
                beta2,
                eps,
                weight_decay,
            } => (0.0..1.0).contains(&beta1) && (0.0..1.0).contains(&beta2) && eps > 0.0 && weight_decay >= 0.0,
            Self::Sgd { momentum, weight_decay } => (0.0..1.0).contains(&momentum) && weight_decay >= 0.0,
        };
        if ok {
            Ok(())
        } else {
            config_err(format!("invalid optimizer settings {self:?}"))
        }
    }
}

pub struct Optimizer {
    config: OptimizerConfig,
    lr: f64,
    t: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Optimizer {
    pub fn new(config: OptimizerConfig, lr: f64, params: &[Param]) -> Self {
        let zeros: Vec<Vec<f64>> = params.iter().map(|p| vec![0.0; p.data.len()]).collect();
        Self {
            config,
            lr,
            t: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    pub fn step(&mut self, params: &mut [Param], grads: &Gradients) {
        self.t += 1;
        let lr = self.lr;
        match self.config {
            OptimizerConfig::Adamw {
                beta1,
                beta2,
                eps,
                weight_decay,
            } => {
                let c1 = 1.0 - beta1.powi(self.t as i32);
                let c2 = 1.0 - beta2.powi(self.t as i32);
                for ((p, g), (m, v)) in params.iter_mut().zip(&grads.0).zip(self.m.iter_mut().zip(self.v.iter_mut())) {
                    for i in 0..p.data.len() {
                        let gi = g[i];
                        m[i] = beta1 * m[i] + (1.0 - beta1) * gi;
                        v[i] = beta2 * v[i] + (1.0 - beta2) * gi * gi;
                        p.data[i] -= lr * weight_decay * p.data[i];
                        p.data[i] -= lr * (m[i] / c1) / ((v[i] / c2).sqrt() + eps);
                    }
                }
            }
            OptimizerConfig::Sgd { momentum, weight_decay } => {
                for ((p, g), buf) in params.iter_mut().zip(&grads.0).zip(self.m.iter_mut()) {
                    for i in 0..p.data.len() {
                        let gi = g[i] + weight_decay * p.data[i];
                        buf[i] = momentum * buf[i] + gi;
                        p.data[i] -= lr * buf[i];
                    }
                }
            }
        }
    }
}
