//! First-order optimizers over flat `f64` parameter slots.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    /// Gradient descent with optional momentum and L2 weight decay.
    Sgd,
    /// Adam with decoupled weight decay.
    AdamW,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptimizerConfig {
    pub kind: OptimizerKind,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub momentum: f64,
}

impl OptimizerConfig {
    pub fn sgd(learning_rate: f64) -> Self {
        OptimizerConfig {
            kind: OptimizerKind::Sgd,
            learning_rate,
            weight_decay: 0.0,
            momentum: 0.0,
        }
    }

    pub fn adamw(learning_rate: f64, weight_decay: f64) -> Self {
        OptimizerConfig {
            kind: OptimizerKind::AdamW,
            learning_rate,
            weight_decay,
            momentum: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!("learning rate must be positive, got {}", self.learning_rate)));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(Error::Config(format!("weight decay must be non-negative, got {}", self.weight_decay)));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config(format!("momentum must be in [0, 1), got {}", self.momentum)));
        }
        Ok(())
    }
}

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const EPS: f64 = 1e-8;

#[derive(Debug, Clone)]
pub struct Optimizer {
    cfg: OptimizerConfig,
    step: i32,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
}

impl Optimizer {
    /// `slots` gives the length of each parameter tensor.
    pub fn new(cfg: OptimizerConfig, slots: &[usize]) -> Self {
        Optimizer {
            cfg,
            step: 0,
            first: slots.iter().map(|&n| vec![0.0; n]).collect(),
            second: match cfg.kind {
                OptimizerKind::AdamW => slots.iter().map(|&n| vec![0.0; n]).collect(),
                OptimizerKind::Sgd => Vec::new(),
            },
        }
    }

    /// Call once per mini-batch before updating the slots.
    pub fn begin_step(&mut self) {
        self.step += 1;
    }

    pub fn update(&mut self, slot: usize, params: &mut [f64], grads: &[f64]) {
        let lr = self.cfg.learning_rate;
        let wd = self.cfg.weight_decay;
        match self.cfg.kind {
            OptimizerKind::Sgd => {
                let mu = self.cfg.momentum;
                let vel = &mut self.first[slot];
                for ((p, &g), v) in params.iter_mut().zip(grads).zip(vel.iter_mut()) {
                    let g = g + wd * *p;
                    *v = mu * *v + g;
                    *p -= lr * *v;
                }
            }
            OptimizerKind::AdamW => {
                let c1 = 1.0 - BETA1.powi(self.step.max(1));
                let c2 = 1.0 - BETA2.powi(self.step.max(1));
                let (m, v) = (&mut self.first[slot], &mut self.second[slot]);
                for (i, (p, &g)) in params.iter_mut().zip(grads).enumerate() {
                    m[i] = BETA1 * m[i] + (1.0 - BETA1) * g;
                    v[i] = BETA2 * v[i] + (1.0 - BETA2) * g * g;
                    let mh = m[i] / c1;
                    let vh = v[i] / c2;
                    *p -= lr * (mh / (vh.sqrt() + EPS) + wd * *p);
                }
            }
        }
    }
}
