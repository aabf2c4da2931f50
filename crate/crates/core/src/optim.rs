//! First-order optimizers and learning-rate schedules.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::ParamStore;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    #[default]
    Adam,
    /// Gradient descent with heavy-ball momentum.
    Sgd,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Schedule {
    #[default]
    Constant,
    /// Multiply by `step_gamma` every `step_every` epochs.
    Step,
    /// Half-cosine decay to zero over the run.
    Cosine,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerConfig {
    pub kind: OptimizerKind,
    pub learning_rate: f64,
    pub schedule: Schedule,
    pub step_every: usize,
    pub step_gamma: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub momentum: f64,
    pub weight_decay: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            kind: OptimizerKind::Adam,
            learning_rate: 1e-3,
            schedule: Schedule::Constant,
            step_every: 10,
            step_gamma: 0.5,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            momentum: 0.9,
            weight_decay: 0.0,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.learning_rate > 0.0
            && self.learning_rate.is_finite()
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.epsilon > 0.0
            && (0.0..1.0).contains(&self.momentum)
            && self.weight_decay >= 0.0
            && self.step_gamma > 0.0
            && self.step_every >= 1;
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid optimizer settings {self:?}")))
        }
    }

    /// Learning rate for a zero-based epoch of a run of `epochs`.
    pub fn lr_at(&self, epoch: usize, epochs: usize) -> f64 {
        match self.schedule {
            Schedule::Constant => self.learning_rate,
            Schedule::Step => self.learning_rate * self.step_gamma.powi((epoch / self.step_every) as i32),
            Schedule::Cosine => {
                let t = epoch as f64 / epochs.max(1) as f64;
                0.5 * self.learning_rate * (1.0 + (std::f64::consts::PI * t).cos())
            }
        }
    }
}

struct Slot {
    m: Vec<f64>,
    v: Vec<f64>,
}

/// Per-parameter optimizer state keyed by parameter name.
pub struct Optimizer {
    cfg: OptimizerConfig,
    slots: HashMap<String, Slot>,
    t: u64,
}

impl Optimizer {
    pub fn new(cfg: OptimizerConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Self {
            cfg,
            slots: HashMap::new(),
            t: 0,
        })
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    /// Applies one update with learning rate `lr`.
    pub fn step(&mut self, params: &mut ParamStore, grads: &[(String, Tensor)], lr: f64) -> Result<()> {
        self.t += 1;
        let c = &self.cfg;
        let bc1 = 1.0 - c.beta1.powf(self.t as f64);
        let bc2 = 1.0 - c.beta2.powf(self.t as f64);
        for (name, g) in grads {
            let w = params.get_mut(name)?;
            if w.shape() != g.shape() {
                return Err(Error::Shape(format!(
                    "gradient {:?} for `{name}` {:?}",
                    g.shape(),
                    w.shape()
                )));
            }
            let slot = self.slots.entry(name.clone()).or_insert_with(|| Slot {
                m: vec![0.0; g.len()],
                v: vec![0.0; g.len()],
            });
            let w = w.data_mut();
            for i in 0..w.len() {
                let gi = g.data()[i] + c.weight_decay * w[i];
                match c.kind {
                    OptimizerKind::Adam => {
                        slot.m[i] = c.beta1 * slot.m[i] + (1.0 - c.beta1) * gi;
                        slot.v[i] = c.beta2 * slot.v[i] + (1.0 - c.beta2) * gi * gi;
                        let mh = slot.m[i] / bc1;
                        let vh = slot.v[i] / bc2;
                        w[i] -= lr * mh / (vh.sqrt() + c.epsilon);
                    }
                    OptimizerKind::Sgd => {
                        slot.m[i] = c.momentum * slot.m[i] + gi;
                        w[i] -= lr * slot.m[i];
                    }
                }
            }
        }
        Ok(())
    }
}
