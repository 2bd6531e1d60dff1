//! Adam and RMSProp with per-epoch exponential learning-rate decay.

use serde::{Deserialize, Serialize};

use crate::layer::Param;
use crate::{Network, NnError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    Adam,
    RmsProp,
}

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const RMSPROP_ALPHA: f64 = 0.99;
pub const EPS: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub kind: OptimizerKind,
    pub lr: f64,
    pub weight_decay: f64,
    /// Multiplier applied to `lr` by [`OptimizerState::end_epoch`].
    pub decay_gamma: f64,
    pub step: u64,
    /// Adam first moments; unused (empty) for RMSProp.
    pub m: Vec<Vec<f64>>,
    /// Adam second moments or the RMSProp square average.
    pub v: Vec<Vec<f64>>,
}

impl OptimizerState {
    pub fn new(kind: OptimizerKind, lr: f64, weight_decay: f64, decay_gamma: f64) -> Result<Self> {
        if !(lr > 0.0) || !lr.is_finite() {
            return Err(NnError::InvalidSpec(format!("learning rate must be positive, got {lr}")));
        }
        if weight_decay < 0.0 || !(decay_gamma > 0.0 && decay_gamma <= 1.0) {
            return Err(NnError::InvalidSpec("bad weight decay or decay factor".into()));
        }
        Ok(Self {
            kind,
            lr,
            weight_decay,
            decay_gamma,
            step: 0,
            m: Vec::new(),
            v: Vec::new(),
        })
    }

    pub fn adam(lr: f64) -> Self {
        Self::new(OptimizerKind::Adam, lr, 0.0, 0.9).expect("valid Adam settings")
    }

    pub fn rmsprop(lr: f64, weight_decay: f64) -> Self {
        Self::new(OptimizerKind::RmsProp, lr, weight_decay, 0.9).expect("valid RMSProp settings")
    }

    /// One update of every parameter from its stored gradient.
    pub fn step(&mut self, net: &mut Network) -> Result<()> {
        let mut params: Vec<&mut Param> = net.params_mut().collect();
        self.step_params(&mut params)
    }

    pub fn step_params(&mut self, params: &mut [&mut Param]) -> Result<()> {
        if self.v.is_empty() {
            self.v = params.iter().map(|p| vec![0.0; p.value.len()]).collect();
            if self.kind == OptimizerKind::Adam {
                self.m = self.v.clone();
            }
        }
        if self.v.len() != params.len() || self.v.iter().zip(params.iter()).any(|(b, p)| b.len() != p.value.len()) {
            return Err(NnError::OptimizerMismatch(format!(
                "{} buffers for {} parameter arrays",
                self.v.len(),
                params.len()
            )));
        }
        for p in params.iter() {
            if p.grad.len() != p.value.len() {
                return Err(NnError::OptimizerMismatch("gradient length differs from parameter".into()));
            }
        }
        self.step += 1;
        let lr = self.lr;
        match self.kind {
            OptimizerKind::Adam => {
                let t = self.step as i32;
                let c1 = 1.0 - ADAM_BETA1.powi(t);
                let c2 = 1.0 - ADAM_BETA2.powi(t);
                for ((p, m), v) in params.iter_mut().zip(&mut self.m).zip(&mut self.v) {
                    for i in 0..p.value.len() {
                        let g = p.grad[i] + self.weight_decay * p.value[i];
                        m[i] = ADAM_BETA1 * m[i] + (1.0 - ADAM_BETA1) * g;
                        v[i] = ADAM_BETA2 * v[i] + (1.0 - ADAM_BETA2) * g * g;
                        let mh = m[i] / c1;
                        let vh = v[i] / c2;
                        p.value[i] -= lr * mh / (vh.sqrt() + EPS);
                    }
                }
            }
            OptimizerKind::RmsProp => {
                let wd = self.weight_decay;
                for (p, v) in params.iter_mut().zip(&mut self.v) {
                    for i in 0..p.value.len() {
                        let g = p.grad[i];
                        v[i] = RMSPROP_ALPHA * v[i] + (1.0 - RMSPROP_ALPHA) * g * g;
                        p.value[i] -= lr * (g / (v[i].sqrt() + EPS) + wd * p.value[i]);
                    }
                }
            }
        }
        Ok(())
    }

    pub fn end_epoch(&mut self) {
        self.lr *= self.decay_gamma;
    }
}
