use serde::{Deserialize, Serialize};

use super::{Scalar, Tensor};
use crate::error::{bail, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Adam,
    Sgd,
}

impl OptimizerKind {
    pub fn parse(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "adam" => Ok(OptimizerKind::Adam),
            "sgd" => Ok(OptimizerKind::Sgd),
            other => bail!(Config, "unknown optimizer '{other}'"),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            OptimizerKind::Adam => "adam",
            OptimizerKind::Sgd => "sgd",
        }
    }
}

/// Adam or SGD with L2 weight decay folded into the gradient.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerState {
    pub kind: OptimizerKind,
    pub lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step_count: u64,
    first: Vec<Vec<f32>>,
    second: Vec<Vec<f32>>,
}

impl OptimizerState {
    pub fn new(kind: OptimizerKind, lr: f64, weight_decay: f64) -> Self {
        Self {
            kind,
            lr,
            weight_decay,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step_count: 0,
            first: Vec::new(),
            second: Vec::new(),
        }
    }

    pub fn adam(lr: f64, weight_decay: f64) -> Self {
        Self::new(OptimizerKind::Adam, lr, weight_decay)
    }

    pub fn sgd(lr: f64, weight_decay: f64) -> Self {
        Self::new(OptimizerKind::Sgd, lr, weight_decay)
    }

    /// First-moment buffer of parameter `i`, once allocated.
    pub fn first_moment(&self, i: usize) -> Option<&[f32]> {
        self.first.get(i).map(|v| v.as_slice())
    }

    pub fn second_moment(&self, i: usize) -> Option<&[f32]> {
        self.second.get(i).map(|v| v.as_slice())
    }

    /// Applies one update and consumes the parameters' gradients.
    pub fn step<T: Scalar>(&mut self, params: &mut [Tensor<T>]) -> Result<()> {
        if let Some(i) = params.iter().position(|p| p.grad.is_none()) {
            bail!(State, "parameter {i} (shape {:?}) has no gradient", params[i].shape());
        }
        if self.kind == OptimizerKind::Adam {
            if self.first.is_empty() {
                self.first = params.iter().map(|p| vec![0.0; p.numel()]).collect();
                self.second = self.first.clone();
            }
            let shapes_ok = self.first.len() == params.len()
                && self.first.iter().zip(params.iter()).all(|(m, p)| m.len() == p.numel());
            if !shapes_ok {
                bail!(Dimension, "optimizer moments do not match the parameter list");
            }
        }
        self.step_count += 1;
        let (lr, wd) = (self.lr, self.weight_decay);
        match self.kind {
            OptimizerKind::Sgd => {
                for p in params.iter_mut() {
                    let g = p.grad.take().expect("checked above");
                    for (w, g) in p.data_mut().iter_mut().zip(g) {
                        let wf = w.to_f64();
                        *w = T::from_f64(wf - lr * (g.to_f64() + wd * wf));
                    }
                }
            }
            OptimizerKind::Adam => {
                let (b1, b2) = (self.beta1, self.beta2);
                let t = self.step_count as i32;
                let c1 = 1.0 - b1.powi(t);
                let c2 = 1.0 - b2.powi(t);
                for ((p, m), v) in params.iter_mut().zip(&mut self.first).zip(&mut self.second) {
                    let g = p.grad.take().expect("checked above");
                    for (((w, g), m), v) in p.data_mut().iter_mut().zip(g).zip(m.iter_mut()).zip(v.iter_mut()) {
                        let wf = w.to_f64();
                        let g = g.to_f64() + wd * wf;
                        let mf = b1 * *m as f64 + (1.0 - b1) * g;
                        let vf = b2 * *v as f64 + (1.0 - b2) * g * g;
                        *m = mf as f32;
                        *v = vf as f32;
                        let mhat = mf / c1;
                        let vhat = vf / c2;
                        *w = T::from_f64(wf - lr * mhat / (vhat.sqrt() + self.eps));
                    }
                }
            }
        }
        Ok(())
    }
}
