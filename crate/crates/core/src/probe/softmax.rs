//! Multinomial logistic regression probe trained with Adam.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::metrics::accuracy;
use super::ridge::Standardizer;
use crate::error::{bail, Result};
use crate::rng::SeedStream;
use crate::tensor::{OptimizerState, Tensor};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SoftmaxConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub max_epochs: usize,
    pub patience: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for SoftmaxConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            weight_decay: 1e-6,
            max_epochs: 200,
            patience: 20,
            batch_size: 32,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SoftmaxProbe {
    /// `[classes, d]`, row-major.
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
    pub classes: usize,
    pub standardizer: Standardizer,
    pub epochs_run: usize,
}

impl SoftmaxProbe {
    fn logits(&self, xs: &[f64]) -> Vec<f64> {
        let d = self.standardizer.mean.len();
        xs.chunks(d)
            .flat_map(|r| {
                (0..self.classes).map(move |c| {
                    self.weight[c * d..(c + 1) * d].iter().zip(r).map(|(w, x)| w * x).sum::<f64>() + self.bias[c]
                })
            })
            .collect()
    }

    pub fn predict(&self, x: &[f64]) -> Vec<usize> {
        let l = self.logits(&self.standardizer.apply(x));
        l.chunks(self.classes)
            .map(|r| (0..r.len()).fold(0, |b, i| if r[i] > r[b] { i } else { b }))
            .collect()
    }
}

/// Trains on `(x_train, y_train)` and keeps the epoch with the best
/// validation accuracy, stopping after `patience` epochs without gain.
pub fn softmax_probe_fit(
    x_train: &[f64],
    y_train: &[usize],
    x_val: &[f64],
    y_val: &[usize],
    d: usize,
    classes: usize,
    cfg: &SoftmaxConfig,
) -> Result<SoftmaxProbe> {
    if x_train.len() != y_train.len() * d || x_val.len() != y_val.len() * d {
        bail!(Dimension, "softmax probe: features and labels disagree");
    }
    if let Some(&bad) = y_train.iter().chain(y_val).find(|&&y| y >= classes) {
        bail!(Index, "label {bad} out of range for {classes} classes");
    }
    let mut present = vec![false; classes];
    y_train.iter().for_each(|&y| present[y] = true);
    if present.iter().filter(|&&p| p).count() < 2 {
        bail!(Data, "softmax probe needs at least 2 classes in the training split");
    }
    let standardizer = Standardizer::fit(x_train, d)?;
    let xs = standardizer.apply(x_train);
    let mut params = vec![
        Tensor::<f64>::param(&[classes, d], vec![0.0; classes * d])?,
        Tensor::<f64>::param(&[classes], vec![0.0; classes])?,
    ];
    let mut opt = OptimizerState::adam(cfg.lr, cfg.weight_decay);
    let mut probe = SoftmaxProbe {
        weight: vec![0.0; classes * d],
        bias: vec![0.0; classes],
        classes,
        standardizer,
        epochs_run: 0,
    };
    let score = |p: &SoftmaxProbe| -> Result<f64> {
        if y_val.is_empty() {
            return Ok(0.0);
        }
        accuracy(&p.predict(x_val), y_val)
    };
    let mut best = (score(&probe)?, probe.clone());
    let mut since = 0usize;
    let stream = SeedStream::new(cfg.seed);
    let n = y_train.len();
    for epoch in 1..=cfg.max_epochs {
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut stream.rng_for(&[epoch as u64]));
        for batch in order.chunks(cfg.batch_size.max(1)) {
            let (w, b) = (params[0].data(), params[1].data());
            let mut gw = vec![0.0; classes * d];
            let mut gb = vec![0.0; classes];
            for &i in batch {
                let r = &xs[i * d..(i + 1) * d];
                let mut z: Vec<f64> = (0..classes)
                    .map(|c| w[c * d..(c + 1) * d].iter().zip(r).map(|(a, x)| a * x).sum::<f64>() + b[c])
                    .collect();
                let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                z.iter_mut().for_each(|v| *v = (*v - m).exp());
                let s: f64 = z.iter().sum();
                for c in 0..classes {
                    let g = (z[c] / s - if c == y_train[i] { 1.0 } else { 0.0 }) / batch.len() as f64;
                    gb[c] += g;
                    gw[c * d..(c + 1) * d].iter_mut().zip(r).for_each(|(a, x)| *a += g * x);
                }
            }
            params[0].grad = Some(gw);
            params[1].grad = Some(gb);
            opt.step(&mut params)?;
        }
        probe.weight.copy_from_slice(params[0].data());
        probe.bias.copy_from_slice(params[1].data());
        probe.epochs_run = epoch;
        let s = score(&probe)?;
        if s > best.0 {
            best = (s, probe.clone());
            since = 0;
        } else {
            since += 1;
            if since >= cfg.patience {
                break;
            }
        }
    }
    let mut out = best.1;
    out.epochs_run = probe.epochs_run;
    Ok(out)
}
