use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::arch::ArchSpec;
use super::init::{init_weights, InitMethod};
use crate::datasets::{split_dataset, DataSplit, ImageDataset};
use crate::error::{bail, Result};
use crate::rng::SeedStream;
use crate::tensor::{Activation, OptimizerKind, OptimizerState, Tape, Tensor, Var};

/// Generating factors of one base model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub seed: u64,
    pub init: InitMethod,
    pub activation: Activation,
    pub optimizer: OptimizerKind,
    pub lr: f64,
    pub l2_reg: f64,
    pub dropout: f64,
    pub train_fraction: f64,
    pub epochs: usize,
    pub batch_size: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            init: InitMethod::Uniform,
            activation: Activation::Tanh,
            optimizer: OptimizerKind::Adam,
            lr: 3e-5,
            l2_reg: 0.0,
            dropout: 0.0,
            train_fraction: 1.0,
            epochs: 75,
            batch_size: 32,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            bail!(Config, "epochs must be at least 1");
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            bail!(Config, "learning rate must be positive, got {}", self.lr);
        }
        if self.batch_size == 0 {
            bail!(Config, "batch size must be at least 1");
        }
        if !(0.0..1.0).contains(&self.dropout) {
            bail!(Config, "dropout {} must lie in [0, 1)", self.dropout);
        }
        if !(self.train_fraction > 0.0 && self.train_fraction <= 1.0) {
            bail!(Config, "train fraction {} must lie in (0, 1]", self.train_fraction);
        }
        if self.l2_reg < 0.0 {
            bail!(Config, "l2 regularization must be non-negative");
        }
        Ok(())
    }
}

/// Metrics after one training epoch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    pub train_acc: f64,
    pub test_acc: f64,
    pub ggap: f64,
    /// One-vs-rest F1 on the test data.
    pub per_class_f1: Vec<f64>,
    pub train_loss: f64,
}

/// Result of training one base model.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainedModel {
    pub records: Vec<EpochRecord>,
    /// Flat weights after each epoch, aligned with `records`.
    pub checkpoints: Vec<Vec<f32>>,
    /// Reason the model was excluded, if it crashed.
    pub crashed: Option<String>,
}

/// Accuracy, per-class F1 and mean loss of a classifier.
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub accuracy: f64,
    pub per_class_f1: Vec<f64>,
    pub loss: f64,
}

const EVAL_CHUNK: usize = 500;

pub fn evaluate(arch: &ArchSpec, flat: &[f32], data: &ImageDataset) -> Result<Evaluation> {
    let c = data.class_count;
    if data.is_empty() {
        return Ok(Evaluation {
            accuracy: f64::NAN,
            per_class_f1: vec![0.0; c],
            loss: f64::NAN,
        });
    }
    let (mut tp, mut fp, mut fneg) = (vec![0usize; c], vec![0usize; c], vec![0usize; c]);
    let mut correct = 0usize;
    let mut loss = 0.0f64;
    let idx: Vec<usize> = (0..data.len()).collect();
    for chunk in idx.chunks(EVAL_CHUNK) {
        let (x, y) = data.batch(chunk);
        let logits = arch.logits(flat, &x, chunk.len())?;
        for (row, &t) in logits.chunks(c).zip(&y) {
            let pred = argmax(row);
            let max = row[pred] as f64;
            let lse = max + row.iter().map(|&v| (v as f64 - max).exp()).sum::<f64>().ln();
            loss += lse - row[t] as f64;
            if pred == t {
                correct += 1;
                tp[t] += 1;
            } else {
                fp[pred] += 1;
                fneg[t] += 1;
            }
        }
    }
    let per_class_f1 = (0..c)
        .map(|k| {
            let d = 2 * tp[k] + fp[k] + fneg[k];
            if d == 0 {
                0.0
            } else {
                2.0 * tp[k] as f64 / d as f64
            }
        })
        .collect();
    Ok(Evaluation {
        accuracy: correct as f64 / data.len() as f64,
        per_class_f1,
        loss: loss / data.len() as f64,
    })
}

pub(crate) fn argmax(row: &[f32]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Trains from the configured initialization.
pub fn train_model(arch: &ArchSpec, data: &DataSplit, cfg: &TrainConfig) -> Result<TrainedModel> {
    let init = init_weights(arch, cfg.init, cfg.seed);
    train_from(arch, data, cfg, init)
}

/// Trains from explicit initial weights. Data order and dropout masks
/// depend only on `cfg.seed`.
pub fn train_from(arch: &ArchSpec, data: &DataSplit, cfg: &TrainConfig, init: Vec<f32>) -> Result<TrainedModel> {
    cfg.validate()?;
    let arch = arch.clone().with_activation(cfg.activation);
    if arch.output_dim()? != data.train.class_count {
        bail!(Config, "{} has {} outputs but the data has {} classes", arch.name, arch.output_dim()?, data.train.class_count);
    }
    let stream = SeedStream::new(cfg.seed);
    let train = if cfg.train_fraction < 1.0 {
        split_dataset(&data.train, cfg.train_fraction, stream.split(0x7F).seed())?.train
    } else {
        data.train.clone()
    };
    let mut params: Vec<Tensor<f32>> = arch.unflatten(&init)?;
    let mut opt = OptimizerState::new(cfg.optimizer, cfg.lr, cfg.l2_reg);
    let [c, h, w] = arch.input;
    let mut out = TrainedModel {
        records: Vec::with_capacity(cfg.epochs),
        checkpoints: Vec::with_capacity(cfg.epochs),
        crashed: None,
    };
    for epoch in 1..=cfg.epochs {
        let mut order: Vec<usize> = (0..train.len()).collect();
        order.shuffle(&mut stream.rng_for(&[0xE0, epoch as u64]));
        let mut drop_rng = stream.rng_for(&[0xD0, epoch as u64]);
        let mut loss_sum = 0.0;
        let mut batches = 0usize;
        for batch in order.chunks(cfg.batch_size) {
            let (x, y) = train.batch(batch);
            let mut tape = Tape::<f32>::new();
            let vars: Vec<Var> = params.iter().map(|p| tape.leaf(p)).collect();
            let xv = tape.constant(&[batch.len(), c, h, w], x)?;
            let dropout = (cfg.dropout > 0.0).then_some((cfg.dropout, &mut drop_rng));
            let logits = arch.forward(&mut tape, &vars, xv, dropout)?;
            let loss = tape.softmax_cross_entropy(logits, &y)?;
            let lv = tape.scalar(loss) as f64;
            if !lv.is_finite() {
                out.crashed = Some(format!("non-finite loss at epoch {epoch}"));
                return Ok(out);
            }
            loss_sum += lv;
            batches += 1;
            tape.backward(loss)?;
            let mut refs: Vec<&mut Tensor<f32>> = params.iter_mut().collect();
            tape.accumulate_grads(&mut refs, &vars)?;
            opt.step(&mut params)?;
        }
        let flat: Vec<f32> = params.iter().flat_map(|p| p.data().iter().copied()).collect();
        if flat.iter().any(|v| !v.is_finite()) {
            out.crashed = Some(format!("non-finite weights at epoch {epoch}"));
            return Ok(out);
        }
        let tr = evaluate(&arch, &flat, &data.train)?;
        let te = evaluate(&arch, &flat, &data.test)?;
        out.records.push(EpochRecord {
            epoch,
            train_acc: tr.accuracy,
            test_acc: te.accuracy,
            ggap: tr.accuracy - te.accuracy,
            per_class_f1: te.per_class_f1,
            train_loss: loss_sum / batches as f64,
        });
        out.checkpoints.push(flat);
    }
    let floor = 1.0 / data.train.class_count as f64 - 0.05;
    if let Some(last) = out.records.last() {
        if last.train_acc < floor {
            out.crashed = Some(format!("final train accuracy {:.3} below {floor:.3}", last.train_acc));
        }
    }
    Ok(out)
}
