//! Self-supervised objectives and the hyper-representation training loop.

use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::augment::{augment, AugmentConfig, PermutationSet, View};
use crate::encoder::{Bound, Group, HyperModel};
use crate::error::{bail, Error, Result};
use crate::rng::SeedStream;
use crate::store::LayerLayout;
use crate::tensor::{OptimizerState, Scalar, Tape, Tensor, Var};
use crate::zoo::{Split, Zoo};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SslMode {
    /// Reconstruction only.
    #[serde(rename = "ED")]
    Ed,
    /// NT-Xent contrastive loss only.
    #[serde(rename = "Ec")]
    Ec,
    /// Reconstruction plus NT-Xent.
    #[serde(rename = "EcD")]
    EcD,
    /// Reconstruction plus the positive-pair contrast.
    #[serde(rename = "Ec+D")]
    EcPlusD,
}

impl SslMode {
    pub const ALL: [SslMode; 4] = [SslMode::Ed, SslMode::Ec, SslMode::EcD, SslMode::EcPlusD];

    pub fn name(&self) -> &'static str {
        match self {
            SslMode::Ed => "ED",
            SslMode::Ec => "Ec",
            SslMode::EcD => "EcD",
            SslMode::EcPlusD => "Ec+D",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "ed" => Ok(SslMode::Ed),
            "ec" => Ok(SslMode::Ec),
            "ecd" => Ok(SslMode::EcD),
            "ec+d" | "ecplusd" | "ec_plus_d" => Ok(SslMode::EcPlusD),
            other => bail!(Config, "unknown training mode '{other}'"),
        }
    }

    pub fn reconstructs(&self) -> bool {
        !matches!(self, SslMode::Ec)
    }

    pub fn contrasts(&self) -> bool {
        !matches!(self, SslMode::Ed)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SslConfig {
    pub mode: SslMode,
    pub beta: f64,
    pub temperature: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub augment: AugmentConfig,
    pub seed: u64,
}

impl Default for SslConfig {
    fn default() -> Self {
        Self {
            mode: SslMode::EcD,
            beta: 0.5,
            temperature: 0.1,
            batch_size: 500,
            epochs: 100,
            lr: 1e-4,
            weight_decay: 1e-9,
            augment: AugmentConfig::default(),
            seed: 0,
        }
    }
}

impl SslConfig {
    pub fn validate(&self) -> Result<()> {
        if matches!(self.mode, SslMode::EcD | SslMode::EcPlusD) && !(self.beta > 0.0 && self.beta < 1.0) {
            bail!(Config, "{} needs 0 < beta < 1, got {}", self.mode.name(), self.beta);
        }
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            bail!(Config, "temperature must be positive, got {}", self.temperature);
        }
        if self.mode.contrasts() && !self.augment.any_enabled() {
            bail!(Config, "{} needs at least one augmentation for its views", self.mode.name());
        }
        if self.batch_size == 0 || self.epochs == 0 {
            bail!(Config, "batch size and epochs must be positive");
        }
        if self.mode == SslMode::EcD || self.mode == SslMode::Ec {
            if self.batch_size < 2 {
                bail!(Config, "NT-Xent needs batches of at least 2 samples");
            }
        }
        if !(self.lr > 0.0) || self.weight_decay < 0.0 {
            bail!(Config, "learning rate must be positive and weight decay non-negative");
        }
        self.augment.validate()
    }
}

// ----- losses -----------------------------------------------------------

/// Sum of squared errors per sample, averaged over samples.
pub fn mse_loss<T: Scalar>(tape: &mut Tape<T>, pred: Var, target: Var) -> Result<Var> {
    let rows = tape.shape(pred).first().copied().unwrap_or(1).max(1);
    let d = tape.sub(pred, target)?;
    let sq = tape.mul(d, d)?;
    let s = tape.sum(sq);
    Ok(tape.scale(s, T::from_f64(1.0 / rows as f64)))
}

/// NT-Xent over `[2m, p]` unit embeddings where row `i` and row `i + m`
/// are the two views of sample `i`.
pub fn ntxent_loss<T: Scalar>(tape: &mut Tape<T>, z: Var, temperature: f64) -> Result<Var> {
    let s = tape.shape(z).to_vec();
    if s.len() != 2 || s[0] % 2 != 0 {
        bail!(Dimension, "NT-Xent expects [2m, p] embeddings, got {s:?}");
    }
    let n = s[0];
    let m = n / 2;
    if m < 2 {
        bail!(Batch, "NT-Xent needs at least 2 samples per batch for negatives, got {m}");
    }
    let sim = tape.matmul_t(z, z, false, true)?;
    let sim = tape.scale(sim, T::from_f64(1.0 / temperature));
    let mut mask = vec![T::zero(); n * n];
    for i in 0..n {
        mask[i * n + i] = T::from_f64(-1e9);
    }
    let mask = tape.constant(&[n, n], mask)?;
    let logits = tape.add(sim, mask)?;
    let labels: Vec<usize> = (0..n).map(|i| (i + m) % n).collect();
    tape.softmax_cross_entropy(logits, &labels)
}

/// Mean of `-cos(a_i, b_i) + ln T` over unit-norm rows.
pub fn positive_contrast_loss<T: Scalar>(tape: &mut Tape<T>, a: Var, b: Var, temperature: f64) -> Result<Var> {
    let rows = tape.shape(a).first().copied().unwrap_or(1).max(1);
    let p = tape.mul(a, b)?;
    let s = tape.sum(p);
    let s = tape.scale(s, T::from_f64(-1.0 / rows as f64));
    Ok(tape.add_scalar(s, T::from_f64(temperature.ln())))
}

/// Mixes the loss parts according to `mode`.
pub fn combined_loss<T: Scalar>(tape: &mut Tape<T>, mode: SslMode, beta: f64, mse: Option<Var>, contrast: Option<Var>) -> Result<Var> {
    match (mode, mse, contrast) {
        (SslMode::Ed, Some(m), _) => Ok(m),
        (SslMode::Ec, _, Some(c)) => Ok(c),
        (SslMode::EcD | SslMode::EcPlusD, Some(m), Some(c)) => {
            if !(0.0..=1.0).contains(&beta) {
                bail!(Config, "beta {beta} must lie in [0, 1]");
            }
            let a = tape.scale(m, T::from_f64(beta));
            let b = tape.scale(c, T::from_f64(1.0 - beta));
            tape.add(a, b)
        }
        _ => bail!(Config, "{} is missing a loss part", mode.name()),
    }
}

// ----- metrics ----------------------------------------------------------

/// Pooled R² of reconstructions against the split's own mean vector.
pub fn pooled_r2(truth: &[f32], pred: &[f32], n: usize) -> Result<f64> {
    if truth.is_empty() || n == 0 {
        bail!(Data, "cannot score an empty split");
    }
    if truth.len() != pred.len() || truth.len() % n != 0 {
        bail!(Dimension, "{} truths vs {} predictions of width {n}", truth.len(), pred.len());
    }
    let rows = truth.len() / n;
    let mut mean = vec![0.0f64; n];
    for row in truth.chunks(n) {
        mean.iter_mut().zip(row).for_each(|(m, &x)| *m += x as f64);
    }
    mean.iter_mut().for_each(|m| *m /= rows as f64);
    let (mut ss_res, mut ss_tot) = (0.0, 0.0);
    for (t, p) in truth.chunks(n).zip(pred.chunks(n)) {
        for j in 0..n {
            ss_res += (t[j] as f64 - p[j] as f64).powi(2);
            ss_tot += (t[j] as f64 - mean[j]).powi(2);
        }
    }
    Ok(1.0 - ss_res / ss_tot)
}

/// Stacked weight vectors of one split, `[samples, N]`.
pub fn split_matrix(zoo: &Zoo, split: Split) -> Vec<f32> {
    zoo.samples(split).into_iter().flat_map(|s| zoo.weights_of(s).iter().copied()).collect()
}

/// Reconstruction R² of `model` on `split`.
pub fn reconstruction_r2(model: &HyperModel, zoo: &Zoo, split: Split) -> Result<f64> {
    let x = split_matrix(zoo, split);
    if x.is_empty() {
        bail!(Data, "split {} of {} is empty", split.name(), zoo.manifest.name);
    }
    let r = model.reconstruct(&x)?;
    pooled_r2(&x, &r, zoo.layout.n)
}

// ----- training ---------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub loss: f64,
    pub mse: f64,
    pub contrast: f64,
    pub train_r2: Option<f64>,
    pub val_r2: Option<f64>,
    pub val_loss: Option<f64>,
    pub temperature: f64,
}

pub fn history_csv(history: &[EpochLog]) -> String {
    let mut s = String::from("epoch,loss,mse,contrast,train_r2,val_r2,val_loss,temperature\n");
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    for h in history {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{}",
            h.epoch,
            h.loss,
            h.mse,
            h.contrast,
            opt(h.train_r2),
            opt(h.val_r2),
            opt(h.val_loss),
            h.temperature
        );
    }
    s
}

/// Rows used for the per-epoch training R².
pub const TRAIN_PROBE_ROWS: usize = 500;

/// Training data: stacked train and validation vectors.
#[derive(Debug, Clone)]
pub struct SslData {
    pub n: usize,
    pub train: Vec<f32>,
    pub val: Vec<f32>,
}

impl SslData {
    pub fn from_zoo(zoo: &Zoo) -> Self {
        Self {
            n: zoo.layout.n,
            train: split_matrix(zoo, Split::Train),
            val: split_matrix(zoo, Split::Val),
        }
    }

    pub fn train_len(&self) -> usize {
        self.train.len() / self.n
    }

    pub fn val_len(&self) -> usize {
        self.val.len() / self.n
    }

    /// Evenly strided training rows, at most [`TRAIN_PROBE_ROWS`].
    pub fn train_probe(&self) -> Vec<f32> {
        let rows = self.train_len();
        let stride = rows.div_ceil(TRAIN_PROBE_ROWS).max(1);
        (0..rows)
            .step_by(stride)
            .flat_map(|i| self.train[i * self.n..(i + 1) * self.n].iter().copied())
            .collect()
    }
}

/// Loss values of one batch.
#[derive(Debug, Clone, Copy, Default)]
struct Parts {
    loss: f64,
    mse: f64,
    contrast: f64,
}

/// Owns the model and optimizer state so training can be paused and resumed.
#[derive(Debug, Clone)]
pub struct Trainer {
    pub model: HyperModel,
    pub config: SslConfig,
    pub layout: LayerLayout,
    perms: Option<PermutationSet>,
    optimizers: [OptimizerState; 3],
    pub epoch: usize,
    pub history: Vec<EpochLog>,
    best: Option<(f64, HyperModel, usize)>,
}

const SELECT_KEY: u64 = 0xEE;

impl Trainer {
    pub fn new(model: HyperModel, layout: &LayerLayout, config: SslConfig) -> Result<Self> {
        config.validate()?;
        model.check_layout(layout)?;
        let perms = if config.augment.permutation {
            Some(PermutationSet::sample(layout, config.augment.permutation_count, config.augment.permutation_seed)?)
        } else {
            None
        };
        let opt = || OptimizerState::adam(config.lr, config.weight_decay);
        Ok(Self {
            model,
            layout: layout.clone(),
            perms,
            optimizers: [opt(), opt(), opt()],
            epoch: 0,
            history: Vec::new(),
            best: None,
            config,
        })
    }

    fn used_groups(&self) -> Vec<Group> {
        let mut g = vec![Group::Encoder];
        if self.config.mode.reconstructs() {
            g.push(Group::Decoder);
        }
        if self.config.mode.contrasts() {
            g.push(Group::Head);
        }
        g
    }

    fn views_of(&self, x: &[f32], keys: &[u64], count: usize) -> Result<Vec<View>> {
        let stream = SeedStream::new(self.config.seed);
        (0..count)
            .map(|v| {
                let mut rng = stream.rng_for(&[keys[0], keys[1], v as u64]);
                augment(x, &self.layout, &self.config.augment, self.perms.as_ref(), &mut rng)
            })
            .collect()
    }

    /// Builds the loss of one batch. `train` enables dropout.
    fn batch_loss(&self, tape: &mut Tape<f32>, bound: &Bound, views: &[Vec<View>], train_rng: Option<&mut crate::Rng>) -> Result<(Var, Parts)> {
        let cfg = &self.config;
        let m = views.len();
        let k = views[0].len();
        let n = self.layout.n;
        // view-major order: all first views, then all second views
        let mut input = Vec::with_capacity(k * m * n);
        let mut clean = Vec::with_capacity(k * m * n);
        for j in 0..k {
            for v in views {
                input.extend_from_slice(&v[j].augmented);
                clean.extend_from_slice(&v[j].clean);
            }
        }
        let rows = k * m;
        let grid = self.model.grid_constant(tape, &input, rows)?;
        let mut rng = train_rng;
        let z = self.model.encode_vars(tape, bound, grid, rng.as_deref_mut())?;
        let mut parts = Parts::default();
        let mse = if cfg.mode.reconstructs() {
            let out = self.model.decode_vars(tape, bound, z, rng.as_deref_mut())?;
            let w = self.model.ungrid_vars(tape, out)?;
            let target = tape.constant(&[rows, n], clean)?;
            let l = mse_loss(tape, w, target)?;
            parts.mse = tape.scalar(l) as f64;
            Some(l)
        } else {
            None
        };
        let contrast = if cfg.mode.contrasts() {
            let p = self.model.project_vars(tape, bound, z)?;
            let l = match cfg.mode {
                SslMode::EcPlusD => {
                    let a = tape.narrow(p, 0, 0, m)?;
                    let b = tape.narrow(p, 0, m, m)?;
                    positive_contrast_loss(tape, a, b, cfg.temperature)?
                }
                _ => ntxent_loss(tape, p, cfg.temperature)?,
            };
            parts.contrast = tape.scalar(l) as f64;
            Some(l)
        } else {
            None
        };
        let loss = combined_loss(tape, cfg.mode, cfg.beta, mse, contrast)?;
        parts.loss = tape.scalar(loss) as f64;
        Ok((loss, parts))
    }

    fn view_count(&self) -> usize {
        if self.config.mode.contrasts() {
            2
        } else {
            1
        }
    }

    /// Runs one epoch and returns its log entry.
    pub fn run_epoch(&mut self, data: &SslData) -> Result<EpochLog> {
        if data.n != self.layout.n {
            bail!(Layout, "data has width {}, layout {}", data.n, self.layout.n);
        }
        let rows = data.train_len();
        if rows == 0 {
            bail!(Data, "training split is empty");
        }
        let epoch = self.epoch + 1;
        let stream = SeedStream::new(self.config.seed);
        let mut order: Vec<usize> = (0..rows).collect();
        order.shuffle(&mut stream.rng_for(&[0xE0, epoch as u64]));
        let k = self.view_count();
        let mut sums = Parts::default();
        let mut batches = 0usize;
        let groups = self.used_groups();
        for (bi, batch) in order.chunks(self.config.batch_size).enumerate() {
            if self.config.mode == SslMode::Ec || self.config.mode == SslMode::EcD {
                if batch.len() < 2 {
                    continue;
                }
            }
            let views: Vec<Vec<View>> = batch
                .par_iter()
                .map(|&i| self.views_of(&data.train[i * data.n..(i + 1) * data.n], &[epoch as u64, i as u64], k))
                .collect::<Result<_>>()?;
            let mut tape = Tape::new();
            let bound = self.model.bind(&mut tape);
            let mut drop_rng = stream.rng_for(&[0xD0, epoch as u64, bi as u64]);
            let (loss, parts) = self.batch_loss(&mut tape, &bound, &views, Some(&mut drop_rng))?;
            if !parts.loss.is_finite() {
                return Err(Error::Divergence(format!(
                    "non-finite loss at epoch {epoch}, batch {bi} (mse {}, contrast {})",
                    parts.mse, parts.contrast
                )));
            }
            tape.backward(loss)?;
            for &g in &groups {
                let gi = g as usize;
                let mut refs: Vec<&mut Tensor<f32>> = self.model.groups[gi].iter_mut().collect();
                tape.accumulate_grads(&mut refs, &bound.groups[gi])?;
                self.optimizers[gi].step(&mut self.model.groups[gi])?;
            }
            sums.loss += parts.loss;
            sums.mse += parts.mse;
            sums.contrast += parts.contrast;
            batches += 1;
        }
        self.epoch = epoch;
        let b = batches.max(1) as f64;
        let train_r2 = if self.config.mode.reconstructs() {
            let probe = data.train_probe();
            let r = self.model.reconstruct(&probe)?;
            Some(pooled_r2(&probe, &r, data.n)?)
        } else {
            None
        };
        let (val_r2, val_loss) = self.validate(data)?;
        let log = EpochLog {
            epoch,
            loss: sums.loss / b,
            mse: sums.mse / b,
            contrast: sums.contrast / b,
            train_r2,
            val_r2,
            val_loss,
            temperature: self.config.temperature,
        };
        let score = if self.config.mode.reconstructs() { val_r2 } else { val_loss.map(|l| -l) };
        if let Some(score) = score.filter(|s| s.is_finite() && self.best.as_ref().map_or(true, |(b, _, _)| s > b)) {
            self.best = Some((score, self.model.clone(), epoch));
        }
        self.history.push(log.clone());
        Ok(log)
    }

    /// Validation reconstruction R² and loss with fixed views, dropout off.
    fn validate(&self, data: &SslData) -> Result<(Option<f64>, Option<f64>)> {
        let rows = data.val_len();
        if rows == 0 {
            return Ok((None, None));
        }
        let r2 = if self.config.mode.reconstructs() {
            let r = self.model.reconstruct(&data.val)?;
            Some(pooled_r2(&data.val, &r, data.n)?)
        } else {
            None
        };
        let k = self.view_count();
        let idx: Vec<usize> = (0..rows).collect();
        let mut total = 0.0;
        let mut batches = 0;
        for batch in idx.chunks(self.config.batch_size) {
            if self.config.mode.contrasts() && batch.len() < 2 {
                continue;
            }
            let views: Vec<Vec<View>> = batch
                .par_iter()
                .map(|&i| self.views_of(&data.val[i * data.n..(i + 1) * data.n], &[SELECT_KEY, i as u64], k))
                .collect::<Result<_>>()?;
            let mut tape = Tape::new();
            let bound = self.model.bind(&mut tape);
            let (_, parts) = self.batch_loss(&mut tape, &bound, &views, None)?;
            total += parts.loss;
            batches += 1;
        }
        Ok((r2, (batches > 0).then(|| total / batches as f64)))
    }

    /// Runs the remaining configured epochs.
    pub fn fit(&mut self, data: &SslData) -> Result<()> {
        while self.epoch < self.config.epochs {
            let log = self.run_epoch(data)?;
            log::info!(
                "epoch {} loss {:.5} mse {:.5} contrast {:.5} val r2 {:?}",
                log.epoch,
                log.loss,
                log.mse,
                log.contrast,
                log.val_r2
            );
        }
        Ok(())
    }

    /// Best model on validation and the epoch it came from.
    pub fn best(&self) -> (&HyperModel, usize) {
        match &self.best {
            Some((_, m, e)) => (m, *e),
            None => (&self.model, self.epoch),
        }
    }

    /// Saves the resumable state: current model, best model, optimizer moments.
    pub fn save_state(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::storage(dir, e))?;
        self.model.save(&dir.join("current.hze"))?;
        let (best, best_epoch) = self.best();
        best.save(&dir.join("best.hze"))?;
        let state = TrainerState {
            epoch: self.epoch,
            best_epoch,
            best_score: self.best.as_ref().map(|b| b.0),
            optimizers: self.optimizers.clone(),
            history: self.history.clone(),
        };
        let path = dir.join("trainer_state.json");
        std::fs::write(&path, serde_json::to_vec(&state)?).map_err(|e| Error::storage(&path, e))
    }

    /// Restores a trainer written by [`save_state`](Self::save_state).
    pub fn load_state(dir: &Path, layout: &LayerLayout, config: SslConfig) -> Result<Self> {
        let model = HyperModel::load(&dir.join("current.hze"), layout)?;
        let best = HyperModel::load(&dir.join("best.hze"), layout)?;
        let path = dir.join("trainer_state.json");
        let bytes = std::fs::read(&path).map_err(|e| Error::storage(&path, e))?;
        let state: TrainerState = serde_json::from_slice(&bytes)?;
        let mut t = Trainer::new(model, layout, config)?;
        t.epoch = state.epoch;
        t.optimizers = state.optimizers;
        t.history = state.history;
        t.best = state.best_score.map(|s| (s, best, state.best_epoch));
        Ok(t)
    }
}

#[derive(Serialize, Deserialize)]
struct TrainerState {
    epoch: usize,
    best_epoch: usize,
    best_score: Option<f64>,
    optimizers: [OptimizerState; 3],
    history: Vec<EpochLog>,
}

/// Trains on the zoo's train split and returns the best model on validation.
pub fn train_hyperrep(zoo: &Zoo, model: HyperModel, config: SslConfig) -> Result<(HyperModel, Vec<EpochLog>)> {
    let data = SslData::from_zoo(zoo);
    let mut t = Trainer::new(model, &zoo.layout, config)?;
    t.fit(&data)?;
    let (best, _) = t.best();
    Ok((best.clone(), t.history))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::EncoderConfig;
    use crate::tensor::gradcheck;
    use crate::zoo::build_ffn_tetris;

    fn unit_rows(tape: &mut Tape<f64>, rows: &[&[f64]]) -> Var {
        let p = rows[0].len();
        let data: Vec<f64> = rows.iter().flat_map(|r| r.iter().copied()).collect();
        let v = tape.constant(&[rows.len(), p], data).unwrap();
        tape.l2_normalize(v)
    }

    #[test]
    fn mse_values() {
        let mut t = Tape::<f64>::new();
        let a = t.constant(&[1, 100], vec![1.0; 100]).unwrap();
        let b = t.constant(&[1, 100], vec![0.0; 100]).unwrap();
        let l = mse_loss(&mut t, a, b).unwrap();
        assert_eq!(t.scalar(l), 100.0);
        let l = mse_loss(&mut t, a, a).unwrap();
        assert_eq!(t.scalar(l), 0.0);
        let c = t.constant(&[2, 50], vec![0.0; 100]).unwrap();
        assert!(mse_loss(&mut t, a, c).is_err());
    }

    #[test]
    fn ntxent_closed_forms() {
        let mut t = Tape::<f64>::new();
        let same = unit_rows(&mut t, &[&[1.0, 0.0], &[1.0, 0.0], &[1.0, 0.0], &[1.0, 0.0]]);
        let l = ntxent_loss(&mut t, same, 0.5).unwrap();
        assert!((t.scalar(l) - 3f64.ln()).abs() < 1e-12);
        // sample 0 on e0, sample 1 on e1; views identical
        let orth = unit_rows(&mut t, &[&[1.0, 0.0, 0.0], &[0.0, 1.0, 0.0], &[1.0, 0.0, 0.0], &[0.0, 1.0, 0.0]]);
        let l = ntxent_loss(&mut t, orth, 1.0).unwrap();
        let e = std::f64::consts::E;
        assert!((t.scalar(l) - (-(e / (e + 2.0)).ln())).abs() < 1e-12);
        let two = unit_rows(&mut t, &[&[1.0, 0.0], &[1.0, 0.0]]);
        assert!(matches!(ntxent_loss(&mut t, two, 1.0), Err(Error::Batch(_))));
    }

    #[test]
    fn ntxent_is_monotone_in_positive_similarity() {
        let mut t = Tape::<f64>::new();
        let mut last = f64::INFINITY;
        for s in [0.0, 0.3, 0.6, 0.9] {
            let c = (1.0f64 - s * s).sqrt();
            let z = unit_rows(&mut t, &[&[1.0, 0.0, 0.0], &[0.0, 0.0, 1.0], &[s, c, 0.0], &[0.0, 0.0, 1.0]]);
            let v = ntxent_loss(&mut t, z, 1.0).unwrap();
            let l = t.scalar(v);
            assert!(l < last);
            last = l;
        }
    }

    #[test]
    fn positive_contrast_values() {
        let mut t = Tape::<f64>::new();
        let a = unit_rows(&mut t, &[&[1.0, 0.0], &[0.0, 1.0]]);
        let b = unit_rows(&mut t, &[&[1.0, 0.0], &[0.0, 1.0]]);
        let c = unit_rows(&mut t, &[&[0.0, 1.0], &[1.0, 0.0]]);
        let v = positive_contrast_loss(&mut t, a, b, 1.0).unwrap();
        assert!((t.scalar(v) + 1.0).abs() < 1e-12);
        let v = positive_contrast_loss(&mut t, a, c, 1.0).unwrap();
        assert!(t.scalar(v).abs() < 1e-12);
        let v = positive_contrast_loss(&mut t, a, b, std::f64::consts::E).unwrap();
        assert!(t.scalar(v).abs() < 1e-12);
        for s in [-0.9f64, -0.2, 0.4, 0.95] {
            let temp = 0.3;
            assert!((-(s.exp() / temp).ln() - (-s + temp.ln())).abs() < 1e-12);
        }
    }

    #[test]
    fn combined_values() {
        let mut t = Tape::<f64>::new();
        let m = t.constant(&[1], vec![2.0]).unwrap();
        let c = t.constant(&[1], vec![1.0]).unwrap();
        let v = combined_loss(&mut t, SslMode::EcD, 0.5, Some(m), Some(c)).unwrap();
        assert_eq!(t.scalar(v), 1.5);
        let v = combined_loss(&mut t, SslMode::EcD, 1.0, Some(m), Some(c)).unwrap();
        assert_eq!(t.scalar(v), 2.0);
        assert!(combined_loss(&mut t, SslMode::EcD, 0.5, Some(m), None).is_err());
        assert!(combined_loss(&mut t, SslMode::Ec, 0.5, Some(m), None).is_err());
    }

    #[test]
    fn loss_gradients() {
        let z = Tensor::param(&[6, 3], (0..18).map(|i| ((i * 5 % 7) as f64 - 3.0) / 3.0).collect()).unwrap();
        let r = gradcheck::check(&[z.clone()], |t, v| {
            let n = t.l2_normalize(v[0]);
            ntxent_loss(t, n, 0.5)
        })
        .unwrap();
        assert!(r.max_rel_err < 1e-5, "{r:?}");
        let target = Tensor::new(&[6, 3], vec![0.5; 18]).unwrap();
        let r = gradcheck::check(&[z.clone(), target], |t, v| mse_loss(t, v[0], v[1])).unwrap();
        assert!(r.max_rel_err < 1e-6, "{r:?}");
        let r = gradcheck::check(&[z], |t, v| {
            let n = t.l2_normalize(v[0]);
            let a = t.narrow(n, 0, 0, 3)?;
            let b = t.narrow(n, 0, 3, 3)?;
            positive_contrast_loss(t, a, b, 0.1)
        })
        .unwrap();
        assert!(r.max_rel_err < 1e-5, "{r:?}");
    }

    #[test]
    fn ntxent_ignores_pair_order() {
        let rows: Vec<Vec<f64>> = (0..8).map(|i| (0..4).map(|j| ((i * 3 + j * 7) % 11) as f64 - 5.0).collect()).collect();
        let loss_of = |order: &[usize]| {
            let mut t = Tape::<f64>::new();
            let m = order.len();
            let data: Vec<f64> = order.iter().chain(order).enumerate().flat_map(|(k, &i)| rows[i + if k < m { 0 } else { 4 }].clone()).collect();
            let v = t.constant(&[2 * m, 4], data).unwrap();
            let v = t.l2_normalize(v);
            let l = ntxent_loss(&mut t, v, 0.2).unwrap();
            t.scalar(l)
        };
        assert!((loss_of(&[0, 1, 2, 3]) - loss_of(&[2, 0, 3, 1])).abs() < 1e-12);
    }

    #[test]
    fn r2_basics() {
        let t = vec![1.0f32, 2.0, 3.0, 5.0];
        assert_eq!(pooled_r2(&t, &t, 2).unwrap(), 1.0);
        let mean = vec![2.0f32, 3.5, 2.0, 3.5];
        assert_eq!(pooled_r2(&t, &mean, 2).unwrap(), 0.0);
        assert!(matches!(pooled_r2(&[], &[], 2), Err(Error::Data(_))));
    }

    #[test]
    fn config_validation() {
        let bad = [
            SslConfig { mode: SslMode::EcD, beta: 1.0, ..SslConfig::default() },
            SslConfig { mode: SslMode::Ec, augment: AugmentConfig::none(), ..SslConfig::default() },
            SslConfig { temperature: 0.0, ..SslConfig::default() },
        ];
        for c in bad {
            assert!(c.validate().is_err(), "{c:?}");
        }
        assert!(SslConfig { mode: SslMode::Ed, augment: AugmentConfig::none(), ..SslConfig::default() }.validate().is_ok());
    }

    fn toy() -> (LayerLayout, SslData, HyperModel) {
        let layout = LayerLayout::from_arch(&build_ffn_tetris()).unwrap();
        let mk = |rows: usize, off: usize| -> Vec<f32> {
            (0..rows * 100).map(|i| (((i + off) * 2654435761usize % 1000) as f32 / 1000.0 - 0.5) * 0.2 + ((i % 100) as f32 / 100.0)).collect()
        };
        let data = SslData {
            n: 100,
            train: mk(40, 0),
            val: mk(10, 7),
        };
        let cfg = EncoderConfig {
            token_dim: 16,
            ffn_dim: 32,
            latent_dim: 20,
            ..EncoderConfig::default()
        };
        let model = HyperModel::new(cfg, &layout).unwrap();
        (layout, data, model)
    }

    #[test]
    fn training_modes_run_and_resume() {
        let (layout, data, model) = toy();
        for mode in SslMode::ALL {
            let cfg = SslConfig {
                mode,
                batch_size: 16,
                epochs: 3,
                lr: 1e-3,
                ..SslConfig::default()
            };
            let mut t = Trainer::new(model.clone(), &layout, cfg.clone()).unwrap();
            t.fit(&data).unwrap();
            assert_eq!(t.history.len(), 3);
            assert!(t.history.iter().all(|h| h.loss.is_finite()));

            let mut a = Trainer::new(model.clone(), &layout, cfg.clone()).unwrap();
            a.run_epoch(&data).unwrap();
            let dir = tempfile::tempdir().unwrap();
            a.save_state(dir.path()).unwrap();
            let mut b = Trainer::load_state(dir.path(), &layout, cfg).unwrap();
            b.fit(&data).unwrap();
            assert_eq!(b.history, t.history, "{}", mode.name());
            assert_eq!(b.model, t.model);
        }
        assert!(history_csv(&[]).starts_with("epoch,"));
    }

    #[test]
    fn reconstruction_improves() {
        let (layout, data, model) = toy();
        let cfg = SslConfig {
            mode: SslMode::Ed,
            batch_size: 10,
            epochs: 10,
            lr: 1e-3,
            augment: AugmentConfig::none(),
            ..SslConfig::default()
        };
        let mut t = Trainer::new(model, &layout, cfg).unwrap();
        t.fit(&data).unwrap();
        let r: Vec<f64> = t.history.iter().map(|h| h.train_r2.unwrap()).collect();
        assert!(r[9] > r[0], "{r:?}");
        let (best, e) = t.best();
        let vr = pooled_r2(&data.val, &best.reconstruct(&data.val).unwrap(), 100).unwrap();
        assert_eq!(Some(vr), t.history[e - 1].val_r2);
    }
}
