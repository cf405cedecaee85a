//! Weight-space augmentations: neuron permutations, erasing and noise.
//!
//! Permuting the units of a hidden layer together with the matching input
//! slices of the following layer yields a network that computes exactly the
//! same function. Erasing and noise are destructive and are applied after
//! the permutation.

use std::collections::HashSet;

use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::datasets::DataSplit;
use crate::error::{bail, Result};
use crate::rng::{Rng, SeedStream};
use crate::store::LayerLayout;
use crate::zoo::{evaluate, train_from, ArchSpec, TrainConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugmentConfig {
    pub permutation: bool,
    pub permutation_count: usize,
    pub permutation_seed: u64,
    pub erase: bool,
    pub erase_prob: f64,
    pub erase_low: f64,
    pub erase_high: f64,
    pub noise: bool,
    pub noise_std: f64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            permutation: true,
            permutation_count: 120,
            permutation_seed: 0,
            erase: true,
            erase_prob: 0.5,
            erase_low: 0.03,
            erase_high: 0.3,
            noise: true,
            noise_std: 0.05,
        }
    }
}

impl AugmentConfig {
    /// Every augmentation switched off.
    pub fn none() -> Self {
        Self {
            permutation: false,
            erase: false,
            noise: false,
            ..Self::default()
        }
    }

    pub fn permutation_only() -> Self {
        Self {
            erase: false,
            noise: false,
            ..Self::default()
        }
    }

    pub fn any_enabled(&self) -> bool {
        self.permutation || self.erase || self.noise
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.erase_prob) {
            bail!(Config, "erase probability {} must lie in [0, 1]", self.erase_prob);
        }
        if !(self.erase_low > 0.0 && self.erase_low <= self.erase_high && self.erase_high < 1.0) {
            bail!(Config, "erase bounds must satisfy 0 < low <= high < 1, got ({}, {})", self.erase_low, self.erase_high);
        }
        if !(self.noise_std >= 0.0) {
            bail!(Config, "noise std must be non-negative");
        }
        if self.permutation && self.permutation_count == 0 {
            bail!(Config, "permutation count must be at least 1");
        }
        Ok(())
    }
}

/// Precomputed permutations for every permutable layer of a layout.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PermutationSet {
    /// `(layer index, permutations)`; each permutation maps new unit to old unit.
    pub layers: Vec<(usize, Vec<Vec<usize>>)>,
}

fn factorial_at_least(n: usize, count: usize) -> bool {
    let mut f = 1usize;
    for k in 2..=n {
        f = f.saturating_mul(k);
        if f >= count {
            return true;
        }
    }
    f >= count
}

/// Every permutation of `0..n` in lexicographic order.
pub fn all_permutations(n: usize) -> Vec<Vec<usize>> {
    let mut cur: Vec<usize> = (0..n).collect();
    let mut out = vec![cur.clone()];
    loop {
        let Some(i) = (1..n).rev().find(|&i| cur[i - 1] < cur[i]) else {
            return out;
        };
        let j = (i..n).rev().find(|&j| cur[j] > cur[i - 1]).unwrap();
        cur.swap(i - 1, j);
        cur[i..].reverse();
        out.push(cur.clone());
    }
}

impl PermutationSet {
    /// The full group for layers with `n! <= count`, otherwise `count`
    /// distinct uniform samples.
    pub fn sample(layout: &LayerLayout, count: usize, seed: u64) -> Result<Self> {
        if count == 0 {
            bail!(Config, "permutation count must be at least 1");
        }
        let stream = SeedStream::new(seed);
        let mut layers = Vec::new();
        for l in layout.permutable_layers() {
            let n = layout.layers[l].units;
            let perms = if factorial_at_least(n, count + 1) {
                let mut rng = stream.rng_for(&[l as u64]);
                let mut seen = HashSet::with_capacity(count);
                let mut v = Vec::with_capacity(count);
                while v.len() < count {
                    let mut p: Vec<usize> = (0..n).collect();
                    p.shuffle(&mut rng);
                    if seen.insert(p.clone()) {
                        v.push(p);
                    }
                }
                v
            } else {
                all_permutations(n)
            };
            layers.push((l, perms));
        }
        Ok(Self { layers })
    }

    /// One permutation per layer, drawn uniformly from the set.
    pub fn draw(&self, rng: &mut Rng) -> Vec<(usize, &[usize])> {
        self.layers
            .iter()
            .map(|(l, ps)| (*l, ps[rng.random_range(0..ps.len())].as_slice()))
            .collect()
    }
}

fn check_bijection(p: &[usize], n: usize) -> Result<()> {
    let mut seen = vec![false; n];
    if p.len() != n || p.iter().any(|&i| i >= n || std::mem::replace(&mut seen[i], true)) {
        bail!(Symmetry, "{p:?} is not a permutation of {n} units");
    }
    Ok(())
}

pub fn invert(p: &[usize]) -> Vec<usize> {
    let mut inv = vec![0; p.len()];
    for (new, &old) in p.iter().enumerate() {
        inv[old] = new;
    }
    inv
}

/// Reorders units of hidden layers and the matching inputs of their
/// successors. `perms` maps new unit index to old unit index.
pub fn apply_permutation(v: &[f32], layout: &LayerLayout, perms: &[(usize, &[usize])]) -> Result<Vec<f32>> {
    if v.len() != layout.n {
        bail!(Layout, "vector has {} entries, layout expects {}", v.len(), layout.n);
    }
    let mut out = v.to_vec();
    for &(l, p) in perms {
        let Some(layer) = layout.layers.get(l) else {
            bail!(Symmetry, "layer {l} does not exist");
        };
        if !layer.permutable {
            bail!(Symmetry, "layer {l} is the output layer; its units cannot be permuted");
        }
        check_bijection(p, layer.units)?;
        let src = out.clone();
        for (new, &old) in p.iter().enumerate() {
            out[layer.unit_weights(new)].copy_from_slice(&src[layer.unit_weights(old)]);
            if let Some(b) = layer.bias_offset {
                out[b + new] = src[b + old];
            }
        }
        let next = &layout.layers[l + 1];
        let g = layer.next_group.expect("hidden layers have a successor");
        for r in 0..next.units {
            let row = next.weight_offset + r * next.fan_in;
            for (new, &old) in p.iter().enumerate() {
                let (dst, from) = (row + new * g, row + old * g);
                out[dst..dst + g].copy_from_slice(&src[from..from + g]);
            }
        }
    }
    Ok(out)
}

/// Zeroes one contiguous run with probability `erase_prob`.
pub fn erase(v: &[f32], cfg: &AugmentConfig, rng: &mut Rng) -> Vec<f32> {
    let mut out = v.to_vec();
    if cfg.erase_prob == 0.0 || rng.random::<f64>() >= cfg.erase_prob {
        return out;
    }
    let n = v.len();
    let lo = ((cfg.erase_low * n as f64).ceil() as usize).clamp(1, n);
    let hi = ((cfg.erase_high * n as f64).floor() as usize).clamp(lo, n);
    let len = rng.random_range(lo..=hi);
    let start = rng.random_range(0..=n - len);
    out[start..start + len].iter_mut().for_each(|x| *x = 0.0);
    out
}

pub fn add_noise(v: &[f32], std: f64, rng: &mut Rng) -> Vec<f32> {
    if std == 0.0 {
        return v.to_vec();
    }
    let d = Normal::new(0.0, std).expect("valid std");
    v.iter().map(|&x| (x as f64 + d.sample(rng)) as f32).collect()
}

/// One augmented sample: `clean` is the permuted vector before erasing and
/// noise, `augmented` the final encoder input.
#[derive(Debug, Clone, PartialEq)]
pub struct View {
    pub clean: Vec<f32>,
    pub augmented: Vec<f32>,
}

/// Permutation, then erasing, then noise, each when enabled.
pub fn augment(v: &[f32], layout: &LayerLayout, cfg: &AugmentConfig, perms: Option<&PermutationSet>, rng: &mut Rng) -> Result<View> {
    let clean = match (cfg.permutation, perms) {
        (true, Some(set)) => {
            let p = set.draw(rng);
            apply_permutation(v, layout, &p)?
        }
        (true, None) => bail!(Config, "permutation enabled without a permutation set"),
        (false, _) => v.to_vec(),
    };
    let mut aug = clean.clone();
    if cfg.erase {
        aug = erase(&aug, cfg, rng);
    }
    if cfg.noise {
        aug = add_noise(&aug, cfg.noise_std, rng);
    }
    Ok(View { clean, augmented: aug })
}

/// Two independent augmentations of one sample.
pub fn make_views(
    v: &[f32],
    layout: &LayerLayout,
    cfg: &AugmentConfig,
    perms: Option<&PermutationSet>,
    rng: &mut Rng,
) -> Result<(View, View)> {
    if !cfg.any_enabled() {
        bail!(Config, "contrastive views need at least one augmentation enabled");
    }
    Ok((augment(v, layout, cfg, perms, rng)?, augment(v, layout, cfg, perms, rng)?))
}

/// Largest absolute logit difference between `v` and its permuted copy.
pub fn forward_deviation(arch: &ArchSpec, layout: &LayerLayout, v: &[f32], perms: &[(usize, &[usize])], inputs: &[f32], n: usize) -> Result<f32> {
    let p = apply_permutation(v, layout, perms)?;
    let a = arch.logits(v, inputs, n)?;
    let b = arch.logits(&p, inputs, n)?;
    Ok(a.iter().zip(&b).map(|(x, y)| (x - y).abs()).fold(0.0, f32::max))
}

/// Distances and accuracies of one epoch of the trajectory test.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TrajectoryEpoch {
    pub epoch: usize,
    /// ‖A − Ap‖, original against its permuted copy.
    pub a_ap: f64,
    /// ‖A − B‖, original against the model trained from Ap's initialization.
    pub a_b: f64,
    /// ‖Ap − B‖.
    pub ap_b: f64,
    pub acc_a: f64,
    pub acc_ap: f64,
    pub acc_b: f64,
}

fn l2(a: &[f32], b: &[f32]) -> f64 {
    a.iter().zip(b).map(|(x, y)| ((x - y) as f64).powi(2)).sum::<f64>().sqrt()
}

/// Trains A from `init` and B from its permutation with identical data order.
pub fn trajectory_equivalence(
    arch: &ArchSpec,
    data: &DataSplit,
    cfg: &TrainConfig,
    init: Vec<f32>,
    perms: &[(usize, &[usize])],
) -> Result<Vec<TrajectoryEpoch>> {
    if cfg.dropout > 0.0 {
        bail!(Config, "trajectory test needs dropout 0: masks are not permuted");
    }
    let layout = LayerLayout::from_arch(arch)?;
    let arch_act = arch.clone().with_activation(cfg.activation);
    let b_init = apply_permutation(&init, &layout, perms)?;
    let a = train_from(arch, data, cfg, init)?;
    let b = train_from(arch, data, cfg, b_init)?;
    let mut out = Vec::with_capacity(a.checkpoints.len());
    for (e, (wa, wb)) in a.checkpoints.iter().zip(&b.checkpoints).enumerate() {
        let ap = apply_permutation(wa, &layout, perms)?;
        out.push(TrajectoryEpoch {
            epoch: e + 1,
            a_ap: l2(wa, &ap),
            a_b: l2(wa, wb),
            ap_b: l2(&ap, wb),
            acc_a: a.records[e].test_acc,
            acc_ap: evaluate(&arch_act, &ap, &data.test)?.accuracy,
            acc_b: b.records[e].test_acc,
        });
    }
    Ok(out)
}
