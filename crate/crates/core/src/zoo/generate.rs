use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::arch::{build_cnn_mnist, build_ffn_tetris, ArchSpec};
use super::init::InitMethod;
use super::manifest::{checkpoint_path, DatasetInfo, ExcludedModel, ModelEntry, Split, Zoo, ZooManifest};
use super::train::{train_model, TrainConfig, TrainedModel};
use crate::datasets::{parse_idx, DataSplit, TetrisSpec};
use crate::error::{bail, Error, Result};
use crate::rng::SeedStream;
use crate::store::LayerLayout;
use crate::tensor::{Activation, OptimizerKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ZooKind {
    TetrisSeed,
    TetrisHyp,
    MnistSeed,
    CustomGrid,
}

impl ZooKind {
    pub fn name(&self) -> &'static str {
        match self {
            ZooKind::TetrisSeed => "tetris-seed",
            ZooKind::TetrisHyp => "tetris-hyp",
            ZooKind::MnistSeed => "mnist-seed",
            ZooKind::CustomGrid => "custom-grid",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "tetris-seed" => Ok(ZooKind::TetrisSeed),
            "tetris-hyp" => Ok(ZooKind::TetrisHyp),
            "mnist-seed" => Ok(ZooKind::MnistSeed),
            "custom-grid" => Ok(ZooKind::CustomGrid),
            _ => bail!(Config, "unknown zoo kind '{s}'"),
        }
    }
}

/// Value sets swept by a grid zoo; empty lists fall back to the base config.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    #[serde(default)]
    pub activations: Vec<Activation>,
    #[serde(default)]
    pub inits: Vec<InitMethod>,
    #[serde(default)]
    pub lrs: Vec<f64>,
    #[serde(default)]
    pub optimizers: Vec<OptimizerKind>,
    #[serde(default)]
    pub l2_regs: Vec<f64>,
    #[serde(default)]
    pub dropouts: Vec<f64>,
    #[serde(default)]
    pub train_fractions: Vec<f64>,
    #[serde(default)]
    pub seeds: Vec<u64>,
}

/// Grid of the TETRIS-HYP zoo, without seeds.
pub fn tetris_hyp_grid() -> GridSpec {
    GridSpec {
        activations: vec![Activation::Tanh, Activation::Relu],
        inits: InitMethod::ALL.to_vec(),
        lrs: vec![1e-3, 1e-4, 1e-5],
        ..GridSpec::default()
    }
}

impl GridSpec {
    pub fn expand(&self, base: &TrainConfig) -> Vec<TrainConfig> {
        fn or<T: Clone>(v: &[T], d: T) -> Vec<T> {
            if v.is_empty() {
                vec![d]
            } else {
                v.to_vec()
            }
        }
        let mut out = Vec::new();
        for act in or(&self.activations, base.activation) {
            for init in or(&self.inits, base.init) {
                for lr in or(&self.lrs, base.lr) {
                    for opt in or(&self.optimizers, base.optimizer) {
                        for l2 in or(&self.l2_regs, base.l2_reg) {
                            for drop in or(&self.dropouts, base.dropout) {
                                for tf in or(&self.train_fractions, base.train_fraction) {
                                    for seed in or(&self.seeds, base.seed) {
                                        out.push(TrainConfig {
                                            seed,
                                            init,
                                            activation: act,
                                            optimizer: opt,
                                            lr,
                                            l2_reg: l2,
                                            dropout: drop,
                                            train_fraction: tf,
                                            ..base.clone()
                                        });
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
        out
    }

    pub fn combinations(&self) -> usize {
        [
            self.activations.len(),
            self.inits.len(),
            self.lrs.len(),
            self.optimizers.len(),
            self.l2_regs.len(),
            self.dropouts.len(),
            self.train_fractions.len(),
        ]
        .iter()
        .map(|&n| n.max(1))
        .product()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum DataSource {
    Tetris(TetrisSpec),
    Idx {
        train_images: PathBuf,
        train_labels: PathBuf,
        test_images: PathBuf,
        test_labels: PathBuf,
    },
}

impl DataSource {
    pub fn load(&self) -> Result<DataSplit> {
        match self {
            DataSource::Tetris(t) => t.build(),
            DataSource::Idx {
                train_images,
                train_labels,
                test_images,
                test_labels,
            } => Ok(DataSplit {
                train: parse_idx(train_images, train_labels)?,
                test: parse_idx(test_images, test_labels)?,
            }),
        }
    }
}

/// Everything needed to (re)generate a zoo.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ZooSpec {
    pub name: String,
    pub kind: ZooKind,
    /// Model count before crashes; for grids, seeds per cell are derived from it.
    pub models: usize,
    pub base: TrainConfig,
    pub grid: Option<GridSpec>,
    pub data: DataSource,
    pub arch: ArchSpec,
    pub split_seed: u64,
}

pub const MIN_MODELS: usize = 10;

impl ZooSpec {
    /// Reference settings for each zoo kind at the given scale.
    pub fn preset(kind: ZooKind, models: usize) -> Self {
        let tetris = DataSource::Tetris(TetrisSpec::default());
        let base = TrainConfig::default();
        let (arch, data, base, grid) = match kind {
            ZooKind::TetrisSeed => (build_ffn_tetris(), tetris, base, None),
            ZooKind::TetrisHyp => (build_ffn_tetris(), tetris, base, Some(tetris_hyp_grid())),
            ZooKind::MnistSeed => (
                build_cnn_mnist(),
                DataSource::Idx {
                    train_images: "train-images-idx3-ubyte".into(),
                    train_labels: "train-labels-idx1-ubyte".into(),
                    test_images: "t10k-images-idx3-ubyte".into(),
                    test_labels: "t10k-labels-idx1-ubyte".into(),
                },
                TrainConfig { lr: 3e-4, ..base },
                None,
            ),
            ZooKind::CustomGrid => (build_ffn_tetris(), tetris, base, Some(GridSpec::default())),
        };
        Self {
            name: kind.name().into(),
            kind,
            models,
            base,
            grid,
            data,
            arch,
            split_seed: 0,
        }
    }

    pub fn configs(&self) -> Result<Vec<TrainConfig>> {
        if self.models < MIN_MODELS {
            bail!(Config, "a zoo needs at least {MIN_MODELS} models, got {}", self.models);
        }
        let seeded = |n: usize| (1..=n as u64).collect::<Vec<_>>();
        let configs = match self.kind {
            ZooKind::TetrisSeed | ZooKind::MnistSeed => seeded(self.models)
                .into_iter()
                .map(|seed| TrainConfig { seed, ..self.base.clone() })
                .collect(),
            ZooKind::TetrisHyp | ZooKind::CustomGrid => {
                let mut grid = self
                    .grid
                    .clone()
                    .ok_or_else(|| Error::Config("grid zoo without a grid".into()))?;
                if grid.seeds.is_empty() {
                    let per = (self.models as f64 / grid.combinations() as f64).round().max(1.0) as usize;
                    grid.seeds = seeded(per);
                }
                grid.expand(&self.base)
            }
        };
        for c in &configs {
            c.validate()?;
        }
        Ok(configs)
    }
}

/// Assigns 70/15/15 train/val/test splits to `n` models with a seeded shuffle.
pub fn assign_splits(n: usize, seed: u64) -> Vec<Split> {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut SeedStream::new(seed).rng_for(&[0x5917]));
    let n_train = (0.7 * n as f64).round() as usize;
    let n_val = (0.15 * n as f64).round() as usize;
    let mut out = vec![Split::Test; n];
    for (rank, &i) in idx.iter().enumerate() {
        out[i] = if rank < n_train {
            Split::Train
        } else if rank < n_train + n_val {
            Split::Val
        } else {
            Split::Test
        };
    }
    out
}

/// Trains every configuration of `spec` on a pool of `jobs` workers and,
/// when `out_dir` is given, writes the zoo there.
pub fn generate_zoo(spec: &ZooSpec, jobs: usize, out_dir: Option<&Path>) -> Result<Zoo> {
    let configs = spec.configs()?;
    let data = spec.data.load()?;
    let layout = LayerLayout::from_arch(&spec.arch)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    log::info!("training {} models of {} on {} workers", configs.len(), spec.arch.name, jobs.max(1));
    let trained: Vec<TrainedModel> = pool.install(|| {
        configs
            .par_iter()
            .map(|c| train_model(&spec.arch, &data, c))
            .collect::<Result<Vec<_>>>()
    })?;

    let mut kept = Vec::new();
    let mut excluded = Vec::new();
    for (id, (cfg, t)) in configs.into_iter().zip(trained).enumerate() {
        match t.crashed {
            Some(reason) => excluded.push(ExcludedModel {
                id: id as u64,
                config: cfg,
                reason,
            }),
            None => kept.push((id as u64, cfg, t)),
        }
    }
    let splits = assign_splits(kept.len(), spec.split_seed);
    let mut models = Vec::with_capacity(kept.len());
    let mut weights = Vec::with_capacity(kept.len());
    for ((id, cfg, t), split) in kept.into_iter().zip(splits) {
        models.push(ModelEntry {
            id,
            config: cfg,
            split,
            checkpoints: t.records.iter().map(|r| checkpoint_path(id, r.epoch)).collect(),
            records: t.records,
        });
        weights.push(t.checkpoints);
    }
    let manifest = ZooManifest {
        name: spec.name.clone(),
        kind: spec.kind.name().into(),
        arch: spec.arch.clone(),
        layout_hash: layout.hash,
        n_params: layout.n,
        dataset: DatasetInfo {
            name: data.train.name.clone(),
            fingerprint: data.train.fingerprint(),
            n_train: data.train.len(),
            n_test: data.test.len(),
            class_count: data.train.class_count,
            source: serde_json::to_value(&spec.data)?,
        },
        models,
        excluded,
    };
    let zoo = Zoo { manifest, layout, weights };
    if let Some(dir) = out_dir {
        zoo.save(dir)?;
    }
    Ok(zoo)
}
