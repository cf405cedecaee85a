use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::arch::ArchSpec;
use super::train::{EpochRecord, TrainConfig};
use crate::error::{bail, Error, Result};
use crate::store::{load_checkpoint, save_checkpoint, LayerLayout, WeightVector};

/// Model-level split assignment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn name(&self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetInfo {
    pub name: String,
    pub fingerprint: String,
    pub n_train: usize,
    pub n_test: usize,
    pub class_count: usize,
    /// Parameters that regenerate the data, when it is synthetic.
    pub source: serde_json::Value,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelEntry {
    pub id: u64,
    pub config: TrainConfig,
    pub split: Split,
    pub records: Vec<EpochRecord>,
    /// Checkpoint paths relative to the zoo directory, one per record.
    pub checkpoints: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExcludedModel {
    pub id: u64,
    pub config: TrainConfig,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ZooManifest {
    pub name: String,
    pub kind: String,
    pub arch: ArchSpec,
    pub layout_hash: u64,
    pub n_params: usize,
    pub dataset: DatasetInfo,
    pub models: Vec<ModelEntry>,
    pub excluded: Vec<ExcludedModel>,
}

pub const MANIFEST_FILE: &str = "manifest.json";

impl ZooManifest {
    pub fn split_sizes(&self) -> [usize; 3] {
        let mut s = [0; 3];
        for m in &self.models {
            s[m.split as usize] += 1;
        }
        s
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// SHA-256 of the canonical JSON form.
    pub fn content_hash(&self) -> Result<String> {
        let d = Sha256::digest(self.to_json()?.as_bytes());
        Ok(d.iter().map(|b| format!("{b:02x}")).collect())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let p = dir.join(MANIFEST_FILE);
        let text = std::fs::read_to_string(&p).map_err(|e| Error::storage(&p, e))?;
        let m: ZooManifest = serde_json::from_str(&text)?;
        for e in &m.models {
            if e.records.len() != e.checkpoints.len() {
                bail!(Consistency, "model {} has {} records but {} checkpoints", e.id, e.records.len(), e.checkpoints.len());
            }
        }
        Ok(m)
    }
}

/// A zoo held in memory: manifest plus every checkpoint.
#[derive(Debug, Clone)]
pub struct Zoo {
    pub manifest: ZooManifest,
    pub layout: LayerLayout,
    /// `weights[model][epoch_index]`, aligned with the manifest.
    pub weights: Vec<Vec<Vec<f32>>>,
}

/// One checkpoint: model index into the manifest and epoch index.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct SampleRef {
    pub model: usize,
    pub epoch: usize,
}

pub fn checkpoint_path(id: u64, epoch: usize) -> String {
    format!("models/{id:05}/epoch_{epoch:03}.hzw")
}

impl Zoo {
    pub fn samples(&self, split: Split) -> Vec<SampleRef> {
        self.manifest
            .models
            .iter()
            .enumerate()
            .filter(|(_, m)| m.split == split)
            .flat_map(|(i, m)| (0..m.records.len()).map(move |e| SampleRef { model: i, epoch: e }))
            .collect()
    }

    pub fn weights_of(&self, s: SampleRef) -> &[f32] {
        &self.weights[s.model][s.epoch]
    }

    pub fn record(&self, s: SampleRef) -> &EpochRecord {
        &self.manifest.models[s.model].records[s.epoch]
    }

    pub fn config(&self, s: SampleRef) -> &TrainConfig {
        &self.manifest.models[s.model].config
    }

    /// Writes the manifest and every checkpoint below `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        for (m, ws) in self.manifest.models.iter().zip(&self.weights) {
            for ((rec, rel), w) in m.records.iter().zip(&m.checkpoints).zip(ws) {
                let p = dir.join(rel);
                make_parent(&p)?;
                let v = WeightVector::new(w.clone(), &self.layout, m.id, rec.epoch as u32)?;
                save_checkpoint(&v, &p)?;
            }
        }
        let p = dir.join(MANIFEST_FILE);
        std::fs::write(&p, self.manifest.to_json()?).map_err(|e| Error::storage(&p, e))
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let manifest = ZooManifest::load(dir)?;
        let layout = LayerLayout::from_arch(&manifest.arch)?;
        if layout.hash != manifest.layout_hash {
            bail!(Format, "manifest layout hash does not match its architecture");
        }
        let mut weights = Vec::with_capacity(manifest.models.len());
        for m in &manifest.models {
            let mut per = Vec::with_capacity(m.checkpoints.len());
            for (rel, rec) in m.checkpoints.iter().zip(&m.records) {
                let v = load_checkpoint(&dir.join(rel), &layout)?;
                if v.model_id != m.id || v.epoch as usize != rec.epoch {
                    bail!(Consistency, "{rel} holds model {} epoch {}, manifest says {} / {}", v.model_id, v.epoch, m.id, rec.epoch);
                }
                per.push(v.data);
            }
            weights.push(per);
        }
        Ok(Self { manifest, layout, weights })
    }

    /// Verifies that two zoos share one vector layout.
    pub fn check_compatible(&self, other: &Zoo) -> Result<()> {
        if self.layout.hash != other.layout.hash || self.layout.n != other.layout.n {
            bail!(
                Layout,
                "zoo '{}' uses layout {} (N={}, hash {:#018x}) but '{}' uses {} (N={}, hash {:#018x})",
                self.manifest.name,
                self.layout.arch_name,
                self.layout.n,
                self.layout.hash,
                other.manifest.name,
                other.layout.arch_name,
                other.layout.n,
                other.layout.hash
            );
        }
        Ok(())
    }
}

fn make_parent(p: &Path) -> Result<()> {
    if let Some(parent) = p.parent() {
        std::fs::create_dir_all(parent).map_err(|e| Error::storage(PathBuf::from(parent), e))?;
    }
    Ok(())
}
