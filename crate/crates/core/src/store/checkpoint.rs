use std::path::Path;

use super::layout::LayerLayout;
use crate::error::{bail, Error, Result};

pub const MAGIC: &[u8; 4] = b"HZW1";
/// Magic, layout hash, N, model id, epoch, endianness flag.
pub const HEADER_LEN: usize = 4 + 8 + 8 + 8 + 4 + 1;
const LITTLE_ENDIAN: u8 = 1;

/// Flattened weights of one checkpoint.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightVector {
    pub data: Vec<f32>,
    pub layout_hash: u64,
    pub model_id: u64,
    pub epoch: u32,
}

impl WeightVector {
    pub fn new(data: Vec<f32>, layout: &LayerLayout, model_id: u64, epoch: u32) -> Result<Self> {
        if data.len() != layout.n {
            bail!(Layout, "vector has {} entries, layout expects {}", data.len(), layout.n);
        }
        Ok(Self {
            data,
            layout_hash: layout.hash,
            model_id,
            epoch,
        })
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(HEADER_LEN + 4 * self.data.len());
        out.extend_from_slice(MAGIC);
        out.extend(self.layout_hash.to_le_bytes());
        out.extend((self.data.len() as u64).to_le_bytes());
        out.extend(self.model_id.to_le_bytes());
        out.extend(self.epoch.to_le_bytes());
        out.push(LITTLE_ENDIAN);
        for x in &self.data {
            out.extend(x.to_le_bytes());
        }
        out
    }

    /// Parses a checkpoint, checking it against `layout` when given.
    pub fn from_bytes(bytes: &[u8], layout: Option<&LayerLayout>) -> Result<Self> {
        if bytes.len() < MAGIC.len() {
            return Err(Error::Length {
                expected: HEADER_LEN,
                found: bytes.len(),
            });
        }
        if &bytes[..4] != MAGIC {
            bail!(Format, "bad checkpoint magic {:?}", &bytes[..4]);
        }
        if bytes.len() < HEADER_LEN {
            return Err(Error::Length {
                expected: HEADER_LEN,
                found: bytes.len(),
            });
        }
        let u64_at = |o: usize| u64::from_le_bytes(bytes[o..o + 8].try_into().unwrap());
        let layout_hash = u64_at(4);
        let n = u64_at(12) as usize;
        let model_id = u64_at(20);
        let epoch = u32::from_le_bytes(bytes[28..32].try_into().unwrap());
        if bytes[32] != LITTLE_ENDIAN {
            bail!(Format, "unsupported endianness flag {}", bytes[32]);
        }
        if let Some(l) = layout {
            if l.hash != layout_hash {
                bail!(Format, "layout hash {layout_hash:#018x} does not match {} ({:#018x})", l.arch_name, l.hash);
            }
            if l.n != n {
                bail!(Format, "checkpoint holds {n} values, layout expects {}", l.n);
            }
        }
        let expected = HEADER_LEN + 4 * n;
        if bytes.len() != expected {
            return Err(Error::Length {
                expected,
                found: bytes.len(),
            });
        }
        let data = bytes[HEADER_LEN..]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Ok(Self {
            data,
            layout_hash,
            model_id,
            epoch,
        })
    }
}

pub fn save_checkpoint(v: &WeightVector, path: &Path) -> Result<()> {
    std::fs::write(path, v.to_bytes()).map_err(|e| Error::storage(path, e))
}

pub fn load_checkpoint(path: &Path, layout: &LayerLayout) -> Result<WeightVector> {
    let bytes = std::fs::read(path).map_err(|e| Error::storage(path, e))?;
    WeightVector::from_bytes(&bytes, Some(layout))
}
