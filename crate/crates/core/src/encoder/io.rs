//! Binary container for trained encoder parameters.
//!
//! `HZE1`, a little-endian u32 header length, a JSON header (config, layout
//! hash, tensor names and shapes), the f32 tensor data in header order and a
//! trailing SHA-256 of everything before it.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::model::{EncoderConfig, HyperModel};
use super::tokens::Tokenizer;
use crate::error::{bail, Error, Result};
use crate::store::LayerLayout;
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"HZE1";
const DIGEST_LEN: usize = 32;

#[derive(Serialize, Deserialize)]
struct Header {
    config: EncoderConfig,
    layout_hash: u64,
    tensors: [Vec<(String, Vec<usize>)>; 3],
}

impl HyperModel {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = Header {
            config: self.config.clone(),
            layout_hash: self.layout_hash,
            tensors: [0, 1, 2].map(|g| {
                self.names[g]
                    .iter()
                    .cloned()
                    .zip(self.groups[g].iter().map(|t| t.shape().to_vec()))
                    .collect()
            }),
        };
        let json = serde_json::to_vec(&header)?;
        let mut out = Vec::with_capacity(8 + json.len() + 4 * self.param_count() + DIGEST_LEN);
        out.extend_from_slice(MAGIC);
        out.extend((json.len() as u32).to_le_bytes());
        out.extend(&json);
        for t in self.groups.iter().flatten() {
            for x in t.data() {
                out.extend(x.to_le_bytes());
            }
        }
        let digest = Sha256::digest(&out);
        out.extend_from_slice(&digest);
        Ok(out)
    }

    /// Parses parameters written by [`to_bytes`](Self::to_bytes) for `layout`.
    pub fn from_bytes(bytes: &[u8], layout: &LayerLayout) -> Result<Self> {
        let min = MAGIC.len() + 4 + DIGEST_LEN;
        if bytes.len() < min {
            return Err(Error::Length {
                expected: min,
                found: bytes.len(),
            });
        }
        if &bytes[..4] != MAGIC {
            bail!(Format, "bad encoder magic {:?}", &bytes[..4]);
        }
        let (body, digest) = bytes.split_at(bytes.len() - DIGEST_LEN);
        if Sha256::digest(body).as_slice() != digest {
            bail!(Consistency, "encoder file checksum mismatch");
        }
        let hlen = u32::from_le_bytes(body[4..8].try_into().unwrap()) as usize;
        if body.len() < 8 + hlen {
            return Err(Error::Length {
                expected: 8 + hlen,
                found: body.len(),
            });
        }
        let header: Header = serde_json::from_slice(&body[8..8 + hlen])
            .map_err(|e| Error::Format(format!("bad encoder header: {e}")))?;
        if header.layout_hash != layout.hash {
            bail!(Layout, "encoder file targets layout {:016x}, not {:016x} ({})", header.layout_hash, layout.hash, layout.arch_name);
        }
        header.config.validate()?;
        let tokenizer = Tokenizer::new(header.config.tokenization, layout)?;
        if header.tensors != HyperModel::expected_shapes(&header.config, &tokenizer) {
            bail!(Format, "encoder tensors do not match the configured architecture");
        }
        let total: usize = header.tensors.iter().flatten().map(|(_, s)| s.iter().product::<usize>()).sum();
        let data = &body[8 + hlen..];
        if data.len() != 4 * total {
            return Err(Error::Length {
                expected: 8 + hlen + 4 * total,
                found: body.len(),
            });
        }
        let mut floats = data.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap()));
        let mut groups: [Vec<Tensor<f32>>; 3] = Default::default();
        let mut names: [Vec<String>; 3] = Default::default();
        for (g, list) in header.tensors.iter().enumerate() {
            for (name, shape) in list {
                let n = shape.iter().product();
                groups[g].push(Tensor::param(shape, floats.by_ref().take(n).collect())?);
                names[g].push(name.clone());
            }
        }
        Ok(Self {
            config: header.config,
            tokenizer,
            layout_hash: header.layout_hash,
            groups,
            names,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()?).map_err(|e| Error::storage(path, e))
    }

    pub fn load(path: &Path, layout: &LayerLayout) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::storage(path, e))?;
        Self::from_bytes(&bytes, layout)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::zoo::{build_cnn_mnist, build_ffn_tetris};

    fn model() -> (HyperModel, LayerLayout) {
        let l = LayerLayout::from_arch(&build_ffn_tetris()).unwrap();
        let cfg = EncoderConfig {
            token_dim: 16,
            ffn_dim: 32,
            seed: 5,
            ..EncoderConfig::default()
        };
        (HyperModel::new(cfg, &l).unwrap(), l)
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let (m, l) = model();
        let bytes = m.to_bytes().unwrap();
        let back = HyperModel::from_bytes(&bytes, &l).unwrap();
        assert_eq!(back, m);
        assert_eq!(back.to_bytes().unwrap(), bytes);
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("enc.hze");
        m.save(&p).unwrap();
        assert_eq!(HyperModel::load(&p, &l).unwrap(), m);
    }

    #[test]
    fn corruption_is_typed() {
        let (m, l) = model();
        let bytes = m.to_bytes().unwrap();
        assert!(matches!(HyperModel::from_bytes(&bytes[..10], &l), Err(Error::Length { .. })));
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(HyperModel::from_bytes(&bad, &l), Err(Error::Format(_))));
        let mut flip = bytes.clone();
        let mid = flip.len() / 2;
        flip[mid] ^= 1;
        assert!(matches!(HyperModel::from_bytes(&flip, &l), Err(Error::Consistency(_))));
        let other = LayerLayout::from_arch(&build_cnn_mnist()).unwrap();
        assert!(matches!(HyperModel::from_bytes(&bytes, &other), Err(Error::Layout(_))));
    }
}
