//! Weight vectors as token sequences.

use serde::{Deserialize, Serialize};

use crate::error::{bail, Result};
use crate::store::LayerLayout;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Tokenization {
    /// One token per scalar weight.
    PerWeight,
    /// One token per neuron or kernel: incoming weights plus bias, zero padded.
    PerNeuron,
}

impl Tokenization {
    pub fn name(&self) -> &'static str {
        match self {
            Tokenization::PerWeight => "per_weight",
            Tokenization::PerNeuron => "per_neuron",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "per_weight" | "weight" => Ok(Tokenization::PerWeight),
            "per_neuron" | "neuron" => Ok(Tokenization::PerNeuron),
            other => bail!(Config, "unknown tokenization '{other}'"),
        }
    }
}

/// Maps a flat weight vector onto a `[tokens, width]` grid and back.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Tokenizer {
    pub kind: Tokenization,
    pub tokens: usize,
    pub width: usize,
    pub n: usize,
    /// Grid cell of every flat weight index.
    cell: Vec<usize>,
}

impl Tokenizer {
    pub fn new(kind: Tokenization, layout: &LayerLayout) -> Result<Self> {
        let n = layout.n;
        if n == 0 {
            bail!(Layout, "layout {} has no parameters", layout.arch_name);
        }
        match kind {
            Tokenization::PerWeight => Ok(Self {
                kind,
                tokens: n,
                width: 1,
                n,
                cell: (0..n).collect(),
            }),
            Tokenization::PerNeuron => {
                let slices = layout.neuron_slices();
                let width = layout.max_slice_len();
                let mut cell = vec![usize::MAX; n];
                for (t, s) in slices.iter().enumerate() {
                    for (j, i) in s.indices().enumerate() {
                        cell[i] = t * width + j;
                    }
                }
                if cell.contains(&usize::MAX) {
                    bail!(Layout, "neuron slices of {} do not cover every weight", layout.arch_name);
                }
                Ok(Self {
                    kind,
                    tokens: slices.len(),
                    width,
                    n,
                    cell,
                })
            }
        }
    }

    pub fn grid_len(&self) -> usize {
        self.tokens * self.width
    }

    /// Grid cell of each flat index, usable as gather indices.
    pub fn cells(&self) -> &[usize] {
        &self.cell
    }

    /// `b` flat vectors to `b` zero-padded grids.
    pub fn tokenize(&self, flat: &[f32], b: usize) -> Result<Vec<f32>> {
        if flat.len() != b * self.n {
            bail!(Dimension, "expected {} weights for {b} vectors, found {}", b * self.n, flat.len());
        }
        let g = self.grid_len();
        let mut out = vec![0.0; b * g];
        for (src, dst) in flat.chunks(self.n).zip(out.chunks_mut(g)) {
            for (&v, &c) in src.iter().zip(&self.cell) {
                dst[c] = v;
            }
        }
        Ok(out)
    }

    /// Inverse of [`tokenize`](Self::tokenize); padding cells are dropped.
    pub fn detokenize(&self, grid: &[f32], b: usize) -> Result<Vec<f32>> {
        let g = self.grid_len();
        if grid.len() != b * g {
            bail!(Dimension, "expected {} grid cells for {b} samples, found {}", b * g, grid.len());
        }
        Ok(grid
            .chunks(g)
            .flat_map(|row| self.cell.iter().map(move |&c| row[c]))
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::zoo::{build_cnn_mnist, build_ffn_tetris};

    #[test]
    fn token_counts() {
        let f = LayerLayout::from_arch(&build_ffn_tetris()).unwrap();
        let c = LayerLayout::from_arch(&build_cnn_mnist()).unwrap();
        let t = Tokenizer::new(Tokenization::PerWeight, &f).unwrap();
        assert_eq!((t.tokens, t.width), (100, 1));
        let t = Tokenizer::new(Tokenization::PerWeight, &c).unwrap();
        assert_eq!((t.tokens, t.width), (2464, 1));
        let t = Tokenizer::new(Tokenization::PerNeuron, &f).unwrap();
        assert_eq!((t.tokens, t.width), (9, 16));
        let t = Tokenizer::new(Tokenization::PerNeuron, &c).unwrap();
        assert_eq!(t.tokens, 8 + 6 + 4 + 20 + 10);
        assert_eq!(t.width, 201);
    }

    #[test]
    fn round_trip_and_padding() {
        let f = LayerLayout::from_arch(&build_ffn_tetris()).unwrap();
        let t = Tokenizer::new(Tokenization::PerNeuron, &f).unwrap();
        let v: Vec<f32> = (0..200).map(|i| i as f32 + 1.0).collect();
        let g = t.tokenize(&v, 2).unwrap();
        assert_eq!(t.detokenize(&g, 2).unwrap(), v);
        // output-neuron tokens carry 5 weights then 11 zeros
        let row = &g[5 * 16..6 * 16];
        assert_eq!(&row[..5], &[81.0, 82.0, 83.0, 84.0, 85.0]);
        assert!(row[5..].iter().all(|&x| x == 0.0));
        assert_eq!(g.iter().filter(|&&x| x == 0.0).count(), 2 * 4 * 11);
        assert!(t.tokenize(&v, 3).is_err());
    }
}
