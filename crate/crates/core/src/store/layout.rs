use std::ops::Range;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{bail, Result};
use crate::tensor::Tensor;
use crate::zoo::arch::{ArchSpec, FeatureShape, LayerSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ParamKind {
    Dense,
    Conv,
}

/// Placement of one parameterised layer inside the flat vector.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamLayer {
    /// Index into [`ArchSpec::layers`].
    pub arch_index: usize,
    pub kind: ParamKind,
    pub weight_shape: Vec<usize>,
    pub weight_offset: usize,
    pub bias_offset: Option<usize>,
    /// Output neurons or kernels.
    pub units: usize,
    /// Incoming weights per unit.
    pub fan_in: usize,
    pub permutable: bool,
    /// Width of one unit's contiguous column group in the next layer's
    /// per-row weights (1 for dense → dense, `h*w` for conv → flatten →
    /// dense, `kh*kw` for conv → conv).
    pub next_group: Option<usize>,
}

impl ParamLayer {
    pub fn weight_len(&self) -> usize {
        self.units * self.fan_in
    }

    pub fn weight_range(&self) -> Range<usize> {
        self.weight_offset..self.weight_offset + self.weight_len()
    }

    pub fn bias_range(&self) -> Option<Range<usize>> {
        self.bias_offset.map(|b| b..b + self.units)
    }

    pub fn end(&self) -> usize {
        self.bias_range().map_or(self.weight_range().end, |r| r.end)
    }

    /// Incoming weights of `unit`.
    pub fn unit_weights(&self, unit: usize) -> Range<usize> {
        let s = self.weight_offset + unit * self.fan_in;
        s..s + self.fan_in
    }
}

/// Contiguous run of the flat vector belonging to one weight or bias block.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Segment {
    pub range: Range<usize>,
    pub layer: usize,
    pub is_bias: bool,
    pub permutable: bool,
}

/// One token of the per-neuron tokenization: a unit's weights and bias.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NeuronSlice {
    pub layer: usize,
    pub unit: usize,
    pub weights: Range<usize>,
    pub bias: Option<usize>,
}

impl NeuronSlice {
    pub fn len(&self) -> usize {
        self.weights.len() + usize::from(self.bias.is_some())
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Flat indices in token order: weights, then bias.
    pub fn indices(&self) -> impl Iterator<Item = usize> + '_ {
        self.weights.clone().chain(self.bias)
    }
}

/// Structural metadata to devectorize, permute and tokenize a weight vector.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerLayout {
    pub arch_name: String,
    pub layers: Vec<ParamLayer>,
    pub n: usize,
    pub hash: u64,
}

impl LayerLayout {
    pub fn from_arch(arch: &ArchSpec) -> Result<Self> {
        let shapes = arch.shapes()?;
        let mut layers: Vec<ParamLayer> = Vec::new();
        let mut off = 0;
        // spatial extent per channel of the most recent parameterised output
        let mut spatial = 1usize;
        for (i, layer) in arch.layers.iter().enumerate() {
            let Some((wshape, nb)) = layer.param_shapes() else {
                if let (LayerSpec::MaxPool { .. }, FeatureShape::Image { h, w, .. }) = (layer, shapes[i]) {
                    spatial = h * w;
                }
                continue;
            };
            let group = match *layer {
                LayerSpec::Dense { .. } => spatial,
                LayerSpec::Conv { ks, .. } => ks * ks,
                _ => unreachable!(),
            };
            if let Some(prev) = layers.last_mut() {
                prev.next_group = Some(group);
            }
            let units = wshape[0];
            let fan_in: usize = wshape[1..].iter().product();
            let kind = if matches!(layer, LayerSpec::Dense { .. }) { ParamKind::Dense } else { ParamKind::Conv };
            let weight_offset = off;
            off += units * fan_in;
            let bias_offset = (nb > 0).then(|| {
                let b = off;
                off += nb;
                b
            });
            layers.push(ParamLayer {
                arch_index: i,
                kind,
                weight_shape: wshape,
                weight_offset,
                bias_offset,
                units,
                fan_in,
                permutable: true,
                next_group: None,
            });
            spatial = match shapes[i] {
                FeatureShape::Image { h, w, .. } => h * w,
                FeatureShape::Flat(_) => 1,
            };
        }
        if layers.is_empty() {
            bail!(Layout, "{} has no parameterised layers", arch.name);
        }
        layers.last_mut().unwrap().permutable = false;
        for pair in layers.windows(2) {
            let g = pair[0].next_group.unwrap();
            if pair[1].fan_in != pair[0].units * g {
                bail!(Layout, "{}: layer {} fan-in {} is not {} units x {g}", arch.name, pair[1].arch_index, pair[1].fan_in, pair[0].units);
            }
        }
        Ok(Self {
            arch_name: arch.name.clone(),
            layers,
            n: off,
            hash: arch_hash(arch),
        })
    }

    pub fn segments(&self) -> Vec<Segment> {
        let mut v = Vec::new();
        for (l, layer) in self.layers.iter().enumerate() {
            v.push(Segment {
                range: layer.weight_range(),
                layer: l,
                is_bias: false,
                permutable: layer.permutable,
            });
            if let Some(r) = layer.bias_range() {
                v.push(Segment {
                    range: r,
                    layer: l,
                    is_bias: true,
                    permutable: layer.permutable,
                });
            }
        }
        v
    }

    /// One slice per neuron or kernel, in layer then unit order.
    pub fn neuron_slices(&self) -> Vec<NeuronSlice> {
        self.layers
            .iter()
            .enumerate()
            .flat_map(|(l, layer)| {
                (0..layer.units).map(move |u| NeuronSlice {
                    layer: l,
                    unit: u,
                    weights: layer.unit_weights(u),
                    bias: layer.bias_offset.map(|b| b + u),
                })
            })
            .collect()
    }

    pub fn max_slice_len(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.fan_in + usize::from(l.bias_offset.is_some()))
            .max()
            .unwrap_or(0)
    }

    /// Indices in layer `l + 1` that move with unit `u` of layer `l`.
    pub fn next_columns(&self, l: usize, u: usize) -> Vec<usize> {
        let (Some(g), Some(next)) = (self.layers[l].next_group, self.layers.get(l + 1)) else {
            return Vec::new();
        };
        let row = next.fan_in;
        (0..next.units)
            .flat_map(|r| {
                let s = next.weight_offset + r * row + u * g;
                s..s + g
            })
            .collect()
    }

    pub fn permutable_layers(&self) -> impl Iterator<Item = usize> + '_ {
        self.layers.iter().enumerate().filter(|(_, l)| l.permutable).map(|(i, _)| i)
    }

    pub fn vectorize(&self, tensors: &[Tensor<f32>]) -> Result<Vec<f32>> {
        let mut out = Vec::with_capacity(self.n);
        let mut it = tensors.iter();
        for layer in &self.layers {
            let w = it.next().ok_or_else(|| crate::Error::Layout("missing weight tensor".into()))?;
            if w.shape() != layer.weight_shape.as_slice() {
                bail!(Layout, "weight shape {:?}, layout expects {:?}", w.shape(), layer.weight_shape);
            }
            out.extend_from_slice(w.data());
            if layer.bias_offset.is_some() {
                let b = it.next().ok_or_else(|| crate::Error::Layout("missing bias tensor".into()))?;
                if b.shape() != [layer.units] {
                    bail!(Layout, "bias shape {:?}, layout expects [{}]", b.shape(), layer.units);
                }
                out.extend_from_slice(b.data());
            }
        }
        if it.next().is_some() {
            bail!(Layout, "more tensors than the layout describes");
        }
        Ok(out)
    }

    pub fn devectorize(&self, v: &[f32]) -> Result<Vec<Tensor<f32>>> {
        if v.len() != self.n {
            bail!(Layout, "vector has {} entries, layout expects {}", v.len(), self.n);
        }
        let mut out = Vec::new();
        for layer in &self.layers {
            out.push(Tensor::param(&layer.weight_shape, v[layer.weight_range()].to_vec())?);
            if let Some(r) = layer.bias_range() {
                out.push(Tensor::param(&[layer.units], v[r].to_vec())?);
            }
        }
        Ok(out)
    }
}

/// Stable 64-bit fingerprint of an architecture's parameter structure.
/// Activation kinds are ignored: they do not change the vector layout.
pub fn arch_hash(arch: &ArchSpec) -> u64 {
    let mut canon = format!("{:?}", arch.input);
    for l in &arch.layers {
        match l {
            LayerSpec::Activation { .. } => canon.push_str("|act"),
            other => canon.push_str(&format!("|{}", serde_json::to_string(other).expect("layer serializes"))),
        }
    }
    let digest = Sha256::digest(canon.as_bytes());
    u64::from_le_bytes(digest[..8].try_into().unwrap())
}
