use serde::{Deserialize, Serialize};

use crate::error::{bail, Result};
use crate::rng::Rng;
use crate::tensor::{Activation, Scalar, Tape, Tensor, Var};

/// One layer of a base model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum LayerSpec {
    Dense { inp: usize, out: usize, bias: bool },
    Conv { c_in: usize, c_out: usize, ks: usize },
    MaxPool { ks: usize },
    Flatten,
    Activation { kind: Activation },
}

/// Per-sample activation shape between layers.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FeatureShape {
    Image { c: usize, h: usize, w: usize },
    Flat(usize),
}

/// A feed-forward architecture with a fixed input image shape.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ArchSpec {
    pub name: String,
    /// `[c, h, w]` of one input image.
    pub input: [usize; 3],
    pub layers: Vec<LayerSpec>,
}

/// Two-layer Tetris FFN: 16 → 5 → 4 without biases, 100 parameters.
pub fn build_ffn_tetris() -> ArchSpec {
    ArchSpec {
        name: "ffn-tetris".into(),
        input: [1, 4, 4],
        layers: vec![
            LayerSpec::Flatten,
            LayerSpec::Dense { inp: 16, out: 5, bias: false },
            LayerSpec::Activation { kind: Activation::Tanh },
            LayerSpec::Dense { inp: 5, out: 4, bias: false },
        ],
    }
}

/// MNIST CNN with 2464 parameters.
pub fn build_cnn_mnist() -> ArchSpec {
    let act = LayerSpec::Activation { kind: Activation::Tanh };
    ArchSpec {
        name: "cnn-mnist".into(),
        input: [1, 28, 28],
        layers: vec![
            LayerSpec::Conv { c_in: 1, c_out: 8, ks: 5 },
            LayerSpec::MaxPool { ks: 2 },
            act,
            LayerSpec::Conv { c_in: 8, c_out: 6, ks: 5 },
            LayerSpec::MaxPool { ks: 2 },
            act,
            LayerSpec::Conv { c_in: 6, c_out: 4, ks: 2 },
            act,
            LayerSpec::Flatten,
            LayerSpec::Dense { inp: 36, out: 20, bias: true },
            act,
            LayerSpec::Dense { inp: 20, out: 10, bias: true },
        ],
    }
}

impl LayerSpec {
    /// `(weight shape, bias length)` for parameterised layers.
    pub fn param_shapes(&self) -> Option<(Vec<usize>, usize)> {
        match *self {
            LayerSpec::Dense { inp, out, bias } => Some((vec![out, inp], if bias { out } else { 0 })),
            LayerSpec::Conv { c_in, c_out, ks } => Some((vec![c_out, c_in, ks, ks], c_out)),
            _ => None,
        }
    }

    pub fn param_count(&self) -> usize {
        self.param_shapes()
            .map_or(0, |(w, b)| w.iter().product::<usize>() + b)
    }
}

impl ArchSpec {
    /// Replaces every activation layer's nonlinearity.
    pub fn with_activation(mut self, kind: Activation) -> Self {
        for l in &mut self.layers {
            if let LayerSpec::Activation { kind: k } = l {
                *k = kind;
            }
        }
        self
    }

    /// Per-sample shape after each layer; errors if dimensions do not chain.
    pub fn shapes(&self) -> Result<Vec<FeatureShape>> {
        let [c, h, w] = self.input;
        let mut cur = FeatureShape::Image { c, h, w };
        let mut out = Vec::with_capacity(self.layers.len());
        for (i, layer) in self.layers.iter().enumerate() {
            cur = match (*layer, cur) {
                (LayerSpec::Dense { inp, out, .. }, FeatureShape::Flat(d)) if d == inp => FeatureShape::Flat(out),
                (LayerSpec::Conv { c_in, c_out, ks }, FeatureShape::Image { c, h, w }) if c == c_in && ks <= h && ks <= w => {
                    FeatureShape::Image {
                        c: c_out,
                        h: h - ks + 1,
                        w: w - ks + 1,
                    }
                }
                (LayerSpec::MaxPool { ks }, FeatureShape::Image { c, h, w }) if ks >= 1 && ks <= h && ks <= w => {
                    FeatureShape::Image { c, h: h / ks, w: w / ks }
                }
                (LayerSpec::Flatten, FeatureShape::Image { c, h, w }) => FeatureShape::Flat(c * h * w),
                (LayerSpec::Flatten, f @ FeatureShape::Flat(_)) => f,
                (LayerSpec::Activation { .. }, f) => f,
                (l, f) => bail!(Dimension, "{}: layer {i} {l:?} does not accept input {f:?}", self.name),
            };
            out.push(cur);
        }
        Ok(out)
    }

    pub fn output_dim(&self) -> Result<usize> {
        match self.shapes()?.last() {
            Some(FeatureShape::Flat(d)) => Ok(*d),
            other => bail!(Dimension, "{}: output {other:?} is not a flat vector", self.name),
        }
    }

    /// Parameter tensor shapes in storage order (each layer's weight, then bias).
    pub fn param_shapes(&self) -> Vec<Vec<usize>> {
        let mut v = Vec::new();
        for l in &self.layers {
            if let Some((w, b)) = l.param_shapes() {
                v.push(w);
                if b > 0 {
                    v.push(vec![b]);
                }
            }
        }
        v
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(LayerSpec::param_count).sum()
    }

    /// Splits a flat vector into parameter tensors.
    pub fn unflatten<T: Scalar>(&self, flat: &[T]) -> Result<Vec<Tensor<T>>> {
        let n = self.param_count();
        if flat.len() != n {
            bail!(Layout, "{}: expected {n} parameters, got {}", self.name, flat.len());
        }
        let mut off = 0;
        self.param_shapes()
            .into_iter()
            .map(|s| {
                let len: usize = s.iter().product();
                let t = Tensor::param(&s, flat[off..off + len].to_vec());
                off += len;
                t
            })
            .collect()
    }

    /// Forward pass of a batch `x: [n, c, h, w]` to logits `[n, classes]`.
    ///
    /// With `dropout = Some((p, rng))`, inverted dropout is applied to the
    /// input of every dense layer.
    pub fn forward<T: Scalar>(
        &self,
        tape: &mut Tape<T>,
        params: &[Var],
        x: Var,
        mut dropout: Option<(f64, &mut Rng)>,
    ) -> Result<Var> {
        let mut it = params.iter().copied();
        let mut next = || {
            it.next()
                .ok_or_else(|| crate::Error::Layout(format!("{}: too few parameter tensors", self.name)))
        };
        let n = tape.shape(x)[0];
        let mut h = x;
        for layer in &self.layers {
            h = match *layer {
                LayerSpec::Dense { bias, .. } => {
                    if tape.shape(h).len() != 2 {
                        bail!(Dimension, "dense layer needs a flattened input, got {:?}", tape.shape(h));
                    }
                    if let Some((p, rng)) = dropout.as_mut() {
                        h = tape.dropout(h, *p, true, rng)?;
                    }
                    let w = next()?;
                    let b = if bias { Some(next()?) } else { None };
                    tape.linear(h, w, b)?
                }
                LayerSpec::Conv { .. } => {
                    let k = next()?;
                    let b = next()?;
                    tape.conv2d(h, k, b)?
                }
                LayerSpec::MaxPool { ks } => tape.max_pool2d(h, ks)?,
                LayerSpec::Flatten => {
                    let d = tape.shape(h).iter().skip(1).product::<usize>();
                    tape.reshape(h, &[n, d])?
                }
                LayerSpec::Activation { kind } => tape.activation(h, kind),
            };
        }
        if it.next().is_some() {
            bail!(Layout, "{}: too many parameter tensors", self.name);
        }
        Ok(h)
    }

    /// Evaluation-mode logits for `n` images from a flat weight vector.
    pub fn logits(&self, flat: &[f32], images: &[f32], n: usize) -> Result<Vec<f32>> {
        let params = self.unflatten(flat)?;
        let mut tape = Tape::<f32>::new();
        let vars: Vec<Var> = params.iter().map(|p| {
            let mut p = p.clone();
            p.requires_grad = false;
            tape.leaf(&p)
        }).collect();
        let [c, h, w] = self.input;
        let x = tape.constant(&[n, c, h, w], images.to_vec())?;
        let y = self.forward(&mut tape, &vars, x, None)?;
        Ok(tape.value(y).to_vec())
    }
}
