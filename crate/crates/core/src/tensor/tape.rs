use rand::Rng as _;

use super::kernels::{col2im_add, gemm, im2col, ConvGeom, MatMut, MatRef};
use super::{check_shape, Activation, Scalar, Tensor};
use crate::error::{bail, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(&self) -> usize {
        self.0
    }
}

enum Op<T> {
    Leaf,
    MatMul { a: Var, b: Var, ta: bool, tb: bool, m: usize, k: usize, n: usize },
    BatchMatMul { a: Var, b: Var, ta: bool, tb: bool, g: usize, m: usize, k: usize, n: usize },
    Linear { x: Var, w: Var, b: Option<Var>, rows: usize, inp: usize, out: usize },
    Add { a: Var, b: Var },
    Sub { a: Var, b: Var },
    Mul { a: Var, b: Var },
    Scale { a: Var, c: T },
    Shift { a: Var },
    AddBroadcast { x: Var, y: Var, inner: usize },
    Unary { a: Var, kind: Activation },
    Softmax { a: Var, cols: usize },
    LayerNorm { x: Var, gamma: Var, beta: Var, cols: usize, xhat: Vec<T>, rstd: Vec<T> },
    CrossEntropy { logits: Var, labels: Vec<usize>, probs: Vec<T>, c: usize },
    Sum { a: Var },
    Mean { a: Var },
    L2Normalize { a: Var, cols: usize, norms: Vec<T> },
    Narrow { a: Var, outer: usize, dim: usize, inner: usize, start: usize, len: usize },
    Concat { a: Var, b: Var, outer: usize, inner_a: usize, inner_b: usize },
    Expand { a: Var, n: usize },
    Gather { a: Var, indices: Vec<usize>, rows: usize, cols: usize },
    Reshape { a: Var },
    Permute { a: Var, src_index: Vec<usize> },
    Dropout { a: Var, mask: Vec<T> },
    Conv2d { x: Var, k: Var, b: Var, n: usize, geom: ConvGeom, c_out: usize, cols: Vec<T> },
    MaxPool { x: Var, argmax: Vec<usize> },
}

struct Node<T> {
    shape: Vec<usize>,
    value: Vec<T>,
    requires_grad: bool,
    op: Op<T>,
}

/// Records a forward computation and replays it backwards.
///
/// A tape is single-use: build the graph, call [`Tape::backward`] once on a
/// scalar, read gradients, then drop it. Parameters are copied in as leaves,
/// so the owning [`Tensor`]s are not borrowed for the tape's lifetime.
pub struct Tape<T: Scalar = f32> {
    nodes: Vec<Node<T>>,
    grads: Vec<Option<Vec<T>>>,
    backward_done: bool,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            grads: Vec::new(),
            backward_done: false,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, shape: Vec<usize>, value: Vec<T>, requires_grad: bool, op: Op<T>) -> Var {
        debug_assert_eq!(numel(&shape), value.len());
        self.nodes.push(Node {
            shape,
            value,
            requires_grad,
            op,
        });
        Var(self.nodes.len() - 1)
    }

    fn node(&self, v: Var) -> &Node<T> {
        &self.nodes[v.0]
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    /// Copies a tensor onto the tape as a leaf.
    pub fn leaf(&mut self, t: &Tensor<T>) -> Var {
        self.push(t.shape().to_vec(), t.data().to_vec(), t.requires_grad, Op::Leaf)
    }

    pub fn param(&mut self, shape: &[usize], data: Vec<T>) -> Result<Var> {
        check_shape(shape, data.len())?;
        Ok(self.push(shape.to_vec(), data, true, Op::Leaf))
    }

    pub fn constant(&mut self, shape: &[usize], data: Vec<T>) -> Result<Var> {
        check_shape(shape, data.len())?;
        Ok(self.push(shape.to_vec(), data, false, Op::Leaf))
    }

    pub fn value(&self, v: Var) -> &[T] {
        &self.node(v).value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.node(v).shape
    }

    pub fn scalar(&self, v: Var) -> T {
        self.node(v).value[0]
    }

    pub fn to_tensor(&self, v: Var) -> Tensor<T> {
        let n = self.node(v);
        Tensor::new(&n.shape, n.value.clone()).expect("tape nodes hold consistent shapes")
    }

    /// Gradient of the last backward pass with respect to a leaf.
    pub fn grad(&self, v: Var) -> Option<&[T]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    /// Adds each leaf's gradient into the matching tensor's `grad` buffer.
    pub fn accumulate_grads(&self, params: &mut [&mut Tensor<T>], vars: &[Var]) -> Result<()> {
        if params.len() != vars.len() {
            bail!(Dimension, "{} parameters but {} tape leaves", params.len(), vars.len());
        }
        for (p, v) in params.iter_mut().zip(vars) {
            let Some(g) = self.grad(*v) else { continue };
            if g.len() != p.numel() {
                bail!(Dimension, "gradient length {} does not match parameter {:?}", g.len(), p.shape());
            }
            match &mut p.grad {
                Some(buf) => buf.iter_mut().zip(g).for_each(|(b, &x)| *b = *b + x),
                None => p.grad = Some(g.to_vec()),
            }
        }
        Ok(())
    }

    // ----- linear algebra -------------------------------------------------

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.matmul_t(a, b, false, false)
    }

    /// `op(a) * op(b)` where `op` optionally transposes a 2d operand.
    pub fn matmul_t(&mut self, a: Var, b: Var, ta: bool, tb: bool) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        if sa.len() != 2 || sb.len() != 2 {
            bail!(Dimension, "matmul expects 2d operands, got {sa:?} and {sb:?}");
        }
        let (m, k) = if ta { (sa[1], sa[0]) } else { (sa[0], sa[1]) };
        let (k2, n) = if tb { (sb[1], sb[0]) } else { (sb[0], sb[1]) };
        if k != k2 {
            bail!(Dimension, "matmul inner dimensions disagree: {sa:?} x {sb:?}");
        }
        let mut out = vec![T::zero(); m * n];
        gemm(
            m,
            k,
            n,
            MatRef::row_major(self.value(a), sa[1], ta),
            MatRef::row_major(self.value(b), sb[1], tb),
            T::zero(),
            MatMut::row_major(&mut out, n, false),
        );
        let rg = self.rg(&[a, b]);
        Ok(self.push(vec![m, n], out, rg, Op::MatMul { a, b, ta, tb, m, k, n }))
    }

    /// Batched `op(a[i]) * op(b[i])` over a leading group dimension.
    pub fn bmm(&mut self, a: Var, b: Var, ta: bool, tb: bool) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        if sa.len() != 3 || sb.len() != 3 || sa[0] != sb[0] {
            bail!(Dimension, "bmm expects [g, _, _] operands with equal g, got {sa:?} and {sb:?}");
        }
        let g = sa[0];
        let (m, k) = if ta { (sa[2], sa[1]) } else { (sa[1], sa[2]) };
        let (k2, n) = if tb { (sb[2], sb[1]) } else { (sb[1], sb[2]) };
        if k != k2 {
            bail!(Dimension, "bmm inner dimensions disagree: {sa:?} x {sb:?}");
        }
        let (la, lb) = (sa[1] * sa[2], sb[1] * sb[2]);
        let mut out = vec![T::zero(); g * m * n];
        {
            let (va, vb) = (self.value(a), self.value(b));
            for (i, o) in out.chunks_mut(m * n).enumerate() {
                gemm(
                    m,
                    k,
                    n,
                    MatRef::row_major(&va[i * la..(i + 1) * la], sa[2], ta),
                    MatRef::row_major(&vb[i * lb..(i + 1) * lb], sb[2], tb),
                    T::zero(),
                    MatMut::row_major(o, n, false),
                );
            }
        }
        let rg = self.rg(&[a, b]);
        Ok(self.push(vec![g, m, n], out, rg, Op::BatchMatMul { a, b, ta, tb, g, m, k, n }))
    }

    /// `x * wᵀ + b` over the last axis of `x`; `w` is `[out, in]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let sx = self.shape(x).to_vec();
        let sw = self.shape(w).to_vec();
        if sw.len() != 2 {
            bail!(Dimension, "linear weight must be [out, in], got {sw:?}");
        }
        let (out, inp) = (sw[0], sw[1]);
        if *sx.last().unwrap() != inp {
            bail!(Dimension, "linear input {sx:?} does not end in {inp}");
        }
        if let Some(b) = b {
            if self.shape(b) != [out] {
                bail!(Dimension, "linear bias {:?} does not match {out} outputs", self.shape(b));
            }
        }
        let rows = numel(&sx) / inp;
        let mut y = vec![T::zero(); rows * out];
        gemm(
            rows,
            inp,
            out,
            MatRef::row_major(self.value(x), inp, false),
            MatRef::row_major(self.value(w), inp, true),
            T::zero(),
            MatMut::row_major(&mut y, out, false),
        );
        if let Some(b) = b {
            let bv = self.value(b);
            for row in y.chunks_mut(out) {
                row.iter_mut().zip(bv).for_each(|(y, &b)| *y = *y + b);
            }
        }
        let mut shape = sx;
        *shape.last_mut().unwrap() = out;
        let mut deps = vec![x, w];
        deps.extend(b);
        let rg = self.rg(&deps);
        Ok(self.push(shape, y, rg, Op::Linear { x, w, b, rows, inp, out }))
    }

    // ----- elementwise ----------------------------------------------------

    fn same_shape(&self, a: Var, b: Var, what: &str) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            bail!(Dimension, "{what}: shapes {:?} and {:?} differ", self.shape(a), self.shape(b));
        }
        Ok(())
    }

    fn zip_with(&mut self, a: Var, b: Var, f: impl Fn(T, T) -> T) -> Vec<T> {
        self.value(a).iter().zip(self.value(b)).map(|(&x, &y)| f(x, y)).collect()
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "add")?;
        let v = self.zip_with(a, b, |x, y| x + y);
        let rg = self.rg(&[a, b]);
        Ok(self.push(self.shape(a).to_vec(), v, rg, Op::Add { a, b }))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "sub")?;
        let v = self.zip_with(a, b, |x, y| x - y);
        let rg = self.rg(&[a, b]);
        Ok(self.push(self.shape(a).to_vec(), v, rg, Op::Sub { a, b }))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "mul")?;
        let v = self.zip_with(a, b, |x, y| x * y);
        let rg = self.rg(&[a, b]);
        Ok(self.push(self.shape(a).to_vec(), v, rg, Op::Mul { a, b }))
    }

    pub fn scale(&mut self, a: Var, c: T) -> Var {
        let v = self.value(a).iter().map(|&x| x * c).collect();
        let rg = self.rg(&[a]);
        self.push(self.shape(a).to_vec(), v, rg, Op::Scale { a, c })
    }

    pub fn add_scalar(&mut self, a: Var, c: T) -> Var {
        let v = self.value(a).iter().map(|&x| x + c).collect();
        let rg = self.rg(&[a]);
        self.push(self.shape(a).to_vec(), v, rg, Op::Shift { a })
    }

    /// `x + y` where `y`'s shape is a suffix of `x`'s (bias, position table).
    pub fn add_broadcast(&mut self, x: Var, y: Var) -> Result<Var> {
        let (sx, sy) = (self.shape(x), self.shape(y));
        if sy.len() > sx.len() || sx[sx.len() - sy.len()..] != *sy {
            bail!(Dimension, "cannot broadcast {sy:?} onto {sx:?}");
        }
        let inner = numel(sy);
        let yv = self.value(y);
        let v: Vec<T> = self
            .value(x)
            .chunks(inner)
            .flat_map(|c| c.iter().zip(yv).map(|(&a, &b)| a + b))
            .collect();
        let rg = self.rg(&[x, y]);
        Ok(self.push(self.shape(x).to_vec(), v, rg, Op::AddBroadcast { x, y, inner }))
    }

    pub fn activation(&mut self, a: Var, kind: Activation) -> Var {
        let v = self.value(a).iter().map(|&x| kind.apply(x)).collect();
        let rg = self.rg(&[a]);
        self.push(self.shape(a).to_vec(), v, rg, Op::Unary { a, kind })
    }

    // ----- normalisation & reductions -------------------------------------

    /// Softmax over the last axis.
    pub fn softmax(&mut self, a: Var) -> Var {
        let cols = *self.shape(a).last().unwrap();
        let mut v = self.value(a).to_vec();
        for row in v.chunks_mut(cols) {
            softmax_in_place(row);
        }
        let rg = self.rg(&[a]);
        self.push(self.shape(a).to_vec(), v, rg, Op::Softmax { a, cols })
    }

    /// Layer normalisation over the last axis with affine `gamma`, `beta`.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var> {
        let cols = *self.shape(x).last().unwrap();
        if self.shape(gamma) != [cols] || self.shape(beta) != [cols] {
            bail!(Dimension, "layer norm affine parameters must be [{cols}]");
        }
        let eps = T::from_f64(eps);
        let ct = T::from_f64(cols as f64);
        let xv = self.value(x);
        let (g, b) = (self.value(gamma), self.value(beta));
        let rows = xv.len() / cols;
        let mut xhat = vec![T::zero(); xv.len()];
        let mut rstd = vec![T::zero(); rows];
        let mut y = vec![T::zero(); xv.len()];
        for r in 0..rows {
            let row = &xv[r * cols..(r + 1) * cols];
            let mean = row.iter().copied().sum::<T>() / ct;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / ct;
            let rs = T::one() / (var + eps).sqrt();
            rstd[r] = rs;
            for c in 0..cols {
                let h = (row[c] - mean) * rs;
                xhat[r * cols + c] = h;
                y[r * cols + c] = h * g[c] + b[c];
            }
        }
        let rg = self.rg(&[x, gamma, beta]);
        Ok(self.push(self.shape(x).to_vec(), y, rg, Op::LayerNorm { x, gamma, beta, cols, xhat, rstd }))
    }

    /// Mean negative log-likelihood of `labels` under row-wise softmax.
    pub fn softmax_cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let s = self.shape(logits);
        if s.len() != 2 || s[0] != labels.len() {
            bail!(Dimension, "logits {s:?} do not match {} labels", labels.len());
        }
        let c = s[1];
        if let Some(&bad) = labels.iter().find(|&&l| l >= c) {
            bail!(Index, "label {bad} out of range for {c} classes");
        }
        let mut probs = self.value(logits).to_vec();
        let mut nll = T::zero();
        for (row, &l) in probs.chunks_mut(c).zip(labels) {
            softmax_in_place(row);
            nll = nll - row[l].max(T::min_positive_value()).ln();
        }
        let loss = nll / T::from_f64(labels.len() as f64);
        let rg = self.rg(&[logits]);
        Ok(self.push(
            vec![1],
            vec![loss],
            rg,
            Op::CrossEntropy {
                logits,
                labels: labels.to_vec(),
                probs,
                c,
            },
        ))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).iter().copied().sum();
        let rg = self.rg(&[a]);
        self.push(vec![1], vec![s], rg, Op::Sum { a })
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let v = self.value(a);
        let s = v.iter().copied().sum::<T>() / T::from_f64(v.len() as f64);
        let rg = self.rg(&[a]);
        self.push(vec![1], vec![s], rg, Op::Mean { a })
    }

    /// Scales each row (last axis) to unit Euclidean norm.
    pub fn l2_normalize(&mut self, a: Var) -> Var {
        let cols = *self.shape(a).last().unwrap();
        let mut v = self.value(a).to_vec();
        let mut norms = Vec::with_capacity(v.len() / cols);
        let floor = T::from_f64(1e-12);
        for row in v.chunks_mut(cols) {
            let n = row.iter().map(|&x| x * x).sum::<T>().sqrt().max(floor);
            row.iter_mut().for_each(|x| *x = *x / n);
            norms.push(n);
        }
        let rg = self.rg(&[a]);
        self.push(self.shape(a).to_vec(), v, rg, Op::L2Normalize { a, cols, norms })
    }

    // ----- shape manipulation ---------------------------------------------

    fn split_axis(shape: &[usize], axis: usize) -> Result<(usize, usize, usize)> {
        if axis >= shape.len() {
            bail!(Dimension, "axis {axis} out of range for {shape:?}");
        }
        Ok((numel(&shape[..axis]), shape[axis], numel(&shape[axis + 1..])))
    }

    /// `len` entries of `axis` starting at `start`.
    pub fn narrow(&mut self, a: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        let (outer, dim, inner) = Self::split_axis(&shape, axis)?;
        if len == 0 || start + len > dim {
            bail!(Dimension, "narrow [{start}, {}) outside axis of length {dim}", start + len);
        }
        let src = self.value(a);
        let mut v = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            v.extend_from_slice(&src[(o * dim + start) * inner..(o * dim + start + len) * inner]);
        }
        let mut out_shape = shape;
        out_shape[axis] = len;
        let rg = self.rg(&[a]);
        Ok(self.push(out_shape, v, rg, Op::Narrow { a, outer, dim, inner, start, len }))
    }

    /// Joins two tensors along `axis`; other extents must agree.
    pub fn concat(&mut self, a: Var, b: Var, axis: usize) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        if sa.len() != sb.len() || axis >= sa.len() || (0..sa.len()).any(|i| i != axis && sa[i] != sb[i]) {
            bail!(Dimension, "cannot concat {sa:?} and {sb:?} along axis {axis}");
        }
        let outer = numel(&sa[..axis]);
        let inner_a = numel(&sa[axis..]);
        let inner_b = numel(&sb[axis..]);
        let (va, vb) = (self.value(a), self.value(b));
        let mut v = Vec::with_capacity(va.len() + vb.len());
        for o in 0..outer {
            v.extend_from_slice(&va[o * inner_a..(o + 1) * inner_a]);
            v.extend_from_slice(&vb[o * inner_b..(o + 1) * inner_b]);
        }
        let mut shape = sa;
        shape[axis] += sb[axis];
        let rg = self.rg(&[a, b]);
        Ok(self.push(shape, v, rg, Op::Concat { a, b, outer, inner_a, inner_b }))
    }

    /// Repeats `a` along a new leading axis of length `n`.
    pub fn expand(&mut self, a: Var, n: usize) -> Result<Var> {
        if n == 0 {
            bail!(Dimension, "cannot expand to zero copies");
        }
        let src = self.value(a);
        let mut v = Vec::with_capacity(src.len() * n);
        for _ in 0..n {
            v.extend_from_slice(src);
        }
        let mut shape = vec![n];
        shape.extend_from_slice(self.shape(a));
        let rg = self.rg(&[a]);
        Ok(self.push(shape, v, rg, Op::Expand { a, n }))
    }

    /// Selects `indices` along the flattened trailing axes of each leading row.
    pub fn gather(&mut self, a: Var, indices: &[usize]) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        let rows = shape[0];
        let cols = numel(&shape[1..]);
        if indices.is_empty() {
            bail!(Dimension, "gather needs at least one index");
        }
        if let Some(&bad) = indices.iter().find(|&&i| i >= cols) {
            bail!(Index, "gather index {bad} out of range for {cols} columns");
        }
        let src = self.value(a);
        let mut v = Vec::with_capacity(rows * indices.len());
        for r in 0..rows {
            let row = &src[r * cols..(r + 1) * cols];
            v.extend(indices.iter().map(|&i| row[i]));
        }
        let rg = self.rg(&[a]);
        Ok(self.push(
            vec![rows, indices.len()],
            v,
            rg,
            Op::Gather {
                a,
                indices: indices.to_vec(),
                rows,
                cols,
            },
        ))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        check_shape(shape, self.value(a).len())?;
        let v = self.value(a).to_vec();
        let rg = self.rg(&[a]);
        Ok(self.push(shape.to_vec(), v, rg, Op::Reshape { a }))
    }

    /// Reorders axes: output axis `i` is input axis `axes[i]`.
    pub fn permute(&mut self, a: Var, axes: &[usize]) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        let nd = shape.len();
        let mut seen = vec![false; nd];
        if axes.len() != nd || axes.iter().any(|&x| x >= nd || std::mem::replace(&mut seen[x], true)) {
            bail!(Dimension, "{axes:?} is not a permutation of {nd} axes");
        }
        let mut in_strides = vec![1usize; nd];
        for i in (0..nd.saturating_sub(1)).rev() {
            in_strides[i] = in_strides[i + 1] * shape[i + 1];
        }
        let out_shape: Vec<usize> = axes.iter().map(|&x| shape[x]).collect();
        let total = numel(&shape);
        let mut src_index = Vec::with_capacity(total);
        let mut idx = vec![0usize; nd];
        for _ in 0..total {
            src_index.push(idx.iter().zip(axes).map(|(&i, &ax)| i * in_strides[ax]).sum());
            for d in (0..nd).rev() {
                idx[d] += 1;
                if idx[d] < out_shape[d] {
                    break;
                }
                idx[d] = 0;
            }
        }
        let src = self.value(a);
        let v = src_index.iter().map(|&i| src[i]).collect();
        let rg = self.rg(&[a]);
        Ok(self.push(out_shape, v, rg, Op::Permute { a, src_index }))
    }

    /// Inverted dropout. Identity when `p == 0` or not training.
    pub fn dropout(&mut self, a: Var, p: f64, training: bool, rng: &mut crate::rng::Rng) -> Result<Var> {
        if !(0.0..1.0).contains(&p) {
            bail!(Config, "dropout rate {p} must lie in [0, 1)");
        }
        if !training || p == 0.0 {
            return Ok(a);
        }
        let keep = T::from_f64(1.0 / (1.0 - p));
        let mask: Vec<T> = (0..self.value(a).len())
            .map(|_| if rng.random::<f64>() < p { T::zero() } else { keep })
            .collect();
        let v = self.value(a).iter().zip(&mask).map(|(&x, &m)| x * m).collect();
        let rg = self.rg(&[a]);
        Ok(self.push(self.shape(a).to_vec(), v, rg, Op::Dropout { a, mask }))
    }

    // ----- convolution ----------------------------------------------------

    /// Valid stride-1 convolution. `x` is `[n, c, h, w]` or `[c, h, w]`,
    /// `k` is `[c_out, c, kh, kw]`, `b` is `[c_out]`.
    pub fn conv2d(&mut self, x: Var, k: Var, b: Var) -> Result<Var> {
        let sx = self.shape(x).to_vec();
        let sk = self.shape(k).to_vec();
        let batched = sx.len() == 4;
        if !(sx.len() == 3 || batched) || sk.len() != 4 {
            bail!(Dimension, "conv2d expects x [n,c,h,w] or [c,h,w] and k [o,c,kh,kw], got {sx:?}, {sk:?}");
        }
        let (n, c, h, w) = if batched { (sx[0], sx[1], sx[2], sx[3]) } else { (1, sx[0], sx[1], sx[2]) };
        let (c_out, kc, kh, kw) = (sk[0], sk[1], sk[2], sk[3]);
        if kc != c {
            bail!(Dimension, "kernel expects {kc} input channels, input has {c}");
        }
        if kh > h || kw > w {
            bail!(Dimension, "kernel {kh}x{kw} larger than input {h}x{w}");
        }
        if self.shape(b) != [c_out] {
            bail!(Dimension, "conv bias {:?} does not match {c_out} kernels", self.shape(b));
        }
        let geom = ConvGeom { c_in: c, h, w, kh, kw };
        let (patch, ol) = (geom.patch(), geom.out_len());
        let mut cols = vec![T::zero(); n * patch * ol];
        let mut out = vec![T::zero(); n * c_out * ol];
        {
            let (xv, kv, bv) = (self.value(x), self.value(k), self.value(b));
            for s in 0..n {
                let col = &mut cols[s * patch * ol..(s + 1) * patch * ol];
                im2col(&xv[s * c * h * w..(s + 1) * c * h * w], geom, col);
                let o = &mut out[s * c_out * ol..(s + 1) * c_out * ol];
                gemm(
                    c_out,
                    patch,
                    ol,
                    MatRef::row_major(kv, patch, false),
                    MatRef::row_major(col, ol, false),
                    T::zero(),
                    MatMut::row_major(o, ol, false),
                );
                for (oc, row) in o.chunks_mut(ol).enumerate() {
                    row.iter_mut().for_each(|y| *y = *y + bv[oc]);
                }
            }
        }
        let shape = if batched {
            vec![n, c_out, geom.out_h(), geom.out_w()]
        } else {
            vec![c_out, geom.out_h(), geom.out_w()]
        };
        let rg = self.rg(&[x, k, b]);
        Ok(self.push(shape, out, rg, Op::Conv2d { x, k, b, n, geom, c_out, cols }))
    }

    /// Max pooling with window = stride = `ks`, truncating ragged edges.
    pub fn max_pool2d(&mut self, x: Var, ks: usize) -> Result<Var> {
        let sx = self.shape(x).to_vec();
        if !(sx.len() == 3 || sx.len() == 4) {
            bail!(Dimension, "max_pool2d expects [n,c,h,w] or [c,h,w], got {sx:?}");
        }
        let (h, w) = (sx[sx.len() - 2], sx[sx.len() - 1]);
        if ks == 0 || ks > h || ks > w {
            bail!(Dimension, "pool window {ks} does not fit {h}x{w}");
        }
        let planes = numel(&sx[..sx.len() - 2]);
        let (oh, ow) = (h / ks, w / ks);
        let xv = self.value(x);
        let mut out = Vec::with_capacity(planes * oh * ow);
        let mut argmax = Vec::with_capacity(planes * oh * ow);
        for p in 0..planes {
            let base = p * h * w;
            for i in 0..oh {
                for j in 0..ow {
                    let mut best = base + i * ks * w + j * ks;
                    for di in 0..ks {
                        for dj in 0..ks {
                            let idx = base + (i * ks + di) * w + j * ks + dj;
                            if xv[idx] > xv[best] {
                                best = idx;
                            }
                        }
                    }
                    argmax.push(best);
                    out.push(xv[best]);
                }
            }
        }
        let mut shape = sx;
        let nd = shape.len();
        shape[nd - 2] = oh;
        shape[nd - 1] = ow;
        let rg = self.rg(&[x]);
        Ok(self.push(shape, out, rg, Op::MaxPool { x, argmax }))
    }

    // ----- backward -------------------------------------------------------

    /// Reverse pass from a scalar `loss`. May be called once per tape.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.backward_done {
            bail!(State, "backward already ran on this tape; rebuild the forward pass first");
        }
        if self.node(loss).value.len() != 1 {
            bail!(Dimension, "backward needs a scalar loss, got shape {:?}", self.node(loss).shape);
        }
        self.backward_done = true;
        let mut grads: Vec<Option<Vec<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        if !self.node(loss).requires_grad {
            self.grads = grads;
            return Ok(());
        }
        grads[loss.0] = Some(vec![T::one()]);
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            if matches!(self.nodes[i].op, Op::Leaf) {
                grads[i] = Some(g);
                continue;
            }
            backprop(&self.nodes, i, &g, &mut grads);
        }
        self.grads = grads;
        Ok(())
    }
}

fn softmax_in_place<T: Scalar>(row: &mut [T]) {
    let max = row.iter().copied().fold(T::neg_infinity(), T::max);
    let mut z = T::zero();
    for x in row.iter_mut() {
        *x = (*x - max).exp();
        z = z + *x;
    }
    row.iter_mut().for_each(|x| *x = *x / z);
}

/// Gradient buffer for `v`, allocated on first use; `None` if `v` needs none.
fn slot<'g, T: Scalar>(nodes: &[Node<T>], grads: &'g mut [Option<Vec<T>>], v: Var) -> Option<&'g mut Vec<T>> {
    let node = &nodes[v.0];
    if !node.requires_grad {
        return None;
    }
    Some(grads[v.0].get_or_insert_with(|| vec![T::zero(); node.value.len()]))
}

fn add_into<T: Scalar>(dst: &mut [T], src: impl IntoIterator<Item = T>) {
    dst.iter_mut().zip(src).for_each(|(d, s)| *d = *d + s);
}

fn backprop<T: Scalar>(nodes: &[Node<T>], i: usize, g: &[T], grads: &mut [Option<Vec<T>>]) {
    let node = &nodes[i];
    let val = |v: Var| nodes[v.0].value.as_slice();
    match &node.op {
        Op::Leaf => {}
        &Op::MatMul { a, b, ta, tb, m, k, n } => {
            let (sa1, sb1) = (nodes[a.0].shape[1], nodes[b.0].shape[1]);
            if let Some(da) = slot(nodes, grads, a) {
                // dA' = dC * B'ᵀ
                let bt = MatRef::row_major(val(b), sb1, !tb);
                gemm(m, n, k, MatRef::row_major(g, n, false), bt, T::one(), MatMut::row_major(da, sa1, ta));
            }
            if let Some(db) = slot(nodes, grads, b) {
                // dB' = A'ᵀ * dC
                let at = MatRef::row_major(val(a), sa1, !ta);
                gemm(k, m, n, at, MatRef::row_major(g, n, false), T::one(), MatMut::row_major(db, sb1, tb));
            }
        }
        &Op::BatchMatMul { a, b, ta, tb, g: groups, m, k, n } => {
            let (sa, sb) = (&nodes[a.0].shape, &nodes[b.0].shape);
            let (la, lb, lc) = (sa[1] * sa[2], sb[1] * sb[2], m * n);
            let (ca, cb) = (sa[2], sb[2]);
            if let Some(da) = slot(nodes, grads, a) {
                let bv = val(b);
                for s in 0..groups {
                    gemm(
                        m,
                        n,
                        k,
                        MatRef::row_major(&g[s * lc..(s + 1) * lc], n, false),
                        MatRef::row_major(&bv[s * lb..(s + 1) * lb], cb, !tb),
                        T::one(),
                        MatMut::row_major(&mut da[s * la..(s + 1) * la], ca, ta),
                    );
                }
            }
            if let Some(db) = slot(nodes, grads, b) {
                let av = val(a);
                for s in 0..groups {
                    gemm(
                        k,
                        m,
                        n,
                        MatRef::row_major(&av[s * la..(s + 1) * la], ca, !ta),
                        MatRef::row_major(&g[s * lc..(s + 1) * lc], n, false),
                        T::one(),
                        MatMut::row_major(&mut db[s * lb..(s + 1) * lb], cb, tb),
                    );
                }
            }
        }
        &Op::Linear { x, w, b, rows, inp, out } => {
            if let Some(dx) = slot(nodes, grads, x) {
                gemm(
                    rows,
                    out,
                    inp,
                    MatRef::row_major(g, out, false),
                    MatRef::row_major(val(w), inp, false),
                    T::one(),
                    MatMut::row_major(dx, inp, false),
                );
            }
            if let Some(dw) = slot(nodes, grads, w) {
                gemm(
                    out,
                    rows,
                    inp,
                    MatRef::row_major(g, out, true),
                    MatRef::row_major(val(x), inp, false),
                    T::one(),
                    MatMut::row_major(dw, inp, false),
                );
            }
            if let Some(b) = b {
                if let Some(db) = slot(nodes, grads, b) {
                    for row in g.chunks(out) {
                        add_into(db, row.iter().copied());
                    }
                }
            }
        }
        &Op::Add { a, b } => {
            if let Some(da) = slot(nodes, grads, a) {
                add_into(da, g.iter().copied());
            }
            if let Some(db) = slot(nodes, grads, b) {
                add_into(db, g.iter().copied());
            }
        }
        &Op::Sub { a, b } => {
            if let Some(da) = slot(nodes, grads, a) {
                add_into(da, g.iter().copied());
            }
            if let Some(db) = slot(nodes, grads, b) {
                add_into(db, g.iter().map(|&x| -x));
            }
        }
        &Op::Mul { a, b } => {
            if let Some(da) = slot(nodes, grads, a) {
                add_into(da, g.iter().zip(val(b)).map(|(&g, &y)| g * y));
            }
            if let Some(db) = slot(nodes, grads, b) {
                add_into(db, g.iter().zip(val(a)).map(|(&g, &x)| g * x));
            }
        }
        &Op::Scale { a, c } => {
            if let Some(da) = slot(nodes, grads, a) {
                add_into(da, g.iter().map(|&x| x * c));
            }
        }
        &Op::Shift { a } | &Op::Reshape { a } => {
            if let Some(da) = slot(nodes, grads, a) {
                add_into(da, g.iter().copied());
            }
        }
        &Op::AddBroadcast { x, y, inner } => {
            if let Some(dx) = slot(nodes, grads, x) {
                add_into(dx, g.iter().copied());
            }
            if let Some(dy) = slot(nodes, grads, y) {
                for chunk in g.chunks(inner) {
                    add_into(dy, chunk.iter().copied());
                }
            }
        }
        &Op::Unary { a, kind } => {
            if let Some(da) = slot(nodes, grads, a) {
                let (x, y) = (val(a), &node.value);
                for j in 0..g.len() {
                    da[j] = da[j] + g[j] * kind.derivative(x[j], y[j]);
                }
            }
        }
        &Op::Softmax { a, cols } => {
            if let Some(da) = slot(nodes, grads, a) {
                for ((dr, gr), yr) in da.chunks_mut(cols).zip(g.chunks(cols)).zip(node.value.chunks(cols)) {
                    let dot: T = gr.iter().zip(yr).map(|(&g, &y)| g * y).sum();
                    for j in 0..cols {
                        dr[j] = dr[j] + yr[j] * (gr[j] - dot);
                    }
                }
            }
        }
        Op::LayerNorm { x, gamma, beta, cols, xhat, rstd } => {
            let cols = *cols;
            let gv = val(*gamma);
            if let Some(dgamma) = slot(nodes, grads, *gamma) {
                for (gr, hr) in g.chunks(cols).zip(xhat.chunks(cols)) {
                    add_into(dgamma, gr.iter().zip(hr).map(|(&g, &h)| g * h));
                }
            }
            if let Some(dbeta) = slot(nodes, grads, *beta) {
                for gr in g.chunks(cols) {
                    add_into(dbeta, gr.iter().copied());
                }
            }
            if let Some(dx) = slot(nodes, grads, *x) {
                let ct = T::from_f64(cols as f64);
                for (r, (gr, hr)) in g.chunks(cols).zip(xhat.chunks(cols)).enumerate() {
                    let mut s1 = T::zero();
                    let mut s2 = T::zero();
                    for j in 0..cols {
                        let dh = gr[j] * gv[j];
                        s1 = s1 + dh;
                        s2 = s2 + dh * hr[j];
                    }
                    let k = rstd[r] / ct;
                    let dr = &mut dx[r * cols..(r + 1) * cols];
                    for j in 0..cols {
                        let dh = gr[j] * gv[j];
                        dr[j] = dr[j] + k * (ct * dh - s1 - hr[j] * s2);
                    }
                }
            }
        }
        Op::CrossEntropy { logits, labels, probs, c } => {
            if let Some(dl) = slot(nodes, grads, *logits) {
                let scale = g[0] / T::from_f64(labels.len() as f64);
                for (r, &l) in labels.iter().enumerate() {
                    for j in 0..*c {
                        let onehot = if j == l { T::one() } else { T::zero() };
                        dl[r * c + j] = dl[r * c + j] + (probs[r * c + j] - onehot) * scale;
                    }
                }
            }
        }
        &Op::Sum { a } => {
            if let Some(da) = slot(nodes, grads, a) {
                da.iter_mut().for_each(|d| *d = *d + g[0]);
            }
        }
        &Op::Mean { a } => {
            if let Some(da) = slot(nodes, grads, a) {
                let s = g[0] / T::from_f64(da.len() as f64);
                da.iter_mut().for_each(|d| *d = *d + s);
            }
        }
        Op::L2Normalize { a, cols, norms } => {
            if let Some(da) = slot(nodes, grads, *a) {
                let cols = *cols;
                for (r, ((dr, gr), yr)) in da.chunks_mut(cols).zip(g.chunks(cols)).zip(node.value.chunks(cols)).enumerate() {
                    let dot: T = gr.iter().zip(yr).map(|(&g, &y)| g * y).sum();
                    for j in 0..cols {
                        dr[j] = dr[j] + (gr[j] - yr[j] * dot) / norms[r];
                    }
                }
            }
        }
        &Op::Narrow { a, outer, dim, inner, start, len } => {
            if let Some(da) = slot(nodes, grads, a) {
                for o in 0..outer {
                    let dst = &mut da[(o * dim + start) * inner..(o * dim + start + len) * inner];
                    add_into(dst, g[o * len * inner..(o + 1) * len * inner].iter().copied());
                }
            }
        }
        &Op::Concat { a, b, outer, inner_a, inner_b } => {
            let stride = inner_a + inner_b;
            if let Some(da) = slot(nodes, grads, a) {
                for o in 0..outer {
                    add_into(&mut da[o * inner_a..(o + 1) * inner_a], g[o * stride..o * stride + inner_a].iter().copied());
                }
            }
            if let Some(db) = slot(nodes, grads, b) {
                for o in 0..outer {
                    add_into(
                        &mut db[o * inner_b..(o + 1) * inner_b],
                        g[o * stride + inner_a..(o + 1) * stride].iter().copied(),
                    );
                }
            }
        }
        &Op::Expand { a, n } => {
            if let Some(da) = slot(nodes, grads, a) {
                let len = da.len();
                for r in 0..n {
                    add_into(da, g[r * len..(r + 1) * len].iter().copied());
                }
            }
        }
        Op::Gather { a, indices, rows, cols } => {
            if let Some(da) = slot(nodes, grads, *a) {
                let k = indices.len();
                for r in 0..*rows {
                    for (j, &idx) in indices.iter().enumerate() {
                        da[r * cols + idx] = da[r * cols + idx] + g[r * k + j];
                    }
                }
            }
        }
        Op::Permute { a, src_index } => {
            if let Some(da) = slot(nodes, grads, *a) {
                for (j, &s) in src_index.iter().enumerate() {
                    da[s] = da[s] + g[j];
                }
            }
        }
        Op::Dropout { a, mask } => {
            if let Some(da) = slot(nodes, grads, *a) {
                add_into(da, g.iter().zip(mask).map(|(&g, &m)| g * m));
            }
        }
        Op::Conv2d { x, k, b, n, geom, c_out, cols } => {
            let (geom, c_out, n) = (*geom, *c_out, *n);
            let (patch, ol) = (geom.patch(), geom.out_len());
            if let Some(dk) = slot(nodes, grads, *k) {
                for s in 0..n {
                    gemm(
                        c_out,
                        ol,
                        patch,
                        MatRef::row_major(&g[s * c_out * ol..(s + 1) * c_out * ol], ol, false),
                        MatRef::row_major(&cols[s * patch * ol..(s + 1) * patch * ol], ol, true),
                        T::one(),
                        MatMut::row_major(dk, patch, false),
                    );
                }
            }
            if let Some(db) = slot(nodes, grads, *b) {
                for s in 0..n {
                    for oc in 0..c_out {
                        let row = &g[(s * c_out + oc) * ol..(s * c_out + oc + 1) * ol];
                        db[oc] = db[oc] + row.iter().copied().sum();
                    }
                }
            }
            if nodes[x.0].requires_grad {
                let kv = val(*k);
                let mut dcols = vec![T::zero(); patch * ol];
                let sample = geom.c_in * geom.h * geom.w;
                let dx = slot(nodes, grads, *x).expect("requires grad");
                for s in 0..n {
                    gemm(
                        patch,
                        c_out,
                        ol,
                        MatRef::row_major(kv, patch, true),
                        MatRef::row_major(&g[s * c_out * ol..(s + 1) * c_out * ol], ol, false),
                        T::zero(),
                        MatMut::row_major(&mut dcols, ol, false),
                    );
                    col2im_add(&dcols, geom, &mut dx[s * sample..(s + 1) * sample]);
                }
            }
        }
        Op::MaxPool { x, argmax } => {
            if let Some(dx) = slot(nodes, grads, *x) {
                for (j, &src) in argmax.iter().enumerate() {
                    dx[src] = dx[src] + g[j];
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error::Error;

    fn t(tape: &mut Tape<f64>, shape: &[usize], data: &[f64]) -> Var {
        tape.param(shape, data.to_vec()).unwrap()
    }

    #[test]
    fn identity_matmul() {
        let mut tape = Tape::<f64>::new();
        let i = t(&mut tape, &[2, 2], &[1.0, 0.0, 0.0, 1.0]);
        let m = t(&mut tape, &[2, 2], &[1.0, 2.0, 3.0, 4.0]);
        let c = tape.matmul(i, m).unwrap();
        assert_eq!(tape.value(c), &[1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn projector_matmul() {
        let mut tape = Tape::<f64>::new();
        let p = t(&mut tape, &[2, 2], &[1.0, 0.0, 0.0, 0.0]);
        let v = t(&mut tape, &[2, 1], &[5.0, 7.0]);
        let c = tape.matmul(p, v).unwrap();
        assert_eq!(tape.value(c), &[5.0, 0.0]);
        assert_eq!(tape.shape(c), &[2, 1]);
    }

    #[test]
    fn matmul_shape_mismatch() {
        let mut tape = Tape::<f64>::new();
        let a = t(&mut tape, &[2, 3], &[0.0; 6]);
        let b = t(&mut tape, &[2, 3], &[0.0; 6]);
        assert!(matches!(tape.matmul(a, b), Err(Error::Dimension(_))));
    }

    #[test]
    fn backward_twice_is_error() {
        let mut tape = Tape::<f64>::new();
        let a = t(&mut tape, &[3], &[1.0, 2.0, 3.0]);
        let s = tape.sum(a);
        tape.backward(s).unwrap();
        assert!(matches!(tape.backward(s), Err(Error::State(_))));
    }

    #[test]
    fn shared_inputs_accumulate_once_per_path() {
        // f = sum(a * a) + sum(a) -> df/da = 2a + 1
        let mut tape = Tape::<f64>::new();
        let a = t(&mut tape, &[3], &[1.0, -2.0, 0.5]);
        let sq = tape.mul(a, a).unwrap();
        let s1 = tape.sum(sq);
        let s2 = tape.sum(a);
        let f = tape.add(s1, s2).unwrap();
        tape.backward(f).unwrap();
        assert_eq!(tape.grad(a).unwrap(), &[3.0, -3.0, 2.0]);
    }

    #[test]
    fn constants_get_no_gradient() {
        let mut tape = Tape::<f64>::new();
        let a = t(&mut tape, &[2], &[1.0, 2.0]);
        let c = tape.constant(&[2], vec![3.0, 4.0]).unwrap();
        let m = tape.mul(a, c).unwrap();
        let s = tape.sum(m);
        tape.backward(s).unwrap();
        assert_eq!(tape.grad(a).unwrap(), &[3.0, 4.0]);
        assert!(tape.grad(c).is_none());
    }

    #[test]
    fn conv_identity_and_bias() {
        let mut tape = Tape::<f64>::new();
        let x: Vec<f64> = (0..9).map(|v| v as f64).collect();
        let xv = t(&mut tape, &[1, 3, 3], &x);
        let one = t(&mut tape, &[1, 1, 1, 1], &[1.0]);
        let zero_b = t(&mut tape, &[1], &[0.0]);
        let y = tape.conv2d(xv, one, zero_b).unwrap();
        assert_eq!(tape.value(y), x.as_slice());

        let zero_k = t(&mut tape, &[1, 1, 2, 2], &[0.0; 4]);
        let beta = t(&mut tape, &[1], &[2.5]);
        let y = tape.conv2d(xv, zero_k, beta).unwrap();
        assert_eq!(tape.shape(y), &[1, 2, 2]);
        assert!(tape.value(y).iter().all(|&v| v == 2.5));
    }

    #[test]
    fn conv_kernel_too_large() {
        let mut tape = Tape::<f64>::new();
        let x = t(&mut tape, &[1, 2, 2], &[0.0; 4]);
        let k = t(&mut tape, &[1, 1, 3, 3], &[0.0; 9]);
        let b = t(&mut tape, &[1], &[0.0]);
        assert!(matches!(tape.conv2d(x, k, b), Err(Error::Dimension(_))));
    }

    #[test]
    fn cross_entropy_uniform_and_bad_label() {
        let mut tape = Tape::<f64>::new();
        let l = t(&mut tape, &[2, 4], &[0.0; 8]);
        let loss = tape.softmax_cross_entropy(l, &[0, 3]).unwrap();
        assert!((tape.scalar(loss) - 4f64.ln()).abs() < 1e-12);
        assert!(matches!(tape.softmax_cross_entropy(l, &[0, 4]), Err(Error::Index(_))));
    }

    #[test]
    fn cross_entropy_vanishes_with_margin() {
        let mut prev = f64::INFINITY;
        for margin in [1.0, 5.0, 20.0, 60.0] {
            let mut tape = Tape::<f64>::new();
            let l = t(&mut tape, &[1, 3], &[margin, 0.0, 0.0]);
            let loss = tape.softmax_cross_entropy(l, &[0]).unwrap();
            let v = tape.scalar(loss);
            assert!(v < prev);
            prev = v;
        }
        assert!(prev < 1e-20);
    }

    #[test]
    fn dropout_identity_cases() {
        let mut rng = crate::rng::SeedStream::new(1).rng();
        let mut tape = Tape::<f64>::new();
        let a = t(&mut tape, &[4], &[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(tape.dropout(a, 0.0, true, &mut rng).unwrap(), a);
        assert_eq!(tape.dropout(a, 0.7, false, &mut rng).unwrap(), a);
        assert!(matches!(tape.dropout(a, 1.0, true, &mut rng), Err(Error::Config(_))));
    }

    #[test]
    fn dropout_survivor_fraction() {
        let mut rng = crate::rng::SeedStream::new(3).rng();
        let mut tape = Tape::<f32>::new();
        let a = tape.constant(&[100_000], vec![1.0; 100_000]).unwrap();
        let d = tape.dropout(a, 0.5, true, &mut rng).unwrap();
        let kept = tape.value(d).iter().filter(|&&v| v != 0.0).count() as f64 / 1e5;
        assert!((kept - 0.5).abs() < 0.01, "kept {kept}");
        assert!(tape.value(d).iter().all(|&v| v == 0.0 || v == 2.0));
    }

    #[test]
    fn permute_matches_transpose() {
        let mut tape = Tape::<f64>::new();
        let a = t(&mut tape, &[2, 3], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let p = tape.permute(a, &[1, 0]).unwrap();
        assert_eq!(tape.shape(p), &[3, 2]);
        assert_eq!(tape.value(p), &[1.0, 4.0, 2.0, 5.0, 3.0, 6.0]);
    }

    #[test]
    fn max_pool_picks_window_max() {
        let mut tape = Tape::<f64>::new();
        let x = t(&mut tape, &[1, 1, 2, 4], &[1.0, 5.0, 2.0, 0.0, 3.0, 4.0, 9.0, 1.0]);
        let y = tape.max_pool2d(x, 2).unwrap();
        assert_eq!(tape.value(y), &[5.0, 9.0]);
        let s = tape.sum(y);
        tape.backward(s).unwrap();
        assert_eq!(tape.grad(x).unwrap(), &[0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0]);
    }
}
