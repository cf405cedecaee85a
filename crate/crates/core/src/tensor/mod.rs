//! Dense row-major tensors with a reverse-mode autodiff tape.
//!
//! Training runs in `f32`; every differentiable operation is also available
//! over `f64` so gradient checks can run against finite differences without
//! being swamped by rounding.

pub mod gradcheck;
mod kernels;
pub mod optim;
mod tape;

use std::fmt::Debug;
use std::iter::Sum;

use serde::{Deserialize, Serialize};

use crate::error::{bail, Result};

pub use optim::{OptimizerKind, OptimizerState};
pub use tape::{Tape, Var};

/// Floating point element type of a tape.
pub trait Scalar:
    num_traits::Float + Sum + Default + Debug + Send + Sync + 'static
{
    /// `c = alpha * a * b + beta * c` on strided row/column layouts.
    ///
    /// # Safety
    /// Every strided index touched for the given `m`, `k`, `n` must lie inside
    /// the corresponding buffer. Callers go through [`kernels::gemm`], which
    /// checks this.
    #[allow(clippy::too_many_arguments)]
    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: *const Self,
        rsa: isize,
        csa: isize,
        b: *const Self,
        rsb: isize,
        csb: isize,
        beta: Self,
        c: *mut Self,
        rsc: isize,
        csc: isize,
    );

    fn from_f64(x: f64) -> Self {
        <Self as num_traits::NumCast>::from(x).expect("finite float conversion")
    }

    fn to_f64(self) -> f64 {
        <f64 as num_traits::NumCast>::from(self).expect("finite float conversion")
    }
}

impl Scalar for f32 {
    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: f32,
        a: *const f32,
        rsa: isize,
        csa: isize,
        b: *const f32,
        rsb: isize,
        csb: isize,
        beta: f32,
        c: *mut f32,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::sgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc)
    }
}

impl Scalar for f64 {
    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: f64,
        a: *const f64,
        rsa: isize,
        csa: isize,
        b: *const f64,
        rsb: isize,
        csb: isize,
        beta: f64,
        c: *mut f64,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::dgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc)
    }
}

/// Elementwise nonlinearities used by base models and the encoder.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Tanh,
    Relu,
    Sigmoid,
    Gelu,
}

impl Activation {
    pub const ALL: [Activation; 4] = [
        Activation::Tanh,
        Activation::Relu,
        Activation::Sigmoid,
        Activation::Gelu,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Activation::Tanh => "tanh",
            Activation::Relu => "relu",
            Activation::Sigmoid => "sigmoid",
            Activation::Gelu => "gelu",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "tanh" => Ok(Activation::Tanh),
            "relu" => Ok(Activation::Relu),
            "sigmoid" => Ok(Activation::Sigmoid),
            "gelu" => Ok(Activation::Gelu),
            other => bail!(Config, "unknown activation '{other}'"),
        }
    }

    pub fn apply<T: Scalar>(&self, x: T) -> T {
        match self {
            Activation::Tanh => x.tanh(),
            Activation::Relu => x.max(T::zero()),
            Activation::Sigmoid => T::one() / (T::one() + (-x).exp()),
            Activation::Gelu => {
                let (c, a) = gelu_consts::<T>();
                // 0.5 (1 + tanh u) == sigmoid(2u)
                let two_u = T::from_f64(2.0) * c * (x + a * x * x * x);
                x / (T::one() + (-two_u).exp())
            }
        }
    }

    /// Derivative given the pre-activation `x` and the output `y`.
    pub(crate) fn derivative<T: Scalar>(&self, x: T, y: T) -> T {
        match self {
            Activation::Tanh => T::one() - y * y,
            Activation::Relu => {
                if x > T::zero() {
                    T::one()
                } else {
                    T::zero()
                }
            }
            Activation::Sigmoid => y * (T::one() - y),
            Activation::Gelu => {
                let (c, a) = gelu_consts::<T>();
                let two = T::from_f64(2.0);
                let s = T::one() / (T::one() + (-two * c * (x + a * x * x * x)).exp());
                s + x * two * s * (T::one() - s) * c * (T::one() + T::from_f64(3.0) * a * x * x)
            }
        }
    }
}

// tanh approximation of GELU.
fn gelu_consts<T: Scalar>() -> (T, T) {
    (
        T::from_f64((2.0 / std::f64::consts::PI).sqrt()),
        T::from_f64(0.044715),
    )
}

/// An owned dense tensor, used for parameters and data outside a tape.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T = f32> {
    shape: Vec<usize>,
    data: Vec<T>,
    pub requires_grad: bool,
    pub grad: Option<Vec<T>>,
}

impl<T: Scalar> Tensor<T> {
    pub fn new(shape: &[usize], data: Vec<T>) -> Result<Self> {
        check_shape(shape, data.len())?;
        Ok(Self {
            shape: shape.to_vec(),
            data,
            requires_grad: false,
            grad: None,
        })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![T::zero(); n],
            requires_grad: false,
            grad: None,
        }
    }

    pub fn filled(shape: &[usize], value: T) -> Self {
        let mut t = Self::zeros(shape);
        t.data.iter_mut().for_each(|x| *x = value);
        t
    }

    /// A trainable parameter.
    pub fn param(shape: &[usize], data: Vec<T>) -> Result<Self> {
        let mut t = Self::new(shape, data)?;
        t.requires_grad = true;
        Ok(t)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn reshape(mut self, shape: &[usize]) -> Result<Self> {
        check_shape(shape, self.data.len())?;
        self.shape = shape.to_vec();
        if let Some(g) = &self.grad {
            debug_assert_eq!(g.len(), self.data.len());
        }
        Ok(self)
    }

    pub fn zero_grad(&mut self) {
        self.grad = None;
    }

    /// Converts element type, dropping any gradient.
    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&x| U::from_f64(x.to_f64())).collect(),
            requires_grad: self.requires_grad,
            grad: None,
        }
    }
}

pub(crate) fn check_shape(shape: &[usize], len: usize) -> Result<()> {
    if shape.is_empty() || shape.contains(&0) {
        bail!(Dimension, "shape {shape:?} must be non-empty with positive extents");
    }
    let n: usize = shape.iter().product();
    if n != len {
        bail!(Dimension, "shape {shape:?} holds {n} elements but buffer has {len}");
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shape_must_match_buffer() {
        assert!(Tensor::<f32>::new(&[2, 3], vec![0.0; 6]).is_ok());
        assert!(Tensor::<f32>::new(&[2, 3], vec![0.0; 5]).is_err());
        assert!(Tensor::<f32>::new(&[0], vec![]).is_err());
    }

    #[test]
    fn activation_values() {
        assert_eq!(Activation::Tanh.apply(0.0f64), 0.0);
        assert_eq!(Activation::Relu.apply(-1.0f64), 0.0);
        assert_eq!(Activation::Sigmoid.apply(0.0f64), 0.5);
        assert_eq!(Activation::Gelu.apply(0.0f64), 0.0);
    }

    #[test]
    fn gelu_derivative_matches_central_difference() {
        let h = 1e-4;
        for &x in &[-2.0f64, -0.5, 0.0, 0.5, 2.0] {
            let y = Activation::Gelu.apply(x);
            let analytic = Activation::Gelu.derivative(x, y);
            let numeric = (Activation::Gelu.apply(x + h) - Activation::Gelu.apply(x - h)) / (2.0 * h);
            let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6);
            assert!(rel < 1e-4, "x={x} analytic={analytic} numeric={numeric}");
        }
    }
}
