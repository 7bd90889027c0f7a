use alloc::vec::Vec;
use core::ops::{Add, Div, Mul, Neg, Sub};

use super::Activation;

use crate::math;

/// Scalar arithmetic shared by plain `f64` evaluation and tape recording.
///
/// Model code (networks, flows, losses) is written once against this trait. With
/// `f64` it evaluates directly; with [`Var`](super::Var) every operation is
/// recorded for the backward pass. Both paths produce bit-identical values.
pub trait Real:
    Copy
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
    + Add<f64, Output = Self>
    + Sub<f64, Output = Self>
    + Mul<f64, Output = Self>
    + Div<f64, Output = Self>
{
    fn value(self) -> f64;

    /// A gradient-free constant living in the same context as `self`.
    fn constant_like(self, c: f64) -> Self;

    fn exp(self) -> Self;
    fn ln(self) -> Self;
    fn tanh(self) -> Self;
    fn softplus(self) -> Self;
    fn relu(self) -> Self;
    fn abs(self) -> Self;

    /// Clamp with zero gradient outside `[lo, hi]`.
    fn clamp(self, lo: f64, hi: f64) -> Self;

    fn square(self) -> Self {
        self * self
    }

    /// Euclidean norm. The gradient at the origin is taken to be zero.
    fn norm(xs: &[Self]) -> Self;

    /// Sum of a non-empty slice.
    fn sum(xs: &[Self]) -> Self;

    /// `Σ aᵢ·bᵢ` over equal-length, non-empty slices.
    fn dot(a: &[Self], b: &[Self]) -> Self;

    /// `Σ wᵢ·xᵢ + bias`.
    fn affine(weights: &[Self], inputs: &[Self], bias: Self) -> Self;

    /// `Σ wᵢ·xᵢ + bias` with constant weights.
    fn affine_frozen(weights: &[f64], inputs: &[Self], bias: f64) -> Self;

    /// One dense layer `act(W·x + b)`, `W` row-major `biases.len() × inputs.len()`.
    fn dense(weights: &[Self], biases: &[Self], inputs: &[Self], act: Activation) -> Vec<Self>;

    /// [`Real::dense`] with constant weights and biases.
    fn dense_frozen(weights: &[f64], biases: &[f64], inputs: &[Self], act: Activation) -> Vec<Self>;
}

// Fused kernels. The tape computes node values with these same functions so both
// evaluation paths agree to the bit.

#[inline]
pub(crate) fn affine_value(n: usize, w: impl Fn(usize) -> f64, x: impl Fn(usize) -> f64, bias: f64) -> f64 {
    let mut acc = 0.0;
    for i in 0..n {
        acc += w(i) * x(i);
    }
    acc + bias
}

#[inline]
pub(crate) fn sum_value(n: usize, x: impl Fn(usize) -> f64) -> f64 {
    let mut acc = 0.0;
    for i in 0..n {
        acc += x(i);
    }
    acc
}

#[inline]
pub(crate) fn clamp_value(x: f64, lo: f64, hi: f64) -> f64 {
    if x < lo {
        lo
    } else if x > hi {
        hi
    } else {
        x
    }
}

impl Real for f64 {
    #[inline]
    fn value(self) -> f64 {
        self
    }

    #[inline]
    fn constant_like(self, c: f64) -> Self {
        c
    }

    #[inline]
    fn exp(self) -> Self {
        math::exp(self)
    }

    #[inline]
    fn ln(self) -> Self {
        math::ln(self)
    }

    #[inline]
    fn tanh(self) -> Self {
        math::tanh(self)
    }

    #[inline]
    fn softplus(self) -> Self {
        math::softplus(self)
    }

    #[inline]
    fn relu(self) -> Self {
        if self > 0.0 {
            self
        } else {
            0.0
        }
    }

    #[inline]
    fn abs(self) -> Self {
        f64::abs(self)
    }

    #[inline]
    fn clamp(self, lo: f64, hi: f64) -> Self {
        clamp_value(self, lo, hi)
    }

    fn norm(xs: &[Self]) -> Self {
        math::sqrt(sum_value(xs.len(), |i| xs[i] * xs[i]))
    }

    fn sum(xs: &[Self]) -> Self {
        assert!(!xs.is_empty(), "sum of an empty slice");
        sum_value(xs.len(), |i| xs[i])
    }

    fn dot(a: &[Self], b: &[Self]) -> Self {
        assert_eq!(a.len(), b.len());
        affine_value(a.len(), |i| a[i], |i| b[i], 0.0)
    }

    fn affine(weights: &[Self], inputs: &[Self], bias: Self) -> Self {
        debug_assert_eq!(weights.len(), inputs.len());
        affine_value(inputs.len(), |i| weights[i], |i| inputs[i], bias)
    }

    fn affine_frozen(weights: &[f64], inputs: &[Self], bias: f64) -> Self {
        Self::affine(weights, inputs, bias)
    }

    fn dense(weights: &[Self], biases: &[Self], inputs: &[Self], act: Activation) -> Vec<Self> {
        Self::dense_frozen(weights, biases, inputs, act)
    }

    fn dense_frozen(weights: &[f64], biases: &[f64], inputs: &[Self], act: Activation) -> Vec<Self> {
        let n = inputs.len();
        debug_assert_eq!(weights.len(), n * biases.len());
        biases
            .iter()
            .enumerate()
            .map(|(o, &b)| {
                let row = &weights[o * n..(o + 1) * n];
                act.eval(affine_value(n, |i| row[i], |i| inputs[i], b)).0
            })
            .collect()
    }
}
