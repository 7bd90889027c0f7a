//! Radial and planar normalizing flows.
//!
//! A chain stores the raw (unconstrained) parameters of all its layers in one
//! flat array. Constrained values are derived on every evaluation through
//! softplus reparameterizations, so any raw value yields an invertible layer:
//!
//! * radial: `α = softplus(a)`, `β = −α + softplus(b)`, hence `β ≥ −α`;
//! * planar: `û = u + (m(w·u) − w·u)·w/‖w‖²` with `m(x) = −1 + softplus(x)`,
//!   hence `w·û ≥ −1`.

use alloc::vec::Vec;

use rand::Rng;

use crate::diff::Real;
use crate::math;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FlowFamily {
    Radial,
    Planar,
}

impl FlowFamily {
    /// Raw parameters per layer in dimension `dim`.
    pub fn param_count(self, dim: usize) -> usize {
        match self {
            // center, raw α, raw β
            FlowFamily::Radial => dim + 2,
            // u, w, b
            FlowFamily::Planar => 2 * dim + 1,
        }
    }

    pub fn tag(self) -> &'static str {
        match self {
            FlowFamily::Radial => "radial",
            FlowFamily::Planar => "planar",
        }
    }

    pub fn from_tag(tag: &str) -> Option<Self> {
        match tag {
            "radial" => Some(FlowFamily::Radial),
            "planar" => Some(FlowFamily::Planar),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum FlowError {
    #[error("flow dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("flow parameter count mismatch: expected {expected}, found {found}")]
    ParamCountMismatch { expected: usize, found: usize },
}

/// Owned description of one layer: family, dimension and raw parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowLayer {
    pub family: FlowFamily,
    pub dim: usize,
    pub raw: Vec<f64>,
}

impl FlowLayer {
    pub fn radial(center: &[f64], raw_alpha: f64, raw_beta: f64) -> Self {
        let mut raw = center.to_vec();
        raw.push(raw_alpha);
        raw.push(raw_beta);
        Self { family: FlowFamily::Radial, dim: center.len(), raw }
    }

    pub fn planar(u: &[f64], w: &[f64], b: f64) -> Self {
        assert_eq!(u.len(), w.len(), "planar u and w must share a dimension");
        let mut raw = u.to_vec();
        raw.extend_from_slice(w);
        raw.push(b);
        Self { family: FlowFamily::Planar, dim: u.len(), raw }
    }
}

/// Constrained radial coefficients `(α, β)` from raw values.
pub fn radial_coefficients<T: Real>(raw_alpha: T, raw_beta: T) -> (T, T) {
    let alpha = raw_alpha.softplus();
    let beta = raw_beta.softplus() - alpha;
    (alpha, beta)
}

/// Constrained planar direction `û`. A zero `w` leaves `u` unchanged.
pub fn planar_u_hat<T: Real>(u: &[T], w: &[T]) -> Vec<T> {
    let w_sq = T::dot(w, w);
    if w_sq.value() == 0.0 {
        return u.to_vec();
    }
    let wu = T::dot(w, u);
    let m = wu.softplus() - 1.0;
    let coef = (m - wu) / w_sq;
    u.iter().zip(w).map(|(&ui, &wi)| ui + coef * wi).collect()
}

/// `f(z) = z + β/(α + r)·(z − z₀)`, `r = ‖z − z₀‖`, with its log-determinant
/// `(d−1)·ln(1 + βh) + ln(1 + βh + βh′r)`, `h = 1/(α+r)`, `h′ = −h²`.
///
/// `raw` is `[z₀ (d), raw α, raw β]`.
pub fn radial_apply<T: Real>(raw: &[T], z: &[T]) -> (Vec<T>, T) {
    let dim = z.len();
    debug_assert_eq!(raw.len(), dim + 2);
    let (alpha, beta) = radial_coefficients(raw[dim], raw[dim + 1]);
    let diff: Vec<T> = z.iter().zip(&raw[..dim]).map(|(&zi, &ci)| zi - ci).collect();
    let r = T::norm(&diff);
    let denom = alpha + r;
    let bh = beta / denom;
    let out = z.iter().zip(&diff).map(|(&zi, &di)| zi + bh * di).collect();
    let one_plus_bh = bh + 1.0;
    let radial_term = (one_plus_bh - bh * (r / denom)).ln();
    let log_det = if dim > 1 {
        one_plus_bh.ln() * (dim - 1) as f64 + radial_term
    } else {
        radial_term
    };
    (out, log_det)
}

/// Inverse of [`radial_apply`] on plain values.
///
/// The layer keeps directions around `z₀` and maps radius `r` to
/// `r′ = r·(1 + β/(α + r))`; for `β ≥ −α` this is monotone and `r` is the
/// non-negative root of `r² + (α + β − r′)·r − α·r′ = 0`.
pub fn radial_inverse(raw: &[f64], y: &[f64]) -> Vec<f64> {
    let dim = y.len();
    debug_assert_eq!(raw.len(), dim + 2);
    let (alpha, beta) = radial_coefficients(raw[dim], raw[dim + 1]);
    let center = &raw[..dim];
    let diff: Vec<f64> = y.iter().zip(center).map(|(yi, ci)| yi - ci).collect();
    let r_out = math::sqrt(diff.iter().map(|d| d * d).sum());
    if r_out == 0.0 {
        return center.to_vec();
    }
    let b = alpha + beta - r_out;
    let disc = math::sqrt(b * b + 4.0 * alpha * r_out);
    // pick the cancellation-free form of the positive root
    let r = if b > 0.0 { 2.0 * alpha * r_out / (b + disc) } else { (disc - b) / 2.0 };
    let scale = r / r_out;
    center.iter().zip(&diff).map(|(ci, di)| ci + scale * di).collect()
}

/// `f(z) = z + û·tanh(w·z + b)` with `log|1 + (1 − tanh²)·(w·û)|`.
///
/// `raw` is `[u (d), w (d), b]`.
pub fn planar_apply<T: Real>(raw: &[T], z: &[T]) -> (Vec<T>, T) {
    let dim = z.len();
    debug_assert_eq!(raw.len(), 2 * dim + 1);
    let (u, rest) = raw.split_at(dim);
    let (w, b) = rest.split_at(dim);
    let u_hat = planar_u_hat(u, w);
    planar_apply_constrained(&u_hat, w, b[0], z)
}

pub(crate) fn planar_apply_constrained<T: Real>(u_hat: &[T], w: &[T], b: T, z: &[T]) -> (Vec<T>, T) {
    let t = (T::dot(w, z) + b).tanh();
    let out = z.iter().zip(u_hat).map(|(&zi, &ui)| zi + ui * t).collect();
    let slope = -(t * t) + 1.0;
    let log_det = (slope * T::dot(w, u_hat) + 1.0).abs().ln();
    (out, log_det)
}

fn apply_layer<T: Real>(family: FlowFamily, raw: &[T], z: &[T]) -> (Vec<T>, T) {
    match family {
        FlowFamily::Radial => radial_apply(raw, z),
        FlowFamily::Planar => planar_apply(raw, z),
    }
}

/// Ordered composition `f_N ∘ … ∘ f_1` of same-dimension layers.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowChain {
    dim: usize,
    families: Vec<FlowFamily>,
    params: Vec<f64>,
}

impl FlowChain {
    /// The empty chain (identity, zero log-determinant).
    pub fn empty(dim: usize) -> Self {
        Self { dim, families: Vec::new(), params: Vec::new() }
    }

    pub fn from_layers(dim: usize, layers: &[FlowLayer]) -> Result<Self, FlowError> {
        let mut chain = Self::empty(dim);
        for layer in layers {
            chain.push(layer)?;
        }
        Ok(chain)
    }

    /// `count` layers starting near the identity.
    ///
    /// Radial layers start exactly at the identity: `z₀ = 0`, raw α = 0 and
    /// raw β = 0, which gives `β = softplus(0) − softplus(0) = 0`. Planar layers
    /// take `u = 0`, `b = 0` and a random `w` of norm one, which is a contraction
    /// by `1 − ln 2` along `w` near the hyperplane `w·z = 0`.
    pub fn initial<R: Rng + ?Sized>(dim: usize, family: FlowFamily, count: usize, rng: &mut R) -> Self {
        let mut chain = Self::empty(dim);
        for _ in 0..count {
            let layer = match family {
                FlowFamily::Radial => FlowLayer::radial(&alloc::vec![0.0; dim], 0.0, 0.0),
                FlowFamily::Planar => {
                    let mut w: Vec<f64> = (0..dim).map(|_| crate::rng::normal(rng)).collect();
                    let n = f64::norm(&w).max(1e-12);
                    w.iter_mut().for_each(|x| *x /= n);
                    FlowLayer::planar(&alloc::vec![0.0; dim], &w, 0.0)
                }
            };
            chain.push(&layer).expect("dimensions agree by construction");
        }
        chain
    }

    pub fn push(&mut self, layer: &FlowLayer) -> Result<(), FlowError> {
        if layer.dim != self.dim {
            return Err(FlowError::DimensionMismatch { expected: self.dim, found: layer.dim });
        }
        let expected = layer.family.param_count(layer.dim);
        if layer.raw.len() != expected {
            return Err(FlowError::ParamCountMismatch { expected, found: layer.raw.len() });
        }
        self.families.push(layer.family);
        self.params.extend_from_slice(&layer.raw);
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.families.len()
    }

    pub fn is_empty(&self) -> bool {
        self.families.is_empty()
    }

    pub fn families(&self) -> &[FlowFamily] {
        &self.families
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    /// Owned per-layer descriptions.
    pub fn layers(&self) -> Vec<FlowLayer> {
        self.spans()
            .map(|(family, range)| FlowLayer { family, dim: self.dim, raw: self.params[range].to_vec() })
            .collect()
    }

    /// Layer `i`'s slice range in [`FlowChain::params`].
    pub fn spans(&self) -> impl Iterator<Item = (FlowFamily, core::ops::Range<usize>)> + '_ {
        let dim = self.dim;
        self.families.iter().scan(0usize, move |offset, &family| {
            let start = *offset;
            *offset += family.param_count(dim);
            Some((family, start..*offset))
        })
    }

    /// Apply every layer in order using `params` (laid out like
    /// [`FlowChain::params`]); returns the output and the summed log-determinant.
    /// An empty chain returns `z` and `None`.
    pub fn apply<T: Real>(&self, params: &[T], z: &[T]) -> Result<(Vec<T>, Option<T>), FlowError> {
        if z.len() != self.dim {
            return Err(FlowError::DimensionMismatch { expected: self.dim, found: z.len() });
        }
        if params.len() != self.params.len() {
            return Err(FlowError::ParamCountMismatch { expected: self.params.len(), found: params.len() });
        }
        let mut current = z.to_vec();
        let mut total: Option<T> = None;
        for (family, range) in self.spans() {
            let (next, log_det) = apply_layer(family, &params[range], &current);
            total = Some(match total {
                Some(acc) => acc + log_det,
                None => log_det,
            });
            current = next;
        }
        Ok((current, total))
    }

    /// Apply with the stored parameters, `f64` only. The log-determinant of an
    /// empty chain is `0`.
    pub fn eval(&self, z: &[f64]) -> Result<(Vec<f64>, f64), FlowError> {
        let (out, log_det) = self.apply(&self.params, z)?;
        Ok((out, log_det.unwrap_or(0.0)))
    }
}
