//! Post-hoc diagnostics of policy shape: standardized KL against a Gaussian,
//! gap-statistic mode counting, sample moments, and terminal-state histograms.

use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use crate::math;
use crate::policy::{standard_normal_log_density, NfPolicy, PolicyError};

/// Variance below which a sample is treated as degenerate.
pub const MIN_VARIANCE: f64 = 1e-12;
pub const KMEANS_RESTARTS: usize = 10;
pub const KMEANS_MAX_ITERS: usize = 300;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum AnalysisError {
    #[error("degenerate sample: variance of {what} below {MIN_VARIANCE}")]
    Degenerate { what: &'static str },
    #[error("{have} samples given, at least {need} needed")]
    TooFewSamples { need: usize, have: usize },
    #[error("sample matrix entries must be finite")]
    NonFinite,
    #[error("sample matrix shape mismatch: {len} values for {cols} columns")]
    Shape { len: usize, cols: usize },
    #[error(transparent)]
    Policy(#[from] PolicyError),
}

/// `n × d` action samples in row-major order, drawn at one state.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleMatrix {
    cols: usize,
    data: Vec<f64>,
    /// Identifier of the state the samples come from.
    pub state_id: usize,
}

impl SampleMatrix {
    pub fn new(cols: usize, data: Vec<f64>, state_id: usize) -> Result<Self, AnalysisError> {
        if cols == 0 || !data.len().is_multiple_of(cols) {
            return Err(AnalysisError::Shape { len: data.len(), cols });
        }
        if data.len() / cols < 2 {
            return Err(AnalysisError::TooFewSamples { need: 2, have: data.len() / cols });
        }
        if data.iter().any(|x| !x.is_finite()) {
            return Err(AnalysisError::NonFinite);
        }
        Ok(Self { cols, data, state_id })
    }

    pub fn from_rows(rows: &[Vec<f64>], state_id: usize) -> Result<Self, AnalysisError> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            if r.len() != cols {
                return Err(AnalysisError::Shape { len: r.len(), cols });
            }
            data.extend_from_slice(r);
        }
        Self::new(cols, data, state_id)
    }

    pub fn rows(&self) -> usize {
        self.data.len() / self.cols
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    fn column_mean_std(&self) -> Result<(Vec<f64>, Vec<f64>), AnalysisError> {
        let n = self.rows() as f64;
        let mut mean = vec![0.0; self.cols];
        for i in 0..self.rows() {
            for (m, x) in mean.iter_mut().zip(self.row(i)) {
                *m += x;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; self.cols];
        for i in 0..self.rows() {
            for ((v, x), m) in var.iter_mut().zip(self.row(i)).zip(&mean) {
                *v += (x - m) * (x - m);
            }
        }
        let mut std = Vec::with_capacity(self.cols);
        for v in var {
            let v = v / n;
            if !(v >= MIN_VARIANCE) {
                return Err(AnalysisError::Degenerate { what: "action component" });
            }
            std.push(math::sqrt(v));
        }
        Ok((mean, std))
    }
}

/// Monte-Carlo estimate with its standard error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Estimate {
    pub value: f64,
    pub std_error: f64,
}

/// Standardized KL of one sample set with recorded log-densities.
///
/// Each dimension is shifted to zero mean and scaled to unit variance; the
/// density of the standardized sample is `log π(a) + Σ log s_j`. The result
/// is the sample mean of `log π̃(ã) − log N(ã; 0, I)`.
pub fn shape_kl_samples(samples: &SampleMatrix, log_probs: &[f64]) -> Result<Estimate, AnalysisError> {
    if log_probs.len() != samples.rows() {
        return Err(AnalysisError::Shape { len: log_probs.len(), cols: samples.rows() });
    }
    if log_probs.iter().any(|x| !x.is_finite()) {
        return Err(AnalysisError::NonFinite);
    }
    let (mean, std) = samples.column_mean_std()?;
    let log_jacobian: f64 = std.iter().map(|s| math::ln(*s)).sum();
    let mut standardized = vec![0.0; samples.cols()];
    let terms: Vec<f64> = (0..samples.rows())
        .map(|i| {
            for (j, z) in standardized.iter_mut().enumerate() {
                *z = (samples.row(i)[j] - mean[j]) / std[j];
            }
            log_probs[i] + log_jacobian - standard_normal_log_density(&standardized)
        })
        .collect();
    Ok(mean_with_error(&terms))
}

fn mean_with_error(xs: &[f64]) -> Estimate {
    let n = xs.len() as f64;
    let value = xs.iter().sum::<f64>() / n;
    let var = if xs.len() > 1 { xs.iter().map(|x| (x - value) * (x - value)).sum::<f64>() / (n - 1.0) } else { 0.0 };
    Estimate { value, std_error: math::sqrt(var / n) }
}

/// Standardized KL between the policy and a Gaussian, averaged over `states`.
///
/// The standard error combines the per-state errors as the error of their mean.
pub fn shape_kl<R: Rng + ?Sized>(
    policy: &NfPolicy,
    states: &[Vec<f64>],
    n_actions: usize,
    rng: &mut R,
) -> Result<Estimate, AnalysisError> {
    if n_actions < 50 {
        return Err(AnalysisError::TooFewSamples { need: 50, have: n_actions });
    }
    if states.is_empty() {
        return Err(AnalysisError::TooFewSamples { need: 1, have: 0 });
    }
    let mut total = 0.0;
    let mut var = 0.0;
    for (id, state) in states.iter().enumerate() {
        let (samples, log_probs) = draw_actions(policy, state, n_actions, id, rng)?;
        let e = shape_kl_samples(&samples, &log_probs)?;
        total += e.value;
        var += e.std_error * e.std_error;
    }
    let k = states.len() as f64;
    Ok(Estimate { value: total / k, std_error: math::sqrt(var) / k })
}

/// `n` policy samples at `state` with their log-densities.
pub fn draw_actions<R: Rng + ?Sized>(
    policy: &NfPolicy,
    state: &[f64],
    n: usize,
    state_id: usize,
    rng: &mut R,
) -> Result<(SampleMatrix, Vec<f64>), AnalysisError> {
    let mut data = Vec::with_capacity(n * policy.action_dim());
    let mut log_probs = Vec::with_capacity(n);
    for _ in 0..n {
        let s = policy.sample(state, rng)?;
        data.extend_from_slice(&s.action);
        log_probs.push(s.log_prob);
    }
    Ok((SampleMatrix::new(policy.action_dim(), data, state_id)?, log_probs))
}

/// Sample skewness and excess kurtosis with biased moment estimators.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Moments {
    pub skewness: f64,
    pub excess_kurtosis: f64,
}

pub fn moments(xs: &[f64]) -> Result<Moments, AnalysisError> {
    if xs.len() < 4 {
        return Err(AnalysisError::TooFewSamples { need: 4, have: xs.len() });
    }
    if xs.iter().any(|x| !x.is_finite()) {
        return Err(AnalysisError::NonFinite);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let (mut m2, mut m3, mut m4) = (0.0, 0.0, 0.0);
    for x in xs {
        let d = x - mean;
        let d2 = d * d;
        m2 += d2;
        m3 += d2 * d;
        m4 += d2 * d2;
    }
    let (m2, m3, m4) = (m2 / n, m3 / n, m4 / n);
    if !(m2 >= MIN_VARIANCE) {
        return Err(AnalysisError::Degenerate { what: "sample" });
    }
    Ok(Moments { skewness: m3 / (m2 * math::sqrt(m2)), excess_kurtosis: m4 / (m2 * m2) - 3.0 })
}

/// Result of a k-means fit.
#[derive(Debug, Clone, PartialEq)]
pub struct Clustering {
    pub centers: Vec<Vec<f64>>,
    pub labels: Vec<usize>,
    /// Within-cluster sum of squared distances to the centers.
    pub dispersion: f64,
    /// Every restart converged within the iteration limit.
    pub converged: bool,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn kmeans_once<R: Rng + ?Sized>(x: &SampleMatrix, k: usize, rng: &mut R) -> Clustering {
    let n = x.rows();
    // k-means++ seeding
    let mut centers: Vec<Vec<f64>> = vec![x.row(rng.random_range(0..n)).to_vec()];
    let mut nearest: Vec<f64> = (0..n).map(|i| sq_dist(x.row(i), &centers[0])).collect();
    while centers.len() < k {
        let total: f64 = nearest.iter().sum();
        let pick = if total > 0.0 {
            let mut u = rng.random::<f64>() * total;
            let mut pick = n - 1;
            for (i, d) in nearest.iter().enumerate() {
                if u < *d {
                    pick = i;
                    break;
                }
                u -= d;
            }
            pick
        } else {
            rng.random_range(0..n)
        };
        let c = x.row(pick).to_vec();
        for (i, d) in nearest.iter_mut().enumerate() {
            *d = d.min(sq_dist(x.row(i), &c));
        }
        centers.push(c);
    }

    let mut labels = vec![usize::MAX; n];
    let mut converged = false;
    for _ in 0..KMEANS_MAX_ITERS {
        let mut changed = false;
        for (i, label) in labels.iter_mut().enumerate() {
            let best = (0..k)
                .min_by(|&a, &b| sq_dist(x.row(i), &centers[a]).total_cmp(&sq_dist(x.row(i), &centers[b])))
                .expect("k ≥ 1");
            if *label != best {
                *label = best;
                changed = true;
            }
        }
        if !changed {
            converged = true;
            break;
        }
        let mut sums = vec![vec![0.0; x.cols()]; k];
        let mut counts = vec![0usize; k];
        for (i, &l) in labels.iter().enumerate() {
            counts[l] += 1;
            for (s, v) in sums[l].iter_mut().zip(x.row(i)) {
                *s += v;
            }
        }
        for c in 0..k {
            // An emptied cluster keeps its previous center.
            if counts[c] > 0 {
                for (dst, s) in centers[c].iter_mut().zip(&sums[c]) {
                    *dst = s / counts[c] as f64;
                }
            }
        }
    }
    let dispersion = labels.iter().enumerate().map(|(i, &l)| sq_dist(x.row(i), &centers[l])).sum();
    Clustering { centers, labels, dispersion, converged }
}

/// Best of [`KMEANS_RESTARTS`] k-means++ runs by within-cluster dispersion.
pub fn kmeans<R: Rng + ?Sized>(x: &SampleMatrix, k: usize, rng: &mut R) -> Result<Clustering, AnalysisError> {
    if k == 0 || x.rows() < k {
        return Err(AnalysisError::TooFewSamples { need: k.max(1), have: x.rows() });
    }
    let mut best: Option<Clustering> = None;
    let mut all_converged = true;
    for _ in 0..KMEANS_RESTARTS {
        let c = kmeans_once(x, k, rng);
        all_converged &= c.converged;
        if best.as_ref().is_none_or(|b| c.dispersion < b.dispersion) {
            best = Some(c);
        }
    }
    let mut best = best.expect("at least one restart");
    best.converged = all_converged;
    Ok(best)
}

/// Gap values for `k = 1..=k_max`.
#[derive(Debug, Clone, PartialEq)]
pub struct GapStatistic {
    /// `gap[k−1] = E_ref[log W_k] − log W_k`.
    pub gaps: Vec<f64>,
    /// `s_k = sd_ref(log W_k)·√(1 + 1/B)`.
    pub std_errors: Vec<f64>,
    /// Every k-means fit converged; otherwise best-so-far fits were used.
    pub converged: bool,
}

impl GapStatistic {
    /// Smallest `k` with `gap(k) ≥ gap(k+1) − s_{k+1}`; `k_max` if none.
    pub fn select_k(&self) -> usize {
        for k in 1..self.gaps.len() {
            if self.gaps[k - 1] >= self.gaps[k] - self.std_errors[k] {
                return k;
            }
        }
        self.gaps.len()
    }

    /// `argmax_k gap(k)`, the first on ties.
    pub fn argmax_k(&self) -> usize {
        let mut best = 0;
        for (i, g) in self.gaps.iter().enumerate() {
            if *g > self.gaps[best] {
                best = i;
            }
        }
        best + 1
    }
}

/// Gap statistic against uniform reference sets over the sample's bounding box.
pub fn gap_statistic<R: Rng + ?Sized>(
    x: &SampleMatrix,
    k_max: usize,
    n_refs: usize,
    rng: &mut R,
) -> Result<GapStatistic, AnalysisError> {
    if k_max == 0 || x.rows() < 2 * k_max {
        return Err(AnalysisError::TooFewSamples { need: 2 * k_max.max(1), have: x.rows() });
    }
    if n_refs == 0 {
        return Err(AnalysisError::TooFewSamples { need: 1, have: 0 });
    }
    let d = x.cols();
    let mut lo = vec![f64::INFINITY; d];
    let mut hi = vec![f64::NEG_INFINITY; d];
    for i in 0..x.rows() {
        for (j, v) in x.row(i).iter().enumerate() {
            lo[j] = lo[j].min(*v);
            hi[j] = hi[j].max(*v);
        }
    }
    let mut converged = true;
    let mut log_w = Vec::with_capacity(k_max);
    for k in 1..=k_max {
        let c = kmeans(x, k, rng)?;
        converged &= c.converged;
        log_w.push(safe_ln(c.dispersion));
    }
    // ref_log_w[r][k−1]
    let mut ref_log_w = Vec::with_capacity(n_refs);
    for _ in 0..n_refs {
        let data: Vec<f64> = (0..x.rows() * d)
            .map(|i| {
                let j = i % d;
                if hi[j] > lo[j] {
                    rng.random_range(lo[j]..hi[j])
                } else {
                    lo[j]
                }
            })
            .collect();
        let reference = SampleMatrix::new(d, data, x.state_id)?;
        let mut row = Vec::with_capacity(k_max);
        for k in 1..=k_max {
            let c = kmeans(&reference, k, rng)?;
            converged &= c.converged;
            row.push(safe_ln(c.dispersion));
        }
        ref_log_w.push(row);
    }
    let b = n_refs as f64;
    let mut gaps = Vec::with_capacity(k_max);
    let mut std_errors = Vec::with_capacity(k_max);
    for k in 0..k_max {
        let mean = ref_log_w.iter().map(|r| r[k]).sum::<f64>() / b;
        let var = ref_log_w.iter().map(|r| (r[k] - mean) * (r[k] - mean)).sum::<f64>() / b;
        gaps.push(mean - log_w[k]);
        std_errors.push(math::sqrt(var) * math::sqrt(1.0 + 1.0 / b));
    }
    Ok(GapStatistic { gaps, std_errors, converged })
}

/// `ln` that maps a zero dispersion (every point on a center) to a large
/// finite negative value instead of −∞.
fn safe_ln(w: f64) -> f64 {
    math::ln(w.max(f64::MIN_POSITIVE))
}

/// Rectangular grid of equal cells.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Grid {
    pub x_min: f64,
    pub x_max: f64,
    pub y_min: f64,
    pub y_max: f64,
    pub nx: usize,
    pub ny: usize,
}

impl Grid {
    pub fn square(half_width: f64, cells: usize) -> Self {
        Self { x_min: -half_width, x_max: half_width, y_min: -half_width, y_max: half_width, nx: cells, ny: cells }
    }

    /// Cell `(ix, iy)` of `p`, clamped onto the boundary cells.
    pub fn cell(&self, p: [f64; 2]) -> (usize, usize) {
        let idx = |v: f64, lo: f64, hi: f64, n: usize| -> usize {
            let t = (v - lo) / (hi - lo) * n as f64;
            if !(t > 0.0) {
                0
            } else if t >= n as f64 {
                n - 1
            } else {
                t as usize
            }
        };
        (idx(p[0], self.x_min, self.x_max, self.nx), idx(p[1], self.y_min, self.y_max, self.ny))
    }

    /// Center of cell `(ix, iy)`.
    pub fn center(&self, ix: usize, iy: usize) -> [f64; 2] {
        let wx = (self.x_max - self.x_min) / self.nx as f64;
        let wy = (self.y_max - self.y_min) / self.ny as f64;
        [self.x_min + (ix as f64 + 0.5) * wx, self.y_min + (iy as f64 + 0.5) * wy]
    }
}

/// Normalized occupancy counts, row-major with `y` as the row index.
#[derive(Debug, Clone, PartialEq)]
pub struct Histogram {
    pub grid: Grid,
    pub mass: Vec<f64>,
}

impl Histogram {
    pub fn at(&self, ix: usize, iy: usize) -> f64 {
        self.mass[iy * self.grid.nx + ix]
    }
}

pub fn terminal_histogram(positions: &[[f64; 2]], grid: Grid) -> Result<Histogram, AnalysisError> {
    if positions.is_empty() {
        return Err(AnalysisError::TooFewSamples { need: 1, have: 0 });
    }
    if grid.nx == 0 || grid.ny == 0 || !(grid.x_max > grid.x_min) || !(grid.y_max > grid.y_min) {
        return Err(AnalysisError::Degenerate { what: "grid extent" });
    }
    let mut mass = vec![0.0; grid.nx * grid.ny];
    let w = 1.0 / positions.len() as f64;
    for p in positions {
        let (ix, iy) = grid.cell(*p);
        mass[iy * grid.nx + ix] += w;
    }
    Ok(Histogram { grid, mass })
}

/// Fraction of `positions` within `radius` of `center`.
pub fn fraction_within(positions: &[[f64; 2]], center: [f64; 2], radius: f64) -> f64 {
    if positions.is_empty() {
        return 0.0;
    }
    let r2 = radius * radius;
    let hits = positions.iter().filter(|p| sq_dist(&p[..], &center) <= r2).count();
    hits as f64 / positions.len() as f64
}
