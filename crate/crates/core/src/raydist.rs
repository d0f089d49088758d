//! Piecewise-constant ray termination distributions.
//!
//! Rendering weights are normalized into bin probabilities over bins whose
//! edges are the midpoints between neighbouring samples (the outer bins are
//! closed off at `near`/`far`). The resulting CDF is piecewise linear, so its
//! inverse is too, and samples drawn at fixed quantiles are differentiable
//! functions of the bin probabilities.

use crate::error::check_len;
use crate::{Error, Result};
use rand::Rng;

/// Default threshold below which a ray counts as carrying no mass.
pub const EMPTY_EPSILON: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct NormalizedWeights {
    pub probs: Vec<f64>,
    /// Set when `Σw < ε`; `probs` is then uniform.
    pub empty: bool,
    /// `Σw` before normalization.
    pub total: f64,
}

/// `ŵ_i = w_i / Σ_j w_j`, falling back to the uniform distribution (and the
/// empty flag) when the total is below `epsilon`.
pub fn normalize_weights(weights: &[f64], epsilon: f64) -> Result<NormalizedWeights> {
    if weights.is_empty() {
        return Err(Error::input("cannot normalize an empty weight vector"));
    }
    if let Some(bad) = weights.iter().find(|w| !w.is_finite() || **w < 0.0) {
        return Err(Error::input(format!("weights must be finite and >= 0, found {bad}")));
    }
    let total: f64 = weights.iter().sum();
    if total < epsilon {
        let n = weights.len();
        return Ok(NormalizedWeights {
            probs: vec![1.0 / n as f64; n],
            empty: true,
            total,
        });
    }
    Ok(NormalizedWeights {
        probs: weights.iter().map(|w| w / total).collect(),
        empty: false,
        total,
    })
}

/// `dL/dw_j = (dL/dŵ_j - Σ_i dL/dŵ_i ŵ_i) / Σw`. Zero for empty rays.
pub fn normalize_backward(norm: &NormalizedWeights, grad_probs: &[f64]) -> Vec<f64> {
    if norm.empty {
        return vec![0.0; norm.probs.len()];
    }
    let dot: f64 = grad_probs.iter().zip(&norm.probs).map(|(g, p)| g * p).sum();
    grad_probs.iter().map(|g| (g - dot) / norm.total).collect()
}

/// Bin edges, bin probabilities and CDF values of one ray.
#[derive(Debug, Clone, PartialEq)]
pub struct TerminationDistribution {
    edges: Vec<f64>,
    probs: Vec<f64>,
    cdf: Vec<f64>,
    empty: bool,
}

impl TerminationDistribution {
    pub fn from_edges(edges: Vec<f64>, probs: Vec<f64>, empty: bool) -> Result<Self> {
        check_len(probs.len() + 1, edges.len())?;
        if edges.windows(2).any(|e| !(e[1] > e[0])) {
            return Err(Error::input("bin edges must be strictly increasing"));
        }
        if probs.iter().any(|p| !p.is_finite() || *p < 0.0) {
            return Err(Error::input("bin probabilities must be finite and >= 0"));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > 1e-7 {
            return Err(Error::input(format!("bin probabilities sum to {total}, expected 1")));
        }
        let mut cdf = Vec::with_capacity(edges.len());
        let mut acc = 0.0;
        cdf.push(0.0);
        for p in &probs {
            acc += p;
            cdf.push(acc);
        }
        Ok(Self {
            edges,
            probs,
            cdf,
            empty,
        })
    }

    pub fn edges(&self) -> &[f64] {
        &self.edges
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn cdf(&self) -> &[f64] {
        &self.cdf
    }

    pub fn is_empty_ray(&self) -> bool {
        self.empty
    }

    /// Analytic CDF at distance `x`.
    pub fn cdf_at(&self, x: f64) -> f64 {
        let n = self.probs.len();
        if x <= self.edges[0] {
            return 0.0;
        }
        if x >= self.edges[n] {
            return self.cdf[n];
        }
        let k = self.edges.partition_point(|&e| e <= x) - 1;
        let frac = (x - self.edges[k]) / (self.edges[k + 1] - self.edges[k]);
        self.cdf[k] + frac * self.probs[k]
    }
}

/// Midpoints between neighbouring distances, closed off with `near`/`far`.
pub fn midpoint_edges(distances: &[f64], near: f64, far: f64) -> Result<Vec<f64>> {
    if distances.is_empty() {
        return Err(Error::input("no sample distances"));
    }
    if distances.windows(2).any(|d| !(d[1] > d[0])) {
        return Err(Error::input("sample distances must be strictly increasing"));
    }
    if !(near <= distances[0]) || !(distances[distances.len() - 1] < far) {
        return Err(Error::input("sample distances must lie in [near, far)"));
    }
    let mut edges = Vec::with_capacity(distances.len() + 1);
    edges.push(near);
    edges.extend(distances.windows(2).map(|d| 0.5 * (d[0] + d[1])));
    edges.push(far);
    // a sample sitting exactly on `near` would give a zero-width first bin
    if !(edges[1] > edges[0]) {
        return Err(Error::input("degenerate first bin"));
    }
    Ok(edges)
}

pub fn build_distribution(
    norm: &NormalizedWeights,
    distances: &[f64],
    near: f64,
    far: f64,
) -> Result<TerminationDistribution> {
    check_len(distances.len(), norm.probs.len())?;
    let edges = midpoint_edges(distances, near, far)?;
    TerminationDistribution::from_edges(edges, norm.probs.clone(), norm.empty)
}

/// Inverse CDF of the piecewise-linear CDF given by `edges`/`probs` at `q`.
/// Returns the sample and the bin it fell in.
pub fn inverse_cdf(edges: &[f64], probs: &[f64], cdf: &[f64], q: f64) -> (f64, usize) {
    let n = probs.len();
    // first bin whose right CDF value exceeds q
    let mut k = cdf[1..].partition_point(|&c| c <= q).min(n - 1);
    while probs[k] <= 0.0 && k > 0 {
        k -= 1;
    }
    let width = edges[k + 1] - edges[k];
    let frac = if probs[k] > 0.0 {
        ((q - cdf[k]) / probs[k]).clamp(0.0, 1.0)
    } else {
        0.0
    };
    (edges[k] + frac * width, k)
}

/// Samples drawn from a distribution at fixed quantiles.
#[derive(Debug, Clone, PartialEq)]
pub struct InverseSamples {
    pub values: Vec<f64>,
    pub bins: Vec<usize>,
    pub quantiles: Vec<f64>,
    /// Propagated from the source distribution.
    pub empty: bool,
}

pub fn inverse_transform_sample(
    dist: &TerminationDistribution,
    quantiles: &[f64],
) -> Result<InverseSamples> {
    if let Some(q) = quantiles.iter().find(|q| !(0.0..1.0).contains(*q)) {
        return Err(Error::input(format!("quantile {q} outside [0, 1)")));
    }
    let (values, bins) = quantiles
        .iter()
        .map(|&q| inverse_cdf(&dist.edges, &dist.probs, &dist.cdf, q))
        .unzip();
    Ok(InverseSamples {
        values,
        bins,
        quantiles: quantiles.to_vec(),
        empty: dist.empty,
    })
}

/// Pathwise gradient of the samples w.r.t. the bin probabilities, holding
/// quantiles and edges fixed.
///
/// In bin `k`, `y = e_k + (q - Σ_{i<k} p_i) / p_k · (e_{k+1} - e_k)`, so
/// `∂y/∂p_i = -w_k/p_k` for `i < k` and `∂y/∂p_k = -frac · w_k/p_k`.
pub fn inverse_transform_backward(
    dist: &TerminationDistribution,
    samples: &InverseSamples,
    grad_values: &[f64],
) -> Vec<f64> {
    let n = dist.probs.len();
    let mut before = vec![0.0; n]; // contributions to bins strictly left of k
    let mut own = vec![0.0; n];
    for ((&g, &k), &q) in grad_values.iter().zip(&samples.bins).zip(&samples.quantiles) {
        let p = dist.probs[k];
        if p <= 0.0 {
            continue;
        }
        let frac = (q - dist.cdf[k]) / p;
        if !(0.0..=1.0).contains(&frac) {
            continue; // clamped: locally constant
        }
        let scale = g * (dist.edges[k + 1] - dist.edges[k]) / p;
        before[k] += scale;
        own[k] += scale * frac;
    }
    let mut grad = vec![0.0; n];
    let mut suffix = 0.0;
    for i in (0..n).rev() {
        grad[i] = -suffix - own[i];
        suffix += before[i];
    }
    grad
}

/// `(k + u_k) / n` for `k = 0..n`, each `u_k` uniform in `[0, 1)`.
pub fn stratified_quantiles<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Vec<f64> {
    (0..n)
        .map(|k| {
            let q = (k as f64 + rng.random::<f64>()) / n as f64;
            q.min(1.0f64.next_down())
        })
        .collect()
}

/// Hierarchical resampling: the sorted union of the coarse distances and
/// `n_fine` draws from the coarse distribution.
pub fn fine_resample<R: Rng + ?Sized>(
    dist: &TerminationDistribution,
    coarse: &[f64],
    n_fine: usize,
    rng: &mut R,
) -> Result<Vec<f64>> {
    if n_fine == 0 {
        return Ok(coarse.to_vec());
    }
    fine_resample_at(dist, coarse, &stratified_quantiles(n_fine, rng))
}

/// [`fine_resample`] at given quantiles.
pub fn fine_resample_at(dist: &TerminationDistribution, coarse: &[f64], quantiles: &[f64]) -> Result<Vec<f64>> {
    let far = dist.edges[dist.edges.len() - 1];
    let drawn = inverse_transform_sample(dist, quantiles)?;
    let mut all: Vec<f64> = coarse.iter().copied().chain(drawn.values).collect();
    all.sort_by(f64::total_cmp);
    for i in 1..all.len() {
        if all[i] <= all[i - 1] {
            all[i] = all[i - 1].next_up();
        }
    }
    if all[all.len() - 1] >= far {
        return Err(Error::input("resampled distances reach the far plane"));
    }
    Ok(all)
}
