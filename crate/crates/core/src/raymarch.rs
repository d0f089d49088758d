//! Volume-rendering quadrature along camera rays.
//!
//! Densities `σ_i` at sorted distances `t_i` become per-sample weights
//! `w_i = T_i (1 - exp(-σ_i δ_i))` with transmittance
//! `T_i = exp(-Σ_{j<i} σ_j δ_j)`. Color and depth are the weighted sums of
//! the per-sample colors and distances. Mass that survives the whole ray
//! (the residual transmittance) renders as black at depth zero.

use crate::error::check_len;
use crate::rng::{self, Purpose};
use crate::{Error, Result};
use nalgebra::Vector3;
use rand::Rng;

const UNIT_TOLERANCE: f64 = 1e-6;

/// A batch of rays sharing one `[near, far]` interval.
#[derive(Debug, Clone)]
pub struct RayBundle {
    origins: Vec<Vector3<f64>>,
    directions: Vec<Vector3<f64>>,
    near: f64,
    far: f64,
    pixel_ids: Vec<usize>,
}

impl RayBundle {
    /// `pixel_count` bounds the pixel ids (number of pixels in the source
    /// image set the ids index into).
    pub fn new(
        origins: Vec<Vector3<f64>>,
        directions: Vec<Vector3<f64>>,
        near: f64,
        far: f64,
        pixel_ids: Vec<usize>,
        pixel_count: usize,
    ) -> Result<Self> {
        check_len(origins.len(), directions.len())?;
        check_len(origins.len(), pixel_ids.len())?;
        check_interval(near, far)?;
        if near <= 0.0 {
            return Err(Error::input(format!("near must be positive, got {near}")));
        }
        for (i, d) in directions.iter().enumerate() {
            if (d.norm() - 1.0).abs() > UNIT_TOLERANCE {
                return Err(Error::input(format!(
                    "ray {i} direction has norm {}, expected unit length",
                    d.norm()
                )));
            }
        }
        if origins.iter().any(|o| !o.iter().all(|v| v.is_finite())) {
            return Err(Error::input("non-finite ray origin"));
        }
        if let Some(&bad) = pixel_ids.iter().find(|&&p| p >= pixel_count) {
            return Err(Error::input(format!(
                "pixel id {bad} out of bounds for {pixel_count} pixels"
            )));
        }
        Ok(Self {
            origins,
            directions,
            near,
            far,
            pixel_ids,
        })
    }

    pub fn len(&self) -> usize {
        self.origins.len()
    }

    pub fn is_empty(&self) -> bool {
        self.origins.is_empty()
    }

    pub fn near(&self) -> f64 {
        self.near
    }

    pub fn far(&self) -> f64 {
        self.far
    }

    pub fn origin(&self, i: usize) -> Vector3<f64> {
        self.origins[i]
    }

    pub fn direction(&self, i: usize) -> Vector3<f64> {
        self.directions[i]
    }

    pub fn pixel_ids(&self) -> &[usize] {
        &self.pixel_ids
    }

    /// Point at distance `t` along ray `i`.
    pub fn point(&self, i: usize, t: f64) -> Vector3<f64> {
        self.origins[i] + self.directions[i] * t
    }
}

fn check_interval(near: f64, far: f64) -> Result<()> {
    if !near.is_finite() || !far.is_finite() {
        return Err(Error::input(format!("non-finite ray interval [{near}, {far}]")));
    }
    if near >= far {
        return Err(Error::input(format!("near {near} must be below far {far}")));
    }
    Ok(())
}

/// Sorted sample distances per ray plus the segment width owned by each
/// sample. Every ray carries the same number of samples.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadratureSegments {
    per_ray: usize,
    distances: Vec<f64>,
    deltas: Vec<f64>,
}

impl QuadratureSegments {
    /// Builds segments from per-ray sorted distances. The last segment of a
    /// ray extends to `far`.
    pub fn from_rays(rays: &[Vec<f64>], far: f64) -> Result<Self> {
        let per_ray = rays.first().map_or(0, Vec::len);
        let mut distances = Vec::with_capacity(per_ray * rays.len());
        let mut deltas = Vec::with_capacity(per_ray * rays.len());
        for r in rays {
            check_len(per_ray, r.len())?;
            deltas.extend(segment_deltas(r, far)?);
            distances.extend_from_slice(r);
        }
        Ok(Self {
            per_ray,
            distances,
            deltas,
        })
    }

    pub fn samples_per_ray(&self) -> usize {
        self.per_ray
    }

    pub fn ray_count(&self) -> usize {
        if self.per_ray == 0 {
            0
        } else {
            self.distances.len() / self.per_ray
        }
    }

    pub fn distances(&self, ray: usize) -> &[f64] {
        &self.distances[ray * self.per_ray..(ray + 1) * self.per_ray]
    }

    pub fn deltas(&self, ray: usize) -> &[f64] {
        &self.deltas[ray * self.per_ray..(ray + 1) * self.per_ray]
    }
}

/// `δ_i = t_{i+1} - t_i`, with the final width running to `far`.
pub fn segment_deltas(distances: &[f64], far: f64) -> Result<Vec<f64>> {
    if distances.is_empty() {
        return Err(Error::input("a ray needs at least one sample"));
    }
    let mut deltas = Vec::with_capacity(distances.len());
    for pair in distances.windows(2) {
        let d = pair[1] - pair[0];
        if !(d > 0.0) {
            return Err(Error::input(format!(
                "sample distances must be strictly increasing ({} then {})",
                pair[0], pair[1]
            )));
        }
        deltas.push(d);
    }
    let last = far - distances[distances.len() - 1];
    if !(last > 0.0) {
        return Err(Error::input(format!(
            "last sample {} is not below far {far}",
            distances[distances.len() - 1]
        )));
    }
    deltas.push(last);
    Ok(deltas)
}

/// One uniform draw inside each of `n` equal bins partitioning `[near, far)`.
pub fn stratified_distances<R: Rng + ?Sized>(
    near: f64,
    far: f64,
    n: usize,
    rng: &mut R,
) -> Result<Vec<f64>> {
    check_interval(near, far)?;
    if n < 2 {
        return Err(Error::input(format!("need at least 2 samples per ray, got {n}")));
    }
    let width = (far - near) / n as f64;
    let mut out = Vec::with_capacity(n);
    let mut prev = f64::NEG_INFINITY;
    for k in 0..n {
        let u: f64 = rng.random();
        let lo = near + k as f64 * width;
        let mut t = lo + u * width;
        // rounding can push a draw onto its upper bin edge
        let hi = if k + 1 == n { far } else { near + (k + 1) as f64 * width };
        if t >= hi {
            t = hi.next_down();
        }
        if t <= prev {
            t = prev.next_up();
        }
        prev = t;
        out.push(t);
    }
    Ok(out)
}

/// Stratified samples for every ray of the bundle. Ray `i` draws from its
/// own stream keyed by `(seed, key, pixel id)`.
pub fn stratified_sample(
    bundle: &RayBundle,
    n: usize,
    seed: u64,
    key: u64,
) -> Result<QuadratureSegments> {
    let rays = bundle
        .pixel_ids
        .iter()
        .map(|&p| {
            let mut r = rng::stream(seed, Purpose::Stratified, &[key, p as u64]);
            stratified_distances(bundle.near, bundle.far, n, &mut r)
        })
        .collect::<Result<Vec<_>>>()?;
    QuadratureSegments::from_rays(&rays, bundle.far)
}

/// Per-sample weights and transmittance for one ray.
#[derive(Debug, Clone, PartialEq)]
pub struct RayWeights {
    pub weights: Vec<f64>,
    pub transmittance: Vec<f64>,
    /// `exp(-Σ σ_j δ_j)`: probability the ray passes every sample.
    pub residual: f64,
}

pub fn compute_weights(sigmas: &[f64], deltas: &[f64]) -> Result<RayWeights> {
    check_len(deltas.len(), sigmas.len())?;
    let mut weights = Vec::with_capacity(sigmas.len());
    let mut transmittance = Vec::with_capacity(sigmas.len());
    let mut optical = 0.0f64;
    for (i, (&s, &d)) in sigmas.iter().zip(deltas).enumerate() {
        if !s.is_finite() || s < 0.0 {
            return Err(Error::input(format!("density at sample {i} is {s}; must be finite and >= 0")));
        }
        let t = (-optical).exp();
        let a = s * d;
        transmittance.push(t);
        weights.push(t * -(-a).exp_m1());
        optical += a;
    }
    Ok(RayWeights {
        weights,
        transmittance,
        residual: (-optical).exp(),
    })
}

/// Pulls `dL/dw` back to `dL/dσ`.
///
/// With `a_i = σ_i δ_i`: `∂w_i/∂a_i = T_{i+1}` and `∂w_i/∂a_k = -w_i` for
/// `k < i`.
pub fn weights_backward(deltas: &[f64], rw: &RayWeights, grad_weights: &[f64]) -> Vec<f64> {
    let n = deltas.len();
    let mut grad_sigma = vec![0.0; n];
    let mut later = 0.0; // Σ_{i>k} g_i w_i
    for k in (0..n).rev() {
        let t_next = if k + 1 < n { rw.transmittance[k + 1] } else { rw.residual };
        grad_sigma[k] = deltas[k] * (grad_weights[k] * t_next - later);
        later += grad_weights[k] * rw.weights[k];
    }
    grad_sigma
}

/// `Ĉ = Σ w_i c_i`.
pub fn render_color(weights: &[f64], colors: &[[f64; 3]]) -> Result<[f64; 3]> {
    check_len(weights.len(), colors.len())?;
    let mut c = [0.0; 3];
    for (w, col) in weights.iter().zip(colors) {
        for k in 0..3 {
            c[k] += w * col[k];
        }
    }
    Ok(c)
}

/// `d̂ = Σ w_i t_i`.
pub fn render_depth(weights: &[f64], distances: &[f64]) -> Result<f64> {
    check_len(weights.len(), distances.len())?;
    Ok(weights.iter().zip(distances).map(|(w, t)| w * t).sum())
}

/// Rendered quantities for a whole bundle.
#[derive(Debug, Clone, PartialEq)]
pub struct RenderOutput {
    pub color: Vec<[f64; 3]>,
    pub depth: Vec<f64>,
    pub weights: Vec<Vec<f64>>,
    pub residual_transmittance: Vec<f64>,
}

/// Renders every ray given per-sample densities and colors laid out ray-major.
pub fn render_bundle(
    segments: &QuadratureSegments,
    sigmas: &[f64],
    colors: &[[f64; 3]],
) -> Result<RenderOutput> {
    let n = segments.samples_per_ray();
    let rays = segments.ray_count();
    check_len(n * rays, sigmas.len())?;
    check_len(n * rays, colors.len())?;
    let mut out = RenderOutput {
        color: Vec::with_capacity(rays),
        depth: Vec::with_capacity(rays),
        weights: Vec::with_capacity(rays),
        residual_transmittance: Vec::with_capacity(rays),
    };
    for r in 0..rays {
        let span = r * n..(r + 1) * n;
        let rw = compute_weights(&sigmas[span.clone()], segments.deltas(r))?;
        out.color.push(render_color(&rw.weights, &colors[span])?);
        out.depth.push(render_depth(&rw.weights, segments.distances(r))?);
        out.residual_transmittance.push(rw.residual);
        out.weights.push(rw.weights);
    }
    Ok(out)
}

/// Frequency encoding: for each scalar `p`, the pairs
/// `(sin(2^k π p), cos(2^k π p))` for `k = 0..levels`.
pub fn positional_encode(values: &[f64], levels: usize) -> Vec<f64> {
    let mut out = vec![0.0; values.len() * 2 * levels];
    encode_into(values, levels, &mut out);
    out
}

pub(crate) fn encode_into(values: &[f64], levels: usize, out: &mut [f64]) {
    debug_assert_eq!(out.len(), values.len() * 2 * levels);
    let mut o = 0;
    for &p in values {
        let mut freq = std::f64::consts::PI;
        for _ in 0..levels {
            let (s, c) = (freq * p).sin_cos();
            out[o] = s;
            out[o + 1] = c;
            o += 2;
            freq *= 2.0;
        }
    }
}
