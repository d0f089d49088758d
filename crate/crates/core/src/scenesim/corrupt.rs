//! Corrupted depth priors that mimic monocular-predictor failures: an
//! unknown global scale, a smooth warp, depth-coherent blobs of misread
//! geometry and pixel noise.

use crate::rng::{self, Purpose};
use crate::{Error, Map2, Result};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

/// A disk (in fractions of the image width) whose depth is offset by a
/// constant amount in scene units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Blob {
    pub center: [f64; 2],
    pub radius: f64,
    pub offset: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CorruptionSpec {
    /// Global scale drawn uniformly from this range.
    pub scale_range: [f64; 2],
    /// Relative amplitude of the multiplicative low-frequency warp.
    pub warp_amplitude: f64,
    /// Warp wavelength as a fraction of the image width.
    pub warp_wavelength: f64,
    /// Randomly placed blobs in addition to `blobs`.
    pub blob_count: usize,
    pub blob_radius: [f64; 2],
    /// Magnitude range of random blob offsets; the sign is random.
    pub blob_offset: [f64; 2],
    pub blobs: Vec<Blob>,
    /// Relative standard deviation of per-pixel noise.
    pub noise_sigma: f64,
}

impl Default for CorruptionSpec {
    fn default() -> Self {
        Self {
            scale_range: [0.95, 1.05],
            warp_amplitude: 0.03,
            warp_wavelength: 1.5,
            blob_count: 3,
            blob_radius: [0.1, 0.2],
            blob_offset: [0.5, 0.9],
            blobs: Vec::new(),
            noise_sigma: 0.01,
        }
    }
}

impl CorruptionSpec {
    /// Leaves the depth untouched.
    pub fn identity() -> Self {
        Self {
            scale_range: [1.0, 1.0],
            warp_amplitude: 0.0,
            warp_wavelength: 1.0,
            blob_count: 0,
            blob_radius: [0.0, 0.0],
            blob_offset: [0.0, 0.0],
            blobs: Vec::new(),
            noise_sigma: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Generation(m.into()));
        let ordered = |r: [f64; 2]| r[0].is_finite() && r[1].is_finite() && r[0] <= r[1];
        if !ordered(self.scale_range) || self.scale_range[0] <= 0.0 {
            return bad("scale range must be positive and ordered");
        }
        if !ordered(self.blob_radius) || self.blob_radius[0] < 0.0 || !ordered(self.blob_offset) {
            return bad("blob ranges must be ordered and radii nonnegative");
        }
        if !(self.warp_amplitude >= 0.0 && self.warp_wavelength > 0.0 && self.noise_sigma >= 0.0) {
            return bad("warp and noise parameters must be nonnegative");
        }
        Ok(())
    }
}

fn in_disk(x: usize, y: usize, width: f64, center: &[f64; 2], radius: f64) -> bool {
    let dx = (x as f64 + 0.5) / width - center[0];
    let dy = (y as f64 + 0.5) / width - center[1];
    dx * dx + dy * dy <= radius * radius
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorruptedPrior {
    pub depth: Map2,
    /// 1 inside blob regions, 0 elsewhere.
    pub error_mask: Map2,
    pub scale: f64,
    /// Human-readable summary of what was applied.
    pub description: String,
}

/// Applies `spec` to a ground-truth depth map. `view` keys the random
/// stream so every view gets its own corruption.
pub fn corrupt_prior(gt: &Map2, spec: &CorruptionSpec, seed: u64, view: u64) -> Result<CorruptedPrior> {
    spec.validate()?;
    if gt.data().iter().any(|&z| !(z > 0.0)) {
        return Err(Error::Generation("ground-truth depth must be positive".into()));
    }
    let mut r = rng::stream(seed, Purpose::Corruption, &[view]);
    let [lo, hi] = spec.scale_range;
    let scale = if lo == hi { lo } else { r.random_range(lo..=hi) };
    let (w, h) = gt.shape();
    let wf = w as f64;

    let mut blobs = spec.blobs.clone();
    for _ in 0..spec.blob_count {
        let radius = r.random_range(spec.blob_radius[0]..=spec.blob_radius[1]);
        let mag = r.random_range(spec.blob_offset[0]..=spec.blob_offset[1]);
        let mut sign = if r.random::<bool>() { 1.0 } else { -1.0 };
        let center = [r.random_range(0.1..0.9), r.random_range(0.1..0.9) * h as f64 / wf];
        // a blob pulled towards the camera must not cross it: keep at least
        // half of the closest covered depth, else push the blob away instead
        let closest = (0..h)
            .flat_map(|y| (0..w).map(move |x| (x, y)))
            .filter(|&(x, y)| in_disk(x, y, wf, &center, radius))
            .map(|(x, y)| gt.get(x, y))
            .fold(f64::INFINITY, f64::min);
        if sign < 0.0 && closest - mag < 0.5 * closest {
            sign = 1.0;
        }
        blobs.push(Blob {
            center,
            radius,
            offset: sign * mag,
        });
    }
    let phase: [f64; 2] = [r.random_range(0.0..std::f64::consts::TAU), r.random_range(0.0..std::f64::consts::TAU)];
    let k = std::f64::consts::TAU / (spec.warp_wavelength * wf);

    let mut depth = Map2::zeros(w, h);
    let mut mask = Map2::zeros(w, h);
    for y in 0..h {
        for x in 0..w {
            let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
            let warp = spec.warp_amplitude * (k * px + phase[0]).sin() * (k * py + phase[1]).sin();
            let mut z = gt.get(x, y) * (1.0 + warp);
            for b in &blobs {
                if in_disk(x, y, wf, &b.center, b.radius) {
                    z += b.offset;
                    mask.set(x, y, 1.0);
                }
            }
            z *= scale;
            if spec.noise_sigma > 0.0 {
                let n: f64 = r.sample(StandardNormal);
                z += spec.noise_sigma * gt.get(x, y) * n;
            }
            if !(z > 0.0) {
                return Err(Error::Generation(format!(
                    "corruption drives depth at ({x}, {y}) to {z}"
                )));
            }
            depth.set(x, y, z);
        }
    }
    let description = format!(
        "scale={scale:.4} warp={} blobs={} noise={}",
        spec.warp_amplitude,
        blobs.len(),
        spec.noise_sigma
    );
    Ok(CorruptedPrior {
        depth,
        error_mask: mask,
        scale,
        description,
    })
}
