//! Training objective: photometric term, depth-guidance term and the
//! uncertainty weighting
//! `L = (1+u)^γ L_photo + λ (1-u)^γ L_depth`, averaged over the rays of a batch.

use crate::error::check_len;
use crate::{Error, Result};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    /// Balance of the depth term.
    pub lambda: f64,
    /// Exponent controlling how strongly `u` reweights both terms.
    pub gamma: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda: 0.007,
            gamma: 1.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda.is_finite() && self.lambda >= 0.0) {
            return Err(Error::Config(format!("lambda must be finite and >= 0, got {}", self.lambda)));
        }
        if !(self.gamma.is_finite() && self.gamma >= 0.0) {
            return Err(Error::Config(format!("gamma must be finite and >= 0, got {}", self.gamma)));
        }
        Ok(())
    }

    /// Per-ray multipliers `((1+u)^γ, λ(1-u)^γ)`; the depth one is zero on
    /// empty rays.
    pub fn coefficients(&self, u: f64, empty: bool) -> (f64, f64) {
        let photo = (1.0 + u).powf(self.gamma);
        let depth = if empty {
            0.0
        } else {
            self.lambda * (1.0 - u).powf(self.gamma)
        };
        (photo, depth)
    }
}

/// `‖Ĉ - C‖²` of one ray.
pub fn photometric_ray(rendered: [f64; 3], observed: [f64; 3]) -> f64 {
    (0..3).map(|k| (rendered[k] - observed[k]).powi(2)).sum()
}

pub fn photometric_loss(rendered: &[[f64; 3]], observed: &[[f64; 3]]) -> Result<Vec<f64>> {
    check_len(rendered.len(), observed.len())?;
    Ok(rendered.iter().zip(observed).map(|(&r, &o)| photometric_ray(r, o)).collect())
}

/// `(d̂ - s·z_0)²`, with the prior already scaled.
pub fn l2_depth_loss(rendered_depth: f64, prior_depth_scaled: f64) -> f64 {
    (rendered_depth - prior_depth_scaled).powi(2)
}

/// Mean squared distance of the termination samples to one hypothesis.
pub fn l2_hypothesis_loss(samples: &[f64], prior: f64) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::input("l2 hypothesis loss needs at least one sample"));
    }
    Ok(samples.iter().map(|y| (y - prior).powi(2)).sum::<f64>() / samples.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct PerRay {
    pub photo: Vec<f64>,
    pub depth: Vec<f64>,
    pub u: Vec<f64>,
    pub empty: Vec<bool>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct LossBreakdown {
    /// Batch mean of the unweighted photometric loss.
    pub photo: f64,
    /// Batch mean of the unweighted depth loss (empty rays count as zero).
    pub depth: f64,
    /// Batch mean of the weighted per-ray totals.
    pub total: f64,
    pub per_ray: Option<PerRay>,
    pub empty_ray_fraction: f64,
}

impl LossBreakdown {
    /// Recomputes the total from the per-ray parts.
    pub fn recompute_total(&self, weights: &LossWeights) -> Option<f64> {
        let pr = self.per_ray.as_ref()?;
        let n = pr.photo.len();
        let sum: f64 = (0..n)
            .map(|i| {
                let (cp, cd) = weights.coefficients(pr.u[i], pr.empty[i]);
                cp * pr.photo[i] + cd * pr.depth[i]
            })
            .sum();
        Some(sum / n as f64)
    }
}

fn check_u(u: &[f64]) -> Result<()> {
    match u.iter().find(|v| !(0.0..=1.0).contains(*v)) {
        Some(v) => Err(Error::input(format!("uncertainty {v} outside [0, 1]"))),
        None => Ok(()),
    }
}

pub fn total_loss(
    photo: &[f64],
    depth: &[f64],
    u: &[f64],
    weights: &LossWeights,
    empty: &[bool],
) -> Result<LossBreakdown> {
    let n = photo.len();
    check_len(n, depth.len())?;
    check_len(n, u.len())?;
    check_len(n, empty.len())?;
    check_u(u)?;
    if n == 0 {
        return Err(Error::input("empty batch"));
    }
    let mut total = 0.0;
    let mut photo_sum = 0.0;
    let mut depth_sum = 0.0;
    let mut depth_kept = Vec::with_capacity(n);
    for i in 0..n {
        let d = if empty[i] { 0.0 } else { depth[i] };
        let (cp, cd) = weights.coefficients(u[i], empty[i]);
        total += cp * photo[i] + cd * d;
        photo_sum += photo[i];
        depth_sum += d;
        depth_kept.push(d);
    }
    let nf = n as f64;
    Ok(LossBreakdown {
        photo: photo_sum / nf,
        depth: depth_sum / nf,
        total: total / nf,
        empty_ray_fraction: empty.iter().filter(|&&e| e).count() as f64 / nf,
        per_ray: Some(PerRay {
            photo: photo.to_vec(),
            depth: depth_kept,
            u: u.to_vec(),
            empty: empty.to_vec(),
        }),
    })
}

/// `∂L/∂u_i` of the batch-mean total:
/// `(γ(1+u)^{γ-1} L_photo - λγ(1-u)^{γ-1} L_depth) / n`.
pub fn total_grad_u(photo: &[f64], depth: &[f64], u: &[f64], weights: &LossWeights, empty: &[bool]) -> Result<Vec<f64>> {
    let n = photo.len();
    check_len(n, depth.len())?;
    check_len(n, u.len())?;
    check_len(n, empty.len())?;
    check_u(u)?;
    let g = weights.gamma;
    Ok((0..n)
        .map(|i| {
            let dp = if g == 0.0 { 0.0 } else { g * (1.0 + u[i]).powf(g - 1.0) * photo[i] };
            let dd = if g == 0.0 || empty[i] {
                0.0
            } else {
                weights.lambda * g * (1.0 - u[i]).powf(g - 1.0) * depth[i]
            };
            (dp - dd) / n as f64
        })
        .collect())
}
