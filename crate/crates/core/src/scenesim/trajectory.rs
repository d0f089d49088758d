//! Synthetic denoising trajectories whose per-pixel instability follows the
//! injected prior error, plus optional multi-hypothesis stacks.

use crate::rng::{self, Purpose};
use crate::uncertainty::{DenoisingTrajectory, TrajectoryPair};
use crate::{Error, Map2, Result};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrajectorySpec {
    /// Number of denoising transitions `T`.
    pub steps: usize,
    /// Error (scene units) at which a pixel changes at every step.
    pub error_ref: f64,
    /// Size of the final-estimate disagreement of the mirrored run,
    /// relative to the local error.
    pub flip_kappa: f64,
    /// Hypotheses per training view; 0 writes none.
    pub hypotheses: usize,
    /// Spread of the hypotheses relative to the local error.
    pub hypothesis_spread: f64,
}

impl Default for TrajectorySpec {
    fn default() -> Self {
        Self {
            steps: 20,
            error_ref: 0.3,
            flip_kappa: 0.5,
            hypotheses: 0,
            hypothesis_spread: 0.5,
        }
    }
}

impl TrajectorySpec {
    pub fn validate(&self) -> Result<()> {
        if self.steps < 2 {
            return Err(Error::Generation("trajectories need at least 2 steps".into()));
        }
        if !(self.error_ref > 0.0 && self.flip_kappa >= 0.0 && self.hypothesis_spread >= 0.0) {
            return Err(Error::Generation("trajectory rates must be positive".into()));
        }
        Ok(())
    }
}

/// One run ending exactly at `last`. At every transition a pixel jumps with
/// probability `rate`; jumps are at least `2τ` so they always register.
fn run(last: &Map2, rate: &Map2, error: &Map2, steps: usize, tau: f64, r: &mut impl Rng) -> Vec<Map2> {
    let mut out = Vec::with_capacity(steps + 1);
    out.push(last.clone());
    for _ in 0..steps {
        let prev = out.last().unwrap();
        let mut next = prev.clone();
        for i in 0..next.len() {
            let jump: f64 = r.random();
            let size: f64 = r.random();
            let sign = if r.random::<bool>() { 1.0 } else { -1.0 };
            if jump < rate.data()[i] {
                next.data_mut()[i] += sign * (2.0 * tau + error.data()[i] * size);
            }
        }
        out.push(next);
    }
    out
}

/// Trajectory pair for one view. `error` is the per-pixel prior error
/// `|prior - gt|`; the jump rate is `min(1, error / error_ref)`. The direct
/// run ends exactly at `prior`; the mirrored run ends at
/// `M(prior) ± κ·M(error)·ξ`, `ξ ~ U(0.5, 1)`.
pub fn synth_trajectory(
    prior: &Map2,
    error: &Map2,
    spec: &TrajectorySpec,
    tau: f64,
    seed: u64,
    view: u64,
) -> Result<TrajectoryPair> {
    spec.validate()?;
    prior.check_same_shape(error)?;
    if !(tau > 0.0) {
        return Err(Error::input("tau must be positive"));
    }
    let rate = error.map(|e| (e / spec.error_ref).min(1.0));
    let mut r = rng::stream(seed, Purpose::Trajectory, &[view, 0]);
    let direct = run(prior, &rate, error, spec.steps, tau, &mut r);

    let mut r = rng::stream(seed, Purpose::Trajectory, &[view, 1]);
    let m_err = error.mirrored();
    let mut m_last = prior.mirrored();
    for (z, e) in m_last.data_mut().iter_mut().zip(m_err.data()) {
        let xi: f64 = r.random_range(0.5..1.0);
        let sign = if r.random::<bool>() { 1.0 } else { -1.0 };
        *z += sign * spec.flip_kappa * e * xi;
    }
    let mirrored = run(&m_last, &rate.mirrored(), &m_err, spec.steps, tau, &mut r);
    Ok(TrajectoryPair {
        direct: DenoisingTrajectory::new(direct, view as usize)?,
        mirrored: DenoisingTrajectory::new(mirrored, view as usize)?,
    })
}

/// `K` hypotheses `prior + spread·error·n`, `n ~ N(0, 1)`, clamped to stay
/// positive. The first hypothesis is the prior itself.
pub fn synth_hypotheses(prior: &Map2, error: &Map2, spec: &TrajectorySpec, seed: u64, view: u64) -> Result<Vec<Map2>> {
    prior.check_same_shape(error)?;
    let mut r = rng::stream(seed, Purpose::Trajectory, &[view, 2]);
    let mut out = vec![prior.clone()];
    for _ in 1..spec.hypotheses {
        let mut h = prior.clone();
        for (z, e) in h.data_mut().iter_mut().zip(error.data()) {
            let n: f64 = r.sample(StandardNormal);
            *z = (*z + spec.hypothesis_spread * e * n).max(0.5 * *z);
        }
        out.push(h);
    }
    out.truncate(spec.hypotheses.max(1));
    Ok(out)
}
