//! Optimal transport between weighted atoms on the real line.
//!
//! Two backends share one interface:
//!
//! * [`emd_1d_exact`] / [`wasserstein_1d`]: the exact cost, obtained by
//!   walking the two quantile functions in lockstep.
//! * [`sinkhorn_divergence`]: the debiased entropic divergence
//!   `S_ε(a,b) = OT_ε(a,b) - ½OT_ε(a,a) - ½OT_ε(b,b)`, with gradients read off
//!   the converged dual potentials.
//!
//! Both report the transport cost under `c(x,y) = |x-y|^p` (for `p = 1` this
//! is the Earth Mover's Distance) together with gradients w.r.t. the atom
//! positions.

mod exact;
mod sinkhorn;

pub use exact::{emd_1d_exact, wasserstein_1d};
pub use sinkhorn::sinkhorn_divergence;

use crate::error::check_len;
use crate::{Error, Result};
use serde::{Deserialize, Serialize};

const MASS_TOLERANCE: f64 = 1e-7;

/// Probability mass on finitely many points of the real line.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteMass {
    atoms: Vec<f64>,
    mass: Vec<f64>,
}

impl DiscreteMass {
    pub fn new(atoms: Vec<f64>, mass: Vec<f64>) -> Result<Self> {
        check_len(atoms.len(), mass.len())?;
        if atoms.is_empty() {
            return Err(Error::input("a mass needs at least one atom"));
        }
        if atoms.iter().any(|a| !a.is_finite()) {
            return Err(Error::input("atom positions must be finite"));
        }
        if mass.iter().any(|m| !m.is_finite() || *m < 0.0) {
            return Err(Error::input("atom masses must be finite and >= 0"));
        }
        let total: f64 = mass.iter().sum();
        if total <= 0.0 {
            return Err(Error::input("total mass is zero"));
        }
        if (total - 1.0).abs() > MASS_TOLERANCE {
            return Err(Error::input(format!("masses sum to {total}, expected 1")));
        }
        Ok(Self { atoms, mass })
    }

    /// Rescales nonnegative weights to unit total.
    pub fn normalized(atoms: Vec<f64>, weights: Vec<f64>) -> Result<Self> {
        let total: f64 = weights.iter().sum();
        if !(total > 0.0) {
            return Err(Error::input("total mass is zero"));
        }
        Self::new(atoms, weights.into_iter().map(|w| w / total).collect())
    }

    /// Mass `1/N` on each atom.
    pub fn uniform(atoms: Vec<f64>) -> Result<Self> {
        let n = atoms.len().max(1);
        Self::new(atoms, vec![1.0 / n as f64; n])
    }

    pub fn point(x: f64) -> Result<Self> {
        Self::new(vec![x], vec![1.0])
    }

    pub fn atoms(&self) -> &[f64] {
        &self.atoms
    }

    pub fn mass(&self) -> &[f64] {
        &self.mass
    }

    pub fn len(&self) -> usize {
        self.atoms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }

    pub fn map_atoms(&self, f: impl Fn(f64) -> f64) -> Result<Self> {
        Self::new(self.atoms.iter().map(|&a| f(a)).collect(), self.mass.clone())
    }
}

/// Solver settings. `blur` is in scene units; the entropic temperature is
/// `blur^p`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TransportParams {
    pub blur: f64,
    /// Geometric annealing factor of the blur schedule, in (0, 1).
    pub scaling: f64,
    pub max_iters: usize,
    /// Largest accepted L1 marginal violation of the final plans.
    pub tolerance: f64,
    /// Ground-cost exponent.
    pub p: f64,
}

impl Default for TransportParams {
    fn default() -> Self {
        Self {
            blur: 0.05,
            scaling: 0.5,
            max_iters: 100,
            tolerance: 1e-3,
            p: 1.0,
        }
    }
}

impl TransportParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.blur > 0.0 && self.blur.is_finite()) {
            return Err(Error::input(format!("blur must be positive, got {}", self.blur)));
        }
        if !(self.scaling > 0.0 && self.scaling < 1.0) {
            return Err(Error::input(format!("scaling must lie in (0,1), got {}", self.scaling)));
        }
        if !(self.tolerance > 0.0) {
            return Err(Error::input("tolerance must be positive"));
        }
        if self.max_iters == 0 {
            return Err(Error::input("max_iters must be at least 1"));
        }
        if !(self.p >= 1.0 && self.p.is_finite()) {
            return Err(Error::input(format!("cost exponent must be >= 1, got {}", self.p)));
        }
        Ok(())
    }
}

/// A transport cost and its sensitivities.
#[derive(Debug, Clone, PartialEq)]
pub struct TransportValue {
    pub value: f64,
    /// `∂value/∂` atom positions of the first argument.
    pub grad_a: Vec<f64>,
    /// `∂value/∂` atom positions of the second argument.
    pub grad_b: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TransportMode {
    Exact,
    Sinkhorn,
}

impl std::str::FromStr for TransportMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "exact" => Ok(Self::Exact),
            "sinkhorn" => Ok(Self::Sinkhorn),
            other => Err(Error::Config(format!("unknown transport mode `{other}`"))),
        }
    }
}

impl std::fmt::Display for TransportMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Exact => "exact",
            Self::Sinkhorn => "sinkhorn",
        })
    }
}

/// Depth-guidance loss between ray samples and a (scaled) prior.
pub fn emd_loss(
    samples: &DiscreteMass,
    prior: &DiscreteMass,
    mode: TransportMode,
    params: &TransportParams,
) -> Result<TransportValue> {
    match mode {
        TransportMode::Exact => Ok(wasserstein_1d(samples, prior, params.p)),
        TransportMode::Sinkhorn => sinkhorn_divergence(samples, prior, params),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn emd_loss_examples() {
        let p = TransportParams::default();
        let prior = DiscreteMass::point(2.0).unwrap();
        let same = DiscreteMass::uniform(vec![2.0; 8]).unwrap();
        for mode in [TransportMode::Exact, TransportMode::Sinkhorn] {
            let v = emd_loss(&same, &prior, mode, &p).unwrap().value;
            assert!(v.abs() < 1e-6, "{mode}: {v}");
        }
        let two = DiscreteMass::uniform(vec![1.0, 3.0]).unwrap();
        let v = emd_loss(&two, &prior, TransportMode::Exact, &p).unwrap().value;
        assert!((v - 1.0).abs() < 1e-12);

        let hyp: Vec<f64> = (0..20).map(|k| 1.5 + 0.05 * k as f64).collect();
        let a = DiscreteMass::uniform(hyp.clone()).unwrap();
        let b = DiscreteMass::uniform(hyp).unwrap();
        for mode in [TransportMode::Exact, TransportMode::Sinkhorn] {
            assert!(emd_loss(&a, &b, mode, &p).unwrap().value.abs() < 1e-6);
        }
    }

    #[test]
    fn mass_validation() {
        assert!(DiscreteMass::new(vec![0.0, 1.0], vec![0.0, 0.0]).is_err());
        assert!(DiscreteMass::new(vec![0.0, 1.0], vec![0.5, 0.6]).is_err());
        assert!(DiscreteMass::new(vec![f64::NAN], vec![1.0]).is_err());
        assert!(DiscreteMass::normalized(vec![0.0, 1.0], vec![0.0, 0.0]).is_err());
        assert_eq!(DiscreteMass::normalized(vec![0.0, 1.0], vec![1.0, 3.0]).unwrap().mass(), &[0.25, 0.75]);
    }

    #[test]
    fn params_validation() {
        assert!(TransportParams::default().validate().is_ok());
        let bad = TransportParams { scaling: 1.0, ..Default::default() };
        assert!(bad.validate().is_err());
        let bad = TransportParams { blur: 0.0, ..Default::default() };
        assert!(bad.validate().is_err());
    }
}
