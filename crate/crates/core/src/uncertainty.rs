//! Per-pixel trust in a depth prior, read off the denoising trajectory of a
//! diffusion depth predictor.
//!
//! Pixels the predictor keeps revising are counted as uncertain; the count
//! is averaged with the count of a run on the mirrored image and multiplied
//! by the disagreement between the two final predictions.

use crate::io::{read_pfm, read_text, write_bytes, write_pfm};
use crate::{Error, Map2, Result};
use std::path::{Path, PathBuf};

/// Intermediate depth maps of one denoising run. `steps[0]` is the final
/// estimate `z_0`, `steps[t]` the estimate at time `t`.
#[derive(Debug, Clone, PartialEq)]
pub struct DenoisingTrajectory {
    steps: Vec<Map2>,
    pub source_image_id: usize,
}

impl DenoisingTrajectory {
    pub fn new(steps: Vec<Map2>, source_image_id: usize) -> Result<Self> {
        if steps.len() < 2 {
            return Err(Error::input(format!(
                "a trajectory needs at least 2 maps (T >= 1), got {}",
                steps.len()
            )));
        }
        for s in &steps[1..] {
            steps[0].check_same_shape(s)?;
        }
        if steps.iter().any(|s| s.data().iter().any(|v| !v.is_finite())) {
            return Err(Error::input("trajectory contains non-finite depth"));
        }
        Ok(Self {
            steps,
            source_image_id,
        })
    }

    /// Number of denoising transitions `T`.
    pub fn transitions(&self) -> usize {
        self.steps.len() - 1
    }

    pub fn steps(&self) -> &[Map2] {
        &self.steps
    }

    pub fn final_estimate(&self) -> &Map2 {
        &self.steps[0]
    }

    pub fn shape(&self) -> (usize, usize) {
        self.steps[0].shape()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct UncertaintyMap {
    /// Normalized to `[0, 1]`.
    pub values: Map2,
    /// Count times flip disagreement, before normalization.
    pub raw: Map2,
    pub tau_used: Option<f64>,
}

/// `τ = (max_depth - min_depth) · 1e-4`.
pub fn default_tau(max_depth: f64, min_depth: f64) -> Result<f64> {
    if !(max_depth > min_depth) {
        return Err(Error::input(format!(
            "max depth {max_depth} must exceed min depth {min_depth}"
        )));
    }
    Ok((max_depth - min_depth) * 0.0001)
}

/// Fraction of transitions whose update magnitude reaches `tau`:
/// `c = (1/T) Σ_t 1[|z_t - z_{t-1}| ≥ τ]`.
pub fn change_count(traj: &DenoisingTrajectory, tau: f64) -> Result<Map2> {
    if !(tau > 0.0) {
        return Err(Error::input(format!("tau must be positive, got {tau}")));
    }
    let t = traj.transitions();
    if t == 0 {
        return Err(Error::input("trajectory has no transitions"));
    }
    let (w, h) = traj.shape();
    let mut count = Map2::zeros(w, h);
    for pair in traj.steps.windows(2) {
        for ((c, a), b) in count.data_mut().iter_mut().zip(pair[0].data()).zip(pair[1].data()) {
            if (a - b).abs() >= tau {
                *c += 1.0;
            }
        }
    }
    Ok(count.map(|c| c / t as f64))
}

/// `U = (c(z|I) + M(c(z|M(I)))) / 2`, where `mirrored` ran on the mirrored
/// image and is un-mirrored here.
pub fn mirrored_count(
    traj: &DenoisingTrajectory,
    mirrored: &DenoisingTrajectory,
    tau: f64,
) -> Result<Map2> {
    let direct = change_count(traj, tau)?;
    let back = change_count(mirrored, tau)?.mirrored();
    direct.zip_with(&back, |a, b| 0.5 * (a + b))
}

/// `|z_0(I) - M(z_0(M(I)))|` per pixel. `z0_of_mirrored` is the raw final
/// prediction of the run on the mirrored image.
pub fn flip_consistency(z0: &Map2, z0_of_mirrored: &Map2) -> Result<Map2> {
    z0.zip_with(&z0_of_mirrored.mirrored(), |a, b| (a - b).abs())
}

/// `u = U · flip`, divided by its per-image maximum.
pub fn uncertainty_map(count: &Map2, flip: &Map2) -> Result<UncertaintyMap> {
    let raw = count.zip_with(flip, |u, f| u * f)?;
    if raw.data().iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
        return Err(Error::input("uncertainty inputs must be finite and nonnegative"));
    }
    let max = raw.max();
    let values = if max > 0.0 {
        raw.map(|v| (v / max).clamp(0.0, 1.0))
    } else {
        Map2::zeros(raw.width(), raw.height())
    };
    Ok(UncertaintyMap {
        values,
        raw,
        tau_used: None,
    })
}

/// The full chain from a trajectory pair to a normalized map.
pub fn from_trajectories(
    traj: &DenoisingTrajectory,
    mirrored: &DenoisingTrajectory,
    tau: f64,
) -> Result<UncertaintyMap> {
    let count = mirrored_count(traj, mirrored, tau)?;
    let flip = flip_consistency(traj.final_estimate(), mirrored.final_estimate())?;
    let mut u = uncertainty_map(&count, &flip)?;
    u.tau_used = Some(tau);
    Ok(u)
}

/// On-disk trajectory pair: `<dir>/step_####.pfm` for the direct run,
/// `<dir>/mirror/step_####.pfm` for the run on the mirrored image, and
/// `<dir>/manifest.txt`:
///
/// ```text
/// image_id 3
/// transitions 20
/// order final_first
/// mirrored mirror
/// ```
///
/// `order final_first` means `step_0000.pfm` holds `z_0`.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryPair {
    pub direct: DenoisingTrajectory,
    pub mirrored: DenoisingTrajectory,
}

fn step_name(t: usize) -> String {
    format!("step_{t:04}.pfm")
}

pub fn write_trajectory_pair(dir: &Path, pair: &TrajectoryPair) -> Result<()> {
    let t = pair.direct.transitions();
    if pair.mirrored.transitions() != t {
        return Err(Error::input("paired trajectories differ in length"));
    }
    for (i, m) in pair.direct.steps().iter().enumerate() {
        write_pfm(&dir.join(step_name(i)), m)?;
    }
    for (i, m) in pair.mirrored.steps().iter().enumerate() {
        write_pfm(&dir.join("mirror").join(step_name(i)), m)?;
    }
    let manifest = format!(
        "image_id {}\ntransitions {t}\norder final_first\nmirrored mirror\n",
        pair.direct.source_image_id
    );
    write_bytes(&dir.join("manifest.txt"), manifest.as_bytes())
}

pub fn read_trajectory_pair(dir: &Path) -> Result<TrajectoryPair> {
    let manifest_path = dir.join("manifest.txt");
    let text = read_text(&manifest_path)?;
    let mut image_id = None;
    let mut transitions = None;
    let mut order = "final_first".to_string();
    let mut mirrored = PathBuf::from("mirror");
    for line in text.lines().map(str::trim).filter(|l| !l.is_empty() && !l.starts_with('#')) {
        let (k, v) = line
            .split_once(char::is_whitespace)
            .ok_or_else(|| Error::format(&manifest_path, format!("bad line `{line}`")))?;
        let v = v.trim();
        let parse = |v: &str| {
            v.parse::<usize>()
                .map_err(|_| Error::format(&manifest_path, format!("`{k}` expects an integer")))
        };
        match k {
            "image_id" => image_id = Some(parse(v)?),
            "transitions" => transitions = Some(parse(v)?),
            "order" => order = v.to_string(),
            "mirrored" => mirrored = PathBuf::from(v),
            _ => return Err(Error::format(&manifest_path, format!("unknown key `{k}`"))),
        }
    }
    let image_id = image_id.ok_or_else(|| Error::format(&manifest_path, "missing image_id"))?;
    let t = transitions.ok_or_else(|| Error::format(&manifest_path, "missing transitions"))?;
    let load = |base: &Path| -> Result<Vec<Map2>> {
        let mut steps = (0..=t).map(|i| read_pfm(&base.join(step_name(i)))).collect::<Result<Vec<_>>>()?;
        match order.as_str() {
            "final_first" => {}
            "final_last" => steps.reverse(),
            other => return Err(Error::format(&manifest_path, format!("unknown order `{other}`"))),
        }
        Ok(steps)
    };
    Ok(TrajectoryPair {
        direct: DenoisingTrajectory::new(load(dir)?, image_id)?,
        mirrored: DenoisingTrajectory::new(load(&dir.join(&mirrored))?, image_id)?,
    })
}
