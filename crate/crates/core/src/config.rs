//! Training configuration and its flat `key = value` file format.
//!
//! A config file is a list of `key = value` lines; `#` starts a comment.
//! Two directives are understood:
//!
//! * `include = other.cfg` splices another file (path relative to the
//!   including file) at that position;
//! * `profile = desk | paper` resets every key to the named profile.
//!
//! Later assignments override earlier ones.

use crate::objective::LossWeights;
use crate::transport::{TransportMode, TransportParams};
use crate::{Error, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DepthLoss {
    None,
    L2,
    L2Hypothesis,
    Emd,
}

impl FromStr for DepthLoss {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(Self::None),
            "l2" => Ok(Self::L2),
            "l2h" => Ok(Self::L2Hypothesis),
            "emd" => Ok(Self::Emd),
            _ => Err(Error::Config(format!("unknown depth loss `{s}` (none, l2, l2h, emd)"))),
        }
    }
}

impl fmt::Display for DepthLoss {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::None => "none",
            Self::L2 => "l2",
            Self::L2Hypothesis => "l2h",
            Self::Emd => "emd",
        })
    }
}

/// Which network's termination distribution feeds the sample-based depth
/// losses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DistributionSource {
    Coarse,
    Fine,
}

impl FromStr for DistributionSource {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "coarse" => Ok(Self::Coarse),
            "fine" => Ok(Self::Fine),
            _ => Err(Error::Config(format!("unknown distribution source `{s}` (coarse, fine)"))),
        }
    }
}

impl fmt::Display for DistributionSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Coarse => "coarse",
            Self::Fine => "fine",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub seed: Option<u64>,
    pub steps: u64,
    pub rays_per_batch: usize,
    /// Rays per deterministic work unit; gradients are reduced in chunk order.
    pub chunk_rays: usize,
    pub n_coarse: usize,
    /// Fine draws per ray; 0 trains the coarse network alone.
    pub n_fine: usize,
    pub n_emd_samples: usize,
    pub lr: f64,
    pub lr_final: f64,
    pub lr_drop_fraction: f64,
    pub weight_decay: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub dropout_p: f64,
    pub trunk_depth: usize,
    pub trunk_width: usize,
    pub head_width: usize,
    pub pos_levels: usize,
    pub dir_levels: usize,
    pub loss: DepthLoss,
    pub weights: LossWeights,
    pub emd_mode: TransportMode,
    pub transport: TransportParams,
    pub uncertainty: bool,
    pub emd_source: DistributionSource,
    /// Apply the depth term to the coarse network as well as the fine one.
    pub coarse_depth_loss: bool,
    /// Let `u` reweight the coarse network's terms too.
    pub coarse_uncertainty: bool,
    /// Use every prior hypothesis as a target atom when a stack is present.
    pub hypotheses: bool,
    /// Leading steps trained on the photometric term only.
    pub warmup_steps: u64,
    pub prior_scale_init: f64,
    pub prior_scale_lr: f64,
    pub divergence_threshold: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self::desk()
    }
}

impl TrainConfig {
    /// Laptop-scale defaults.
    pub fn desk() -> Self {
        Self {
            seed: None,
            steps: 8000,
            rays_per_batch: 128,
            chunk_rays: 32,
            n_coarse: 32,
            n_fine: 32,
            n_emd_samples: 32,
            lr: 5e-4,
            lr_final: 5e-5,
            lr_drop_fraction: 0.8,
            weight_decay: 1e-6,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            dropout_p: 0.1,
            trunk_depth: 8,
            trunk_width: 64,
            head_width: 32,
            pos_levels: 6,
            dir_levels: 4,
            loss: DepthLoss::Emd,
            weights: LossWeights::default(),
            emd_mode: TransportMode::Exact,
            transport: TransportParams::default(),
            uncertainty: true,
            emd_source: DistributionSource::Fine,
            coarse_depth_loss: true,
            coarse_uncertainty: true,
            hypotheses: false,
            warmup_steps: 0,
            prior_scale_init: 1.0,
            prior_scale_lr: 1e-7,
            divergence_threshold: 1e6,
        }
    }

    /// Full-scale values of the original training recipe.
    pub fn paper() -> Self {
        Self {
            steps: 500_000,
            rays_per_batch: 1024,
            chunk_rays: 64,
            n_coarse: 64,
            n_fine: 128,
            n_emd_samples: 128,
            trunk_width: 256,
            head_width: 128,
            pos_levels: 10,
            dir_levels: 4,
            ..Self::desk()
        }
    }

    pub fn profile(name: &str) -> Result<Self> {
        match name {
            "desk" => Ok(Self::desk()),
            "paper" => Ok(Self::paper()),
            _ => Err(Error::Config(format!("unknown profile `{name}` (desk, paper)"))),
        }
    }

    pub fn seed(&self) -> Result<u64> {
        self.seed.ok_or_else(|| Error::Config("`seed` must be set".into()))
    }

    /// Learning rate at `step`: `lr` before the drop point, `lr_final` after.
    pub fn lr_at(&self, step: u64) -> f64 {
        if (step as f64) < self.lr_drop_fraction * self.steps as f64 {
            self.lr
        } else {
            self.lr_final
        }
    }

    pub fn depth_active_at(&self, step: u64) -> bool {
        self.loss != DepthLoss::None && self.weights.lambda > 0.0 && step >= self.warmup_steps
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        self.seed()?;
        for (name, v) in [
            ("rays_per_batch", self.rays_per_batch),
            ("chunk_rays", self.chunk_rays),
            ("n_emd_samples", self.n_emd_samples),
            ("trunk_depth", self.trunk_depth),
            ("trunk_width", self.trunk_width),
            ("head_width", self.head_width),
        ] {
            if v == 0 {
                return bad(format!("`{name}` must be positive"));
            }
        }
        if self.n_coarse < 2 {
            return bad("`n_coarse` must be at least 2".into());
        }
        if !(self.lr > 0.0 && self.lr_final > 0.0 && self.lr_final <= self.lr) {
            return bad(format!("need 0 < lr_final <= lr, got lr={} lr_final={}", self.lr, self.lr_final));
        }
        if !(0.0..=1.0).contains(&self.lr_drop_fraction) {
            return bad("`lr_drop_fraction` must lie in [0, 1]".into());
        }
        if !(0.0..1.0).contains(&self.dropout_p) {
            return bad("`dropout_p` must lie in [0, 1)".into());
        }
        if !(self.weight_decay >= 0.0 && self.prior_scale_lr >= 0.0) {
            return bad("weight decay and prior-scale learning rate must be >= 0".into());
        }
        if !(0.0..1.0).contains(&self.adam_beta1) || !(0.0..1.0).contains(&self.adam_beta2) || !(self.adam_eps > 0.0) {
            return bad("Adam needs betas in [0, 1) and eps > 0".into());
        }
        if !(self.prior_scale_init > 0.0 && self.prior_scale_init.is_finite()) {
            return bad("`prior_scale_init` must be positive".into());
        }
        if !(self.divergence_threshold > 0.0) {
            return bad("`divergence_threshold` must be positive".into());
        }
        if self.n_fine == 0 && self.emd_source == DistributionSource::Fine && self.loss != DepthLoss::None {
            // a coarse-only model has no fine distribution to draw from
            return bad("`emd_source = fine` needs `n_fine > 0`".into());
        }
        self.weights.validate()?;
        self.transport.validate().map_err(|e| Error::Config(e.to_string()))
    }

    /// Assigns one key.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn p<T: FromStr>(key: &str, v: &str) -> Result<T> {
            v.parse()
                .map_err(|_| Error::Config(format!("cannot parse `{v}` for `{key}`")))
        }
        fn onoff(key: &str, v: &str) -> Result<bool> {
            match v {
                "on" | "true" | "yes" | "1" => Ok(true),
                "off" | "false" | "no" | "0" => Ok(false),
                _ => Err(Error::Config(format!("`{key}` expects on/off, got `{v}`"))),
            }
        }
        match key {
            "seed" => self.seed = Some(p(key, value)?),
            "steps" => self.steps = p(key, value)?,
            "rays_per_batch" => self.rays_per_batch = p(key, value)?,
            "chunk_rays" => self.chunk_rays = p(key, value)?,
            "n_coarse" => self.n_coarse = p(key, value)?,
            "n_fine" => self.n_fine = p(key, value)?,
            "n_emd_samples" => self.n_emd_samples = p(key, value)?,
            "lr" => self.lr = p(key, value)?,
            "lr_final" => self.lr_final = p(key, value)?,
            "lr_drop_fraction" => self.lr_drop_fraction = p(key, value)?,
            "weight_decay" => self.weight_decay = p(key, value)?,
            "adam_beta1" => self.adam_beta1 = p(key, value)?,
            "adam_beta2" => self.adam_beta2 = p(key, value)?,
            "adam_eps" => self.adam_eps = p(key, value)?,
            "dropout_p" => self.dropout_p = p(key, value)?,
            "trunk_depth" => self.trunk_depth = p(key, value)?,
            "trunk_width" => self.trunk_width = p(key, value)?,
            "head_width" => self.head_width = p(key, value)?,
            "pos_levels" => self.pos_levels = p(key, value)?,
            "dir_levels" => self.dir_levels = p(key, value)?,
            "loss" => self.loss = value.parse()?,
            "lambda" => self.weights.lambda = p(key, value)?,
            "gamma" => self.weights.gamma = p(key, value)?,
            "emd_mode" => self.emd_mode = value.parse()?,
            "blur" => self.transport.blur = p(key, value)?,
            "scaling" => self.transport.scaling = p(key, value)?,
            "max_iters" => self.transport.max_iters = p(key, value)?,
            "tolerance" => self.transport.tolerance = p(key, value)?,
            "cost_p" => self.transport.p = p(key, value)?,
            "uncertainty" => self.uncertainty = onoff(key, value)?,
            "emd_source" => self.emd_source = value.parse()?,
            "coarse_depth_loss" => self.coarse_depth_loss = onoff(key, value)?,
            "coarse_uncertainty" => self.coarse_uncertainty = onoff(key, value)?,
            "hypotheses" => self.hypotheses = onoff(key, value)?,
            "warmup_steps" => self.warmup_steps = p(key, value)?,
            "prior_scale_init" => self.prior_scale_init = p(key, value)?,
            "prior_scale_lr" => self.prior_scale_lr = p(key, value)?,
            "divergence_threshold" => self.divergence_threshold = p(key, value)?,
            _ => return Err(Error::Config(format!("unknown config key `{key}`"))),
        }
        Ok(())
    }

    /// Canonical text form; parsing it back gives an identical config.
    pub fn to_kv(&self) -> String {
        let onoff = |b: bool| if b { "on" } else { "off" };
        let mut lines = Vec::new();
        if let Some(s) = self.seed {
            lines.push(format!("seed = {s}"));
        }
        let kv: Vec<(&str, String)> = vec![
            ("steps", self.steps.to_string()),
            ("rays_per_batch", self.rays_per_batch.to_string()),
            ("chunk_rays", self.chunk_rays.to_string()),
            ("n_coarse", self.n_coarse.to_string()),
            ("n_fine", self.n_fine.to_string()),
            ("n_emd_samples", self.n_emd_samples.to_string()),
            ("lr", self.lr.to_string()),
            ("lr_final", self.lr_final.to_string()),
            ("lr_drop_fraction", self.lr_drop_fraction.to_string()),
            ("weight_decay", self.weight_decay.to_string()),
            ("adam_beta1", self.adam_beta1.to_string()),
            ("adam_beta2", self.adam_beta2.to_string()),
            ("adam_eps", self.adam_eps.to_string()),
            ("dropout_p", self.dropout_p.to_string()),
            ("trunk_depth", self.trunk_depth.to_string()),
            ("trunk_width", self.trunk_width.to_string()),
            ("head_width", self.head_width.to_string()),
            ("pos_levels", self.pos_levels.to_string()),
            ("dir_levels", self.dir_levels.to_string()),
            ("loss", self.loss.to_string()),
            ("lambda", self.weights.lambda.to_string()),
            ("gamma", self.weights.gamma.to_string()),
            ("emd_mode", self.emd_mode.to_string()),
            ("blur", self.transport.blur.to_string()),
            ("scaling", self.transport.scaling.to_string()),
            ("max_iters", self.transport.max_iters.to_string()),
            ("tolerance", self.transport.tolerance.to_string()),
            ("cost_p", self.transport.p.to_string()),
            ("uncertainty", onoff(self.uncertainty).into()),
            ("emd_source", self.emd_source.to_string()),
            ("coarse_depth_loss", onoff(self.coarse_depth_loss).into()),
            ("coarse_uncertainty", onoff(self.coarse_uncertainty).into()),
            ("hypotheses", onoff(self.hypotheses).into()),
            ("warmup_steps", self.warmup_steps.to_string()),
            ("prior_scale_init", self.prior_scale_init.to_string()),
            ("prior_scale_lr", self.prior_scale_lr.to_string()),
            ("divergence_threshold", self.divergence_threshold.to_string()),
        ];
        lines.extend(kv.into_iter().map(|(k, v)| format!("{k} = {v}")));
        let mut s = lines.join("\n");
        s.push('\n');
        s
    }

    /// Hex SHA-256 of the canonical text.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_kv().as_bytes()))
    }

    /// Parses config text starting from the desk profile. `base` resolves
    /// relative `include` paths.
    pub fn parse(text: &str, base: &Path) -> Result<Self> {
        let mut cfg = Self::desk();
        apply_text(&mut cfg, text, base, 0)?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = read_config(path)?;
        Self::parse(&text, path.parent().unwrap_or(Path::new(".")))
    }
}

const MAX_INCLUDE_DEPTH: usize = 16;

fn read_config(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))
}

fn apply_text(cfg: &mut TrainConfig, text: &str, base: &Path, depth: usize) -> Result<()> {
    if depth > MAX_INCLUDE_DEPTH {
        return Err(Error::Config("include nesting too deep (cycle?)".into()));
    }
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .map(|(k, v)| (k.trim(), v.trim()))
            .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`, got `{line}`", lineno + 1)))?;
        match key {
            "include" => {
                let path = base.join(value);
                let inner = read_config(&path)?;
                apply_text(cfg, &inner, path.parent().unwrap_or(base), depth + 1)?;
            }
            "profile" => {
                let seed = cfg.seed;
                *cfg = TrainConfig::profile(value)?;
                cfg.seed = seed;
            }
            _ => cfg
                .set(key, value)
                .map_err(|e| Error::Config(format!("line {}: {e}", lineno + 1)))?,
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_drops_at_eighty_percent() {
        let c = TrainConfig {
            steps: 1000,
            ..TrainConfig::desk()
        };
        assert_eq!(c.lr_at(0), 5e-4);
        assert_eq!(c.lr_at(799), 5e-4);
        assert_eq!(c.lr_at(800), 5e-5);
        assert_eq!(c.lr_at(999), 5e-5);
    }

    #[test]
    fn training_defaults() {
        let c = TrainConfig::paper();
        assert_eq!(c.rays_per_batch, 1024);
        assert_eq!((c.n_coarse, c.n_fine, c.n_emd_samples), (64, 128, 128));
        assert_eq!(c.steps, 500_000);
        assert_eq!((c.dropout_p, c.weight_decay, c.prior_scale_lr), (0.1, 1e-6, 1e-7));
        assert_eq!((c.weights.lambda, c.weights.gamma), (0.007, 1.0));
    }

    #[test]
    fn canonical_text_round_trips() {
        let mut c = TrainConfig::desk();
        c.seed = Some(7);
        c.loss = DepthLoss::L2Hypothesis;
        c.transport.blur = 0.01;
        c.uncertainty = false;
        let back = TrainConfig::parse(&c.to_kv(), Path::new(".")).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.hash(), c.hash());
    }

    #[test]
    fn include_and_profile() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("base.cfg"), "profile = paper\nsteps = 10 # short\n").unwrap();
        std::fs::write(dir.path().join("run.cfg"), "seed = 3\ninclude = base.cfg\nloss = l2\n").unwrap();
        let c = TrainConfig::from_file(&dir.path().join("run.cfg")).unwrap();
        assert_eq!(c.seed, Some(3));
        assert_eq!(c.steps, 10);
        assert_eq!(c.rays_per_batch, 1024);
        assert_eq!(c.loss, DepthLoss::L2);
        c.validate().unwrap();
    }

    #[test]
    fn errors_are_config_errors() {
        let base = Path::new(".");
        for text in ["bogus = 1", "steps = many", "no equals sign", "loss = kl", "profile = huge"] {
            assert!(matches!(TrainConfig::parse(text, base), Err(Error::Config(_))), "{text}");
        }
        assert!(matches!(TrainConfig::desk().validate(), Err(Error::Config(_))));
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("a.cfg"), "include = a.cfg\n").unwrap();
        assert!(TrainConfig::from_file(&dir.path().join("a.cfg")).is_err());
    }
}
