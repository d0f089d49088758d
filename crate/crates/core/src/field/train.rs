//! The training loop: ray batches, coarse/fine rendering, the weighted
//! objective with its hand-derived gradients, and the optimizer step.

use super::adam::{Adam, AdamParams};
use super::checkpoint::Checkpoint;
use super::mlp::{Bounds, Dropout, Field, FieldArch};
use crate::config::{DepthLoss, DistributionSource, TrainConfig};
use crate::raydist::{
    build_distribution, fine_resample, fine_resample_at, inverse_transform_backward, inverse_transform_sample,
    normalize_backward, normalize_weights, stratified_quantiles, NormalizedWeights, TerminationDistribution,
    EMPTY_EPSILON,
};
use crate::raymarch::{compute_weights, render_color, render_depth, segment_deltas, stratified_distances, RayWeights};
use crate::rng::{self, Purpose};
use crate::scenesim::SceneDataset;
use crate::transport::{emd_loss, DiscreteMass};
use crate::{Error, Result};
use nalgebra::Vector3;
use rand::Rng;
use rayon::prelude::*;

/// Both networks and the learnable prior scale.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub coarse: Field,
    /// Absent when `n_fine = 0`.
    pub fine: Option<Field>,
    pub prior_scale: f64,
}

impl Model {
    pub fn new(cfg: &TrainConfig, bounds: Bounds) -> Result<Self> {
        let seed = cfg.seed()?;
        let arch = FieldArch::from_config(cfg);
        Ok(Self {
            coarse: Field::new(arch, bounds, seed, 0),
            fine: (cfg.n_fine > 0).then(|| Field::new(arch, bounds, seed, 1)),
            prior_scale: cfg.prior_scale_init,
        })
    }

    pub fn checkpoint(&self, step: u64, config_hash: &str) -> Checkpoint {
        Checkpoint {
            step,
            config_hash: config_hash.to_string(),
            prior_scale: self.prior_scale,
            coarse: self.coarse.clone(),
            fine: self.fine.clone(),
        }
    }

    pub fn from_checkpoint(c: &Checkpoint) -> Self {
        Self {
            coarse: c.coarse.clone(),
            fine: c.fine.clone(),
            prior_scale: c.prior_scale,
        }
    }
}

/// One supervised ray.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainRay {
    pub origin: Vector3<f64>,
    /// Unit direction.
    pub direction: Vector3<f64>,
    pub color: [f64; 3],
    /// Unscaled prior termination distances along the ray (one per
    /// hypothesis).
    pub prior: Vec<f64>,
    pub u: f64,
    /// Keys the ray's random streams; the global pixel id.
    pub key: u64,
}

/// Everything besides the model and rays that one evaluation of the
/// objective depends on.
#[derive(Debug, Clone, Copy)]
pub struct StepInputs<'a> {
    pub cfg: &'a TrainConfig,
    pub seed: u64,
    pub step: u64,
    pub near: f64,
    pub far: f64,
    /// Stratified jitter and dropout on; off gives the deterministic
    /// evaluation sampling.
    pub train: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub coarse: Field,
    pub fine: Option<Field>,
    pub prior_scale: f64,
}

impl Gradients {
    fn zeros(model: &Model) -> Self {
        Self {
            coarse: model.coarse.zeros_like(),
            fine: model.fine.as_ref().map(Field::zeros_like),
            prior_scale: 0.0,
        }
    }

    fn add(&mut self, other: &Gradients) {
        self.coarse.add_assign(&other.coarse);
        if let (Some(a), Some(b)) = (&mut self.fine, &other.fine) {
            a.add_assign(b);
        }
        self.prior_scale += other.prior_scale;
    }

    pub fn is_finite(&self) -> bool {
        self.coarse.is_finite() && self.fine.as_ref().is_none_or(Field::is_finite) && self.prior_scale.is_finite()
    }
}

/// Batch-mean losses and their gradients.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchOutput {
    /// Mean over rays of the summed coarse and fine photometric terms.
    pub photo: f64,
    /// Mean over rays of the unweighted depth terms.
    pub depth: f64,
    /// The optimized objective.
    pub total: f64,
    /// Fraction of (ray, network) pairs flagged empty.
    pub empty_fraction: f64,
    pub grads: Gradients,
}

const COARSE: u64 = 0;
const FINE: u64 = 1;

/// Midpoints of `n` equal bins over `[near, far]`.
pub fn bin_centers(near: f64, far: f64, n: usize) -> Vec<f64> {
    let w = (far - near) / n as f64;
    (0..n).map(|k| near + (k as f64 + 0.5) * w).collect()
}

/// Quantiles `(k + 0.5) / n`.
pub fn mid_quantiles(n: usize) -> Vec<f64> {
    (0..n).map(|k| (k as f64 + 0.5) / n as f64).collect()
}

/// Per-ray rendering state of one network.
pub(crate) struct NetRay {
    pub distances: Vec<f64>,
    pub deltas: Vec<f64>,
    pub rw: RayWeights,
    pub colors: Vec<[f64; 3]>,
    pub color: [f64; 3],
    pub depth: f64,
    pub norm: NormalizedWeights,
    pub dist: TerminationDistribution,
}

pub(crate) struct NetPass {
    pub rays: Vec<NetRay>,
    pub cache: super::mlp::ForwardCache,
}

/// Queries `field` at the given per-ray distances and renders each ray.
pub(crate) fn run_net(
    field: &Field,
    origins: &[Vector3<f64>],
    directions: &[Vector3<f64>],
    distances: Vec<Vec<f64>>,
    near: f64,
    far: f64,
    dropout: Option<Dropout>,
) -> Result<NetPass> {
    let per = distances.first().map_or(0, Vec::len);
    let mut points = Vec::with_capacity(per * distances.len());
    let mut dirs = Vec::with_capacity(per * distances.len());
    for ((o, d), ts) in origins.iter().zip(directions).zip(&distances) {
        for &t in ts {
            points.push(o + d * t);
            dirs.push(*d);
        }
    }
    let (pe, de) = field.encode(&points, &dirs);
    let (out, cache) = field.forward(&pe, &de, dropout)?;
    let mut rays = Vec::with_capacity(distances.len());
    for (r, ts) in distances.into_iter().enumerate() {
        let span = r * per..(r + 1) * per;
        let deltas = segment_deltas(&ts, far)?;
        let rw = compute_weights(&out.sigma[span.clone()], &deltas)?;
        let colors = out.color[span].to_vec();
        let color = render_color(&rw.weights, &colors)?;
        let depth = render_depth(&rw.weights, &ts)?;
        let norm = normalize_weights(&rw.weights, EMPTY_EPSILON)?;
        let dist = build_distribution(&norm, &ts, near, far)?;
        rays.push(NetRay {
            distances: ts,
            deltas,
            rw,
            colors,
            color,
            depth,
            norm,
            dist,
        });
    }
    Ok(NetPass { rays, cache })
}

/// Fine distances for each ray: jittered draws when training, mid-quantile
/// draws otherwise.
pub(crate) fn fine_distances(coarse: &NetPass, n_fine: usize, inp: &StepInputs<'_>, keys: &[u64]) -> Result<Vec<Vec<f64>>> {
    coarse
        .rays
        .iter()
        .zip(keys)
        .map(|(r, &key)| {
            if inp.train {
                let mut g = rng::stream(inp.seed, Purpose::FineResample, &[inp.step, key]);
                fine_resample(&r.dist, &r.distances, n_fine, &mut g)
            } else {
                fine_resample_at(&r.dist, &r.distances, &mid_quantiles(n_fine))
            }
        })
        .collect()
}

fn dropout_for(inp: &StepInputs<'_>, net: u64, chunk: u64) -> Option<Dropout> {
    (inp.train && inp.cfg.dropout_p > 0.0).then(|| Dropout {
        p: inp.cfg.dropout_p,
        key: rng::mix(&[inp.seed, Purpose::Dropout as u64, inp.step, net, chunk]),
    })
}

/// Loss of one network on one ray and `dL/dw`, `dL/dc`, `dL/ds`.
struct RayTerm {
    photo: f64,
    depth: f64,
    total: f64,
    empty: bool,
    grad_w: Vec<f64>,
    grad_c: Vec<[f64; 3]>,
    grad_scale: f64,
}

fn ray_term(
    nr: &NetRay,
    ray: &TrainRay,
    u: f64,
    depth_on: bool,
    scale: f64,
    net: u64,
    inp: &StepInputs<'_>,
) -> Result<RayTerm> {
    let cfg = inp.cfg;
    let n = nr.distances.len();
    let (cp, cd) = cfg.weights.coefficients(u, nr.norm.empty);
    let resid: [f64; 3] = std::array::from_fn(|k| nr.color[k] - ray.color[k]);
    let photo: f64 = resid.iter().map(|r| r * r).sum();
    let mut grad_w: Vec<f64> = nr.colors.iter().map(|c| cp * 2.0 * (0..3).map(|k| resid[k] * c[k]).sum::<f64>()).collect();
    let grad_c = nr.rw.weights.iter().map(|&w| std::array::from_fn(|k| cp * 2.0 * resid[k] * w)).collect();
    let mut term = RayTerm {
        photo,
        depth: 0.0,
        total: cp * photo,
        empty: nr.norm.empty,
        grad_w: Vec::new(),
        grad_c,
        grad_scale: 0.0,
    };
    if depth_on && !nr.norm.empty {
        let t0 = ray.prior[0];
        let (depth, gw_depth, g_scale) = match cfg.loss {
            DepthLoss::None => unreachable!("depth disabled"),
            DepthLoss::L2 => {
                let r = nr.depth - scale * t0;
                (r * r, nr.distances.iter().map(|t| 2.0 * r * t).collect::<Vec<_>>(), -2.0 * r * t0)
            }
            DepthLoss::L2Hypothesis | DepthLoss::Emd => {
                let mut g = rng::stream(inp.seed, Purpose::EmdQuantiles, &[inp.step, ray.key, net]);
                let q = if inp.train {
                    stratified_quantiles(cfg.n_emd_samples, &mut g)
                } else {
                    mid_quantiles(cfg.n_emd_samples)
                };
                let samples = inverse_transform_sample(&nr.dist, &q)?;
                let (value, grad_y, g_scale) = if cfg.loss == DepthLoss::Emd {
                    let a = DiscreteMass::uniform(samples.values.clone())?;
                    let atoms: Vec<f64> = if cfg.hypotheses { ray.prior.clone() } else { vec![t0] };
                    let b = DiscreteMass::uniform(atoms.iter().map(|z| scale * z).collect())?;
                    let tv = emd_loss(&a, &b, cfg.emd_mode, &cfg.transport)?;
                    let gs: f64 = tv.grad_b.iter().zip(&atoms).map(|(g, z)| g * z).sum();
                    (tv.value, tv.grad_a, gs)
                } else {
                    let m = samples.values.len() as f64;
                    let target = scale * t0;
                    let v = samples.values.iter().map(|y| (y - target).powi(2)).sum::<f64>() / m;
                    let gy: Vec<f64> = samples.values.iter().map(|y| 2.0 * (y - target) / m).collect();
                    let gs = -gy.iter().sum::<f64>() * t0;
                    (v, gy, gs)
                };
                if !(value.is_finite() && grad_y.iter().all(|g| g.is_finite()) && g_scale.is_finite()) {
                    return Err(Error::NonFiniteGradient { stage: "transport" });
                }
                let gp = inverse_transform_backward(&nr.dist, &samples, &grad_y);
                (value, normalize_backward(&nr.norm, &gp), g_scale)
            }
        };
        term.depth = depth;
        term.total += cd * depth;
        term.grad_scale = cd * g_scale;
        for (a, b) in grad_w.iter_mut().zip(&gw_depth) {
            *a += cd * b;
        }
    }
    debug_assert_eq!(grad_w.len(), n);
    term.grad_w = grad_w;
    Ok(term)
}

struct ChunkOut {
    photo: f64,
    depth: f64,
    total: f64,
    empty: usize,
    pairs: usize,
    grads: Gradients,
}

fn chunk_pass(model: &Model, rays: &[TrainRay], chunk: u64, batch: usize, inp: &StepInputs<'_>) -> Result<ChunkOut> {
    let cfg = inp.cfg;
    let keys: Vec<u64> = rays.iter().map(|r| r.key).collect();
    let origins: Vec<_> = rays.iter().map(|r| r.origin).collect();
    let dirs: Vec<_> = rays.iter().map(|r| r.direction).collect();
    let coarse_t = rays
        .iter()
        .map(|r| {
            if inp.train {
                let mut g = rng::stream(inp.seed, Purpose::Stratified, &[inp.step, r.key]);
                stratified_distances(inp.near, inp.far, cfg.n_coarse, &mut g)
            } else {
                Ok(bin_centers(inp.near, inp.far, cfg.n_coarse))
            }
        })
        .collect::<Result<Vec<_>>>()?;
    let coarse = run_net(&model.coarse, &origins, &dirs, coarse_t, inp.near, inp.far, dropout_for(inp, COARSE, chunk))?;
    let fine = match &model.fine {
        Some(f) => {
            let ft = fine_distances(&coarse, cfg.n_fine, inp, &keys)?;
            Some(run_net(f, &origins, &dirs, ft, inp.near, inp.far, dropout_for(inp, FINE, chunk))?)
        }
        None => None,
    };

    let active = cfg.depth_active_at(inp.step);
    let sample_based = matches!(cfg.loss, DepthLoss::Emd | DepthLoss::L2Hypothesis);
    let source_coarse = sample_based && cfg.emd_source == DistributionSource::Coarse;
    let has_fine = fine.is_some();
    let depth_on = |net: u64| {
        active
            && match (net, has_fine) {
                (COARSE, false) => true,
                (COARSE, true) => cfg.coarse_depth_loss || source_coarse,
                _ => !source_coarse,
            }
    };
    // without a depth term (loss off, λ = 0 or warmup) the objective is the
    // plain photometric one, so u has nothing to trade off against
    let u_for = |net: u64, u: f64| {
        if !active || (net == COARSE && has_fine && !cfg.coarse_uncertainty) {
            0.0
        } else {
            u
        }
    };

    let inv_b = 1.0 / batch as f64;
    let mut out = ChunkOut {
        photo: 0.0,
        depth: 0.0,
        total: 0.0,
        empty: 0,
        pairs: 0,
        grads: Gradients::zeros(model),
    };
    let nets: Vec<(u64, &Field, &NetPass)> = std::iter::once((COARSE, &model.coarse, &coarse))
        .chain(fine.as_ref().map(|p| (FINE, model.fine.as_ref().unwrap(), p)))
        .collect();
    for (net, field, pass) in nets {
        let per = pass.rays[0].distances.len();
        let mut grad_sigma = Vec::with_capacity(per * rays.len());
        let mut grad_color = Vec::with_capacity(per * rays.len());
        for (ray, nr) in rays.iter().zip(&pass.rays) {
            let mut t = ray_term(nr, ray, u_for(net, ray.u), depth_on(net), model.prior_scale, net, inp)?;
            out.photo += t.photo;
            out.depth += t.depth;
            out.total += t.total;
            out.empty += t.empty as usize;
            out.pairs += 1;
            out.grads.prior_scale += t.grad_scale * inv_b;
            t.grad_w.iter_mut().for_each(|g| *g *= inv_b);
            let gs = crate::raymarch::weights_backward(&nr.deltas, &nr.rw, &t.grad_w);
            if gs.iter().any(|g| !g.is_finite()) {
                return Err(Error::NonFiniteGradient { stage: "weights" });
            }
            grad_sigma.extend(gs);
            grad_color.extend(t.grad_c.iter().map(|c| c.map(|v| v * inv_b)));
        }
        let target = if net == COARSE { &mut out.grads.coarse } else { out.grads.fine.as_mut().unwrap() };
        field.backward(&pass.cache, &grad_sigma, &grad_color, target);
    }
    if !out.grads.is_finite() {
        return Err(Error::NonFiniteGradient { stage: "mlp" });
    }
    Ok(out)
}

/// Batch-mean objective and gradients. Rays are processed in chunks of
/// `chunk_rays` (in parallel) and reduced in chunk order, so the result does
/// not depend on the number of worker threads.
pub fn loss_and_grads(model: &Model, rays: &[TrainRay], inp: &StepInputs<'_>) -> Result<BatchOutput> {
    if rays.is_empty() {
        return Err(Error::input("empty ray batch"));
    }
    let chunk = inp.cfg.chunk_rays.max(1);
    let parts: Vec<Result<ChunkOut>> = rays
        .par_chunks(chunk)
        .enumerate()
        .map(|(i, c)| chunk_pass(model, c, i as u64, rays.len(), inp))
        .collect();
    let mut grads = Gradients::zeros(model);
    let (mut photo, mut depth, mut total) = (0.0, 0.0, 0.0);
    let (mut empty, mut pairs) = (0, 0);
    for p in parts {
        let p = p?;
        grads.add(&p.grads);
        photo += p.photo;
        depth += p.depth;
        total += p.total;
        empty += p.empty;
        pairs += p.pairs;
    }
    let b = rays.len() as f64;
    Ok(BatchOutput {
        photo: photo / b,
        depth: depth / b,
        total: total / b,
        empty_fraction: empty as f64 / pairs as f64,
        grads,
    })
}

/// Training pixels flattened over all training views.
pub struct RayPool {
    rays: Vec<TrainRay>,
}

impl RayPool {
    /// Every pixel of every training view. `u` is zeroed when uncertainty
    /// weighting is off.
    pub fn from_dataset(ds: &SceneDataset, cfg: &TrainConfig) -> Result<Self> {
        let mut rays = Vec::new();
        for v in ds.train_views() {
            let prior = v
                .prior
                .as_ref()
                .ok_or_else(|| Error::format("scene.json", format!("training view {} has no prior", v.index)))?;
            let cam = &v.camera;
            for y in 0..cam.height {
                for x in 0..cam.width {
                    let (origin, direction) = cam.pixel_ray(x, y);
                    let cos = cam.pixel_cos(x, y);
                    let mut atoms = vec![prior.depth.get(x, y) / cos];
                    if cfg.hypotheses {
                        atoms.extend(prior.hypotheses.iter().skip(1).map(|h| h.get(x, y) / cos));
                    }
                    rays.push(TrainRay {
                        origin,
                        direction,
                        color: v.rgb.get(x, y),
                        prior: atoms,
                        u: if cfg.uncertainty { prior.uncertainty.get(x, y) } else { 0.0 },
                        key: rays.len() as u64,
                    });
                }
            }
        }
        if rays.is_empty() {
            return Err(Error::format("scene.json", "dataset has no training views"));
        }
        Ok(Self { rays })
    }

    pub fn len(&self) -> usize {
        self.rays.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rays.is_empty()
    }

    /// Uniform draws with replacement, keyed by `(seed, step)`.
    pub fn batch(&self, seed: u64, step: u64, n: usize) -> Vec<TrainRay> {
        let mut g = rng::stream(seed, Purpose::RaySelect, &[step]);
        (0..n).map(|_| self.rays[g.random_range(0..self.rays.len())].clone()).collect()
    }
}

/// One line of the loss log.
#[derive(Debug, Clone, PartialEq)]
pub struct LossRecord {
    pub step: u64,
    pub photo: f64,
    pub depth: f64,
    pub total: f64,
    pub lr: f64,
    pub scale: f64,
}

pub const LOSS_LOG_HEADER: &str = "step,photo,depth,total,lr,scale";

impl LossRecord {
    pub fn csv_line(&self) -> String {
        format!("{},{},{},{},{},{}", self.step, self.photo, self.depth, self.total, self.lr, self.scale)
    }
}

pub fn loss_log_csv(records: &[LossRecord]) -> String {
    let mut s = String::from(LOSS_LOG_HEADER);
    s.push('\n');
    for r in records {
        s.push_str(&r.csv_line());
        s.push('\n');
    }
    s
}

/// Stateful optimizer loop.
pub struct Trainer {
    cfg: TrainConfig,
    seed: u64,
    config_hash: String,
    near: f64,
    far: f64,
    pool: RayPool,
    model: Model,
    adam_coarse: Adam,
    adam_fine: Option<Adam>,
    adam_scale: Adam,
    step: u64,
}

impl Trainer {
    pub fn new(cfg: &TrainConfig, ds: &SceneDataset) -> Result<Self> {
        cfg.validate()?;
        let seed = cfg.seed()?;
        let (lo, hi) = ds.bounds();
        let model = Model::new(cfg, Bounds::from_box(lo, hi))?;
        let adam = AdamParams {
            beta1: cfg.adam_beta1,
            beta2: cfg.adam_beta2,
            eps: cfg.adam_eps,
            weight_decay: cfg.weight_decay,
        };
        // the prior scale is exempt from weight decay
        let scale_adam = AdamParams { weight_decay: 0.0, ..adam };
        Ok(Self {
            cfg: cfg.clone(),
            seed,
            config_hash: cfg.hash(),
            near: ds.near(),
            far: ds.far(),
            pool: RayPool::from_dataset(ds, cfg)?,
            adam_coarse: Adam::new(model.coarse.param_count(), adam),
            adam_fine: model.fine.as_ref().map(|f| Adam::new(f.param_count(), adam)),
            adam_scale: Adam::new(1, scale_adam),
            model,
            step: 0,
        })
    }

    pub fn model(&self) -> &Model {
        &self.model
    }

    pub fn step_index(&self) -> u64 {
        self.step
    }

    pub fn checkpoint(&self) -> Checkpoint {
        self.model.checkpoint(self.step, &self.config_hash)
    }

    /// One optimizer step. A non-finite or oversized loss aborts with the
    /// current (last finite) state.
    pub fn step(&mut self) -> Result<LossRecord> {
        let step = self.step;
        let rays = self.pool.batch(self.seed, step, self.cfg.rays_per_batch);
        let inp = StepInputs {
            cfg: &self.cfg,
            seed: self.seed,
            step,
            near: self.near,
            far: self.far,
            train: true,
        };
        let out = loss_and_grads(&self.model, &rays, &inp)?;
        if !out.total.is_finite() || out.total > self.cfg.divergence_threshold {
            return Err(Error::Diverged {
                step,
                loss: out.total,
                last_finite: Box::new(self.checkpoint()),
            });
        }
        let lr = self.cfg.lr_at(step);
        self.adam_coarse.update_field(&mut self.model.coarse, &out.grads.coarse, lr);
        if let (Some(f), Some(a), Some(g)) = (&mut self.model.fine, &mut self.adam_fine, &out.grads.fine) {
            a.update_field(f, g, lr);
        }
        if self.cfg.depth_active_at(step) {
            self.adam_scale
                .update_scalar(&mut self.model.prior_scale, out.grads.prior_scale, self.cfg.prior_scale_lr);
            self.model.prior_scale = self.model.prior_scale.max(f64::MIN_POSITIVE);
        }
        self.step += 1;
        Ok(LossRecord {
            step,
            photo: out.photo,
            depth: out.depth,
            total: out.total,
            lr,
            scale: self.model.prior_scale,
        })
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutput {
    pub checkpoint: Checkpoint,
    pub log: Vec<LossRecord>,
}

/// Runs `cfg.steps` steps, calling `on_step` after each.
pub fn train_with(cfg: &TrainConfig, ds: &SceneDataset, mut on_step: impl FnMut(&LossRecord)) -> Result<TrainOutput> {
    let mut t = Trainer::new(cfg, ds)?;
    let mut log = Vec::with_capacity(cfg.steps as usize);
    for _ in 0..cfg.steps {
        let r = t.step()?;
        on_step(&r);
        log.push(r);
    }
    Ok(TrainOutput {
        checkpoint: t.checkpoint(),
        log,
    })
}

pub fn train(cfg: &TrainConfig, ds: &SceneDataset) -> Result<TrainOutput> {
    train_with(cfg, ds, |_| {})
}
