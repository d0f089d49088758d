//! Helpers shared by the integration tests and the acceptance runner.

#![allow(dead_code)]

use emdnerf::config::{DepthLoss, DistributionSource, TrainConfig};
use emdnerf::field::{loss_and_grads, Bounds, Field, FieldArch, Model, StepInputs, TrainRay};
use emdnerf::transport::TransportMode;
use nalgebra::Vector3;

/// Result of comparing analytic gradients of the full objective with
/// central differences.
#[derive(Debug, Clone, Copy)]
pub struct GradCheck {
    pub max_rel: f64,
    pub params: usize,
    pub prior_scale_rel: f64,
}

/// Relative error with a floor that keeps vanishing gradients from
/// dividing noise by noise.
pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-7)
}

fn flat(f: &Field) -> Vec<f64> {
    f.tensors().into_iter().flat_map(|(_, _, t)| t.to_vec()).collect()
}

/// Two-layer, eight-unit coarse field; four rays with different
/// uncertainties and priors.
pub fn gradcheck_setup(mode: TransportMode, seed: u64) -> (TrainConfig, Model, Vec<TrainRay>) {
    let cfg = TrainConfig {
        seed: Some(seed),
        trunk_depth: 2,
        trunk_width: 8,
        head_width: 8,
        pos_levels: 2,
        dir_levels: 1,
        n_coarse: 12,
        n_fine: 0,
        n_emd_samples: 9,
        dropout_p: 0.0,
        chunk_rays: 2,
        loss: DepthLoss::Emd,
        emd_mode: mode,
        emd_source: DistributionSource::Coarse,
        uncertainty: true,
        ..TrainConfig::desk()
    };
    let bounds = Bounds::from_box([-1.0, -1.0, -1.0], [1.0, 1.0, 1.0]);
    let model = Model {
        coarse: Field::new(FieldArch::from_config(&cfg), bounds, seed, 0),
        fine: None,
        prior_scale: 1.03,
    };
    let rays = (0..4)
        .map(|i| {
            let f = i as f64;
            TrainRay {
                origin: Vector3::new(0.1 * f, -0.2, -1.5),
                direction: Vector3::new(0.1 - 0.05 * f, 0.08 * f, 1.0).normalize(),
                color: [0.2 + 0.15 * f, 0.7 - 0.1 * f, 0.4],
                prior: vec![1.1 + 0.37 * f],
                u: [0.0, 0.35, 0.6, 0.9][i],
                key: 11 + i as u64,
            }
        })
        .collect();
    (cfg, model, rays)
}

/// Central differences over every coarse parameter and the prior scale.
pub fn composite_gradcheck(mode: TransportMode, seed: u64) -> emdnerf::Result<GradCheck> {
    let (cfg, model, rays) = gradcheck_setup(mode, seed);
    let inp = StepInputs {
        cfg: &cfg,
        seed,
        step: 3,
        near: 0.4,
        far: 3.5,
        train: true,
    };
    let out = loss_and_grads(&model, &rays, &inp)?;
    let analytic = flat(&out.grads.coarse);
    let h = 1e-6;
    let total = |m: &Model| loss_and_grads(m, &rays, &inp).map(|o| o.total);
    let mut max_rel: f64 = 0.0;
    let mut k = 0;
    let tensor_count = model.coarse.tensors().len();
    for t in 0..tensor_count {
        let len = model.coarse.tensors()[t].2.len();
        for j in 0..len {
            let mut plus = model.clone();
            plus.coarse.tensors_mut()[t][j] += h;
            let mut minus = model.clone();
            minus.coarse.tensors_mut()[t][j] -= h;
            let fd = (total(&plus)? - total(&minus)?) / (2.0 * h);
            max_rel = max_rel.max(rel_err(analytic[k], fd));
            k += 1;
        }
    }
    let mut plus = model.clone();
    plus.prior_scale += h;
    let mut minus = model.clone();
    minus.prior_scale -= h;
    let fd = (total(&plus)? - total(&minus)?) / (2.0 * h);
    let prior_scale_rel = rel_err(out.grads.prior_scale, fd);
    Ok(GradCheck {
        max_rel: max_rel.max(prior_scale_rel),
        params: k + 1,
        prior_scale_rel,
    })
}
