//! Full-image rendering with deterministic sampling and no dropout, and
//! evaluation against a dataset.

use super::train::{bin_centers, fine_distances, run_net, Model, StepInputs};
use crate::config::TrainConfig;
use crate::io::RgbImage;
use crate::metrics::{depth_metrics_map, psnr, ImageMetrics, MetricsReport};
use crate::scenesim::{Camera, SceneDataset, Split};
use crate::{Map2, Result};
use rayon::prelude::*;

/// Sampling used for rendering.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RenderSettings {
    pub near: f64,
    pub far: f64,
    pub n_coarse: usize,
    pub n_fine: usize,
    /// Rows rendered per work unit.
    pub rows_per_chunk: usize,
}

impl RenderSettings {
    pub fn new(cfg: &TrainConfig, near: f64, far: f64) -> Self {
        Self {
            near,
            far,
            n_coarse: cfg.n_coarse,
            n_fine: cfg.n_fine,
            rows_per_chunk: 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RenderedImage {
    pub rgb: RgbImage,
    /// Expected termination distance converted to z-depth.
    pub depth: Map2,
    /// `Σ w`, one minus the residual transmittance.
    pub opacity: Map2,
}

/// Renders a camera with the fine network when present, else the coarse
/// one. Coarse samples sit at bin centers and fine draws at mid quantiles.
pub fn render_view(model: &Model, camera: &Camera, s: &RenderSettings) -> Result<RenderedImage> {
    let (w, h) = (camera.width, camera.height);
    let cfg = TrainConfig {
        n_coarse: s.n_coarse,
        n_fine: s.n_fine,
        ..TrainConfig::default()
    };
    let inp = StepInputs {
        cfg: &cfg,
        seed: 0,
        step: 0,
        near: s.near,
        far: s.far,
        train: false,
    };
    let rows: Vec<usize> = (0..h).collect();
    let chunks: Vec<Result<Vec<([f64; 3], f64, f64)>>> = rows
        .par_chunks(s.rows_per_chunk.max(1))
        .map(|rs| {
            let mut origins = Vec::new();
            let mut dirs = Vec::new();
            let mut cos = Vec::new();
            for &y in rs {
                for x in 0..w {
                    let (o, d) = camera.pixel_ray(x, y);
                    origins.push(o);
                    dirs.push(d);
                    cos.push(camera.pixel_cos(x, y));
                }
            }
            let t = vec![bin_centers(s.near, s.far, s.n_coarse); origins.len()];
            let coarse = run_net(&model.coarse, &origins, &dirs, t, s.near, s.far, None)?;
            let pass = match &model.fine {
                Some(f) if s.n_fine > 0 => {
                    let keys = vec![0; origins.len()];
                    let ft = fine_distances(&coarse, s.n_fine, &inp, &keys)?;
                    run_net(f, &origins, &dirs, ft, s.near, s.far, None)?
                }
                _ => coarse,
            };
            Ok(pass.rays.iter().zip(&cos).map(|(r, c)| (r.color, r.depth * c, 1.0 - r.rw.residual)).collect())
        })
        .collect();
    let mut rgb = RgbImage::new(w, h);
    let mut depth = Map2::zeros(w, h);
    let mut opacity = Map2::zeros(w, h);
    let mut i = 0;
    for c in chunks {
        for (col, z, a) in c? {
            rgb.pixels[i] = col;
            depth.data_mut()[i] = z;
            opacity.data_mut()[i] = a;
            i += 1;
        }
    }
    Ok(RenderedImage { rgb, depth, opacity })
}

/// Depth and photometric metrics over the views of one split, in absolute
/// scene units (no scale alignment).
pub fn evaluate(model: &Model, ds: &SceneDataset, split: Split, s: &RenderSettings) -> Result<MetricsReport> {
    let per_image = ds
        .views
        .iter()
        .filter(|v| v.split == split)
        .map(|v| {
            let r = render_view(model, &v.camera, s)?;
            let m = depth_metrics_map(&v.depth, &r.depth)?;
            let valid = v.depth.data().iter().filter(|&&z| z > 0.0).count();
            Ok(ImageMetrics::new(v.index, m, valid, Some(psnr(&r.rgb, &v.rgb)?)))
        })
        .collect::<Result<Vec<_>>>()?;
    MetricsReport::from_images(per_image)
}

/// Depth RMSE over the blob-corrupted pixels of the training views, the
/// regions where the prior is most wrong. `None` when no view has a blob.
pub fn blob_region_rmse(model: &Model, ds: &SceneDataset, s: &RenderSettings) -> Result<Option<f64>> {
    let (mut sq, mut n) = (0.0, 0usize);
    for v in ds.train_views() {
        let Some(p) = &v.prior else { continue };
        if p.blob_mask.data().iter().all(|&m| m == 0.0) {
            continue;
        }
        let r = render_view(model, &v.camera, s)?;
        for ((&m, &gt), &z) in p.blob_mask.data().iter().zip(v.depth.data()).zip(r.depth.data()) {
            if m > 0.0 && gt > 0.0 {
                sq += (z - gt) * (z - gt);
                n += 1;
            }
        }
    }
    Ok((n > 0).then(|| (sq / n as f64).sqrt()))
}
