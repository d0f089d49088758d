//! In-memory scene datasets and their directory layout.
//!
//! ```text
//! scene.json            manifest: spec, seed, split, intrinsics, poses
//! rgb/####.png          8-bit images
//! depth/####.pfm        ground-truth z-depth
//! prior/####.pfm        corrupted prior (training views)
//! uncert/####.pfm       frozen uncertainty in [0, 1] (training views)
//! blob/####.pfm         injected-blob mask (training views)
//! hyp/####/##.pfm       optional hypothesis stack (training views)
//! traj/####/            denoising trajectory pair (training views)
//! ```

use super::camera::{Camera, Intrinsics};
use super::corrupt::corrupt_prior;
use super::scene::{make_scene, SceneSpec};
use super::trajectory::{synth_hypotheses, synth_trajectory};
use crate::io::{read_pfm, read_rgb_png, read_text, write_bytes, write_pfm, write_rgb_png, RgbImage};
use crate::uncertainty::{default_tau, from_trajectories, read_trajectory_pair, write_trajectory_pair, DenoisingTrajectory, TrajectoryPair};
use crate::{Error, Map2, Result};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::path::Path;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DepthPrior {
    /// Corrupted z-depth.
    pub depth: Map2,
    pub uncertainty: Map2,
    /// Extra depth hypotheses; the first equals `depth` when present.
    pub hypotheses: Vec<Map2>,
    pub blob_mask: Map2,
    /// Global scale factor that was applied.
    pub scale: f64,
    pub corruption: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct View {
    pub index: usize,
    pub split: Split,
    pub camera: Camera,
    pub rgb: RgbImage,
    /// Ground-truth z-depth.
    pub depth: Map2,
    pub prior: Option<DepthPrior>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneDataset {
    pub spec: SceneSpec,
    pub seed: u64,
    pub tau: f64,
    pub views: Vec<View>,
}

impl SceneDataset {
    pub fn near(&self) -> f64 {
        self.spec.near
    }

    pub fn far(&self) -> f64 {
        self.spec.far
    }

    pub fn bounds(&self) -> ([f64; 3], [f64; 3]) {
        self.spec.bounds()
    }

    pub fn train_views(&self) -> impl Iterator<Item = &View> {
        self.views.iter().filter(|v| v.split == Split::Train)
    }

    pub fn test_views(&self) -> impl Iterator<Item = &View> {
        self.views.iter().filter(|v| v.split == Split::Test)
    }
}

/// A generated dataset together with the trajectories its uncertainty was
/// derived from (indexed like `views`; `None` for test views).
#[derive(Debug, Clone)]
pub struct Generated {
    pub dataset: SceneDataset,
    pub trajectories: Vec<Option<TrajectoryPair>>,
}

/// Rounds to what the on-disk formats can hold, so a dataset read back from
/// disk equals the one that was written.
fn quantize_map(m: &Map2) -> Map2 {
    m.map(|v| v as f32 as f64)
}

fn quantize_trajectory(t: &DenoisingTrajectory) -> Result<DenoisingTrajectory> {
    DenoisingTrajectory::new(t.steps().iter().map(quantize_map).collect(), t.source_image_id)
}

/// Renders the scene, corrupts the priors, synthesizes trajectories and
/// derives the frozen uncertainty maps.
pub fn generate(spec: &SceneSpec, seed: u64) -> Result<Generated> {
    let rendered = make_scene(spec)?;
    let (lo, hi) = spec.bounds();
    let extent = (0..3).map(|k| hi[k] - lo[k]).fold(0.0, f64::max);
    let tau = default_tau(extent * 3f64.sqrt(), spec.near)?;
    let out: Vec<(View, Option<TrajectoryPair>)> = rendered
        .into_par_iter()
        .enumerate()
        .map(|(i, rv)| {
            let split = if spec.test_views.contains(&i) { Split::Test } else { Split::Train };
            let depth = quantize_map(&rv.depth);
            let rgb = rv.rgb.quantized();
            let mut traj = None;
            let prior = if split == Split::Train {
                let c = corrupt_prior(&depth, &spec.corruption, seed, i as u64)?;
                let pdepth = quantize_map(&c.depth);
                let error = pdepth.zip_with(&depth, |p, g| (p - g).abs())?;
                let pair = synth_trajectory(&pdepth, &error, &spec.trajectory, tau, seed, i as u64)?;
                // stored as f32, so quantize before deriving anything from it
                let pair = TrajectoryPair {
                    direct: quantize_trajectory(&pair.direct)?,
                    mirrored: quantize_trajectory(&pair.mirrored)?,
                };
                let u = from_trajectories(&pair.direct, &pair.mirrored, tau)?;
                let hypotheses = if spec.trajectory.hypotheses > 0 {
                    synth_hypotheses(&pdepth, &error, &spec.trajectory, seed, i as u64)?
                        .iter()
                        .map(quantize_map)
                        .collect()
                } else {
                    Vec::new()
                };
                traj = Some(pair);
                Some(DepthPrior {
                    depth: pdepth,
                    uncertainty: quantize_map(&u.values),
                    hypotheses,
                    blob_mask: c.error_mask,
                    scale: c.scale,
                    corruption: c.description,
                })
            } else {
                None
            };
            Ok((
                View {
                    index: i,
                    split,
                    camera: rv.camera,
                    rgb,
                    depth,
                    prior,
                },
                traj,
            ))
        })
        .collect::<Result<_>>()?;
    let (views, trajectories) = out.into_iter().unzip();
    Ok(Generated {
        dataset: SceneDataset { spec: spec.clone(), seed, tau, views },
        trajectories,
    })
}

#[derive(Serialize, Deserialize)]
struct ViewEntry {
    index: usize,
    split: Split,
    intrinsics: Intrinsics,
    /// Camera-to-world, row-major 4x4.
    pose: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    prior_scale: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    corruption: Option<String>,
    #[serde(default)]
    hypotheses: usize,
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    version: u32,
    seed: u64,
    tau: f64,
    width: usize,
    height: usize,
    near: f64,
    far: f64,
    bounds: [[f64; 3]; 2],
    spec: SceneSpec,
    views: Vec<ViewEntry>,
}

const MANIFEST_VERSION: u32 = 1;

fn name(i: usize, ext: &str) -> String {
    format!("{i:04}.{ext}")
}

pub fn write_dataset(dir: &Path, g: &Generated) -> Result<()> {
    let ds = &g.dataset;
    let entries = ds
        .views
        .iter()
        .map(|v| ViewEntry {
            index: v.index,
            split: v.split,
            intrinsics: v.camera.intrinsics,
            pose: v.camera.pose().to_vec(),
            prior_scale: v.prior.as_ref().map(|p| p.scale),
            corruption: v.prior.as_ref().map(|p| p.corruption.clone()),
            hypotheses: v.prior.as_ref().map_or(0, |p| p.hypotheses.len()),
        })
        .collect();
    let (lo, hi) = ds.bounds();
    let manifest = Manifest {
        version: MANIFEST_VERSION,
        seed: ds.seed,
        tau: ds.tau,
        width: ds.spec.width,
        height: ds.spec.height,
        near: ds.near(),
        far: ds.far(),
        bounds: [lo, hi],
        spec: ds.spec.clone(),
        views: entries,
    };
    write_bytes(&dir.join("scene.json"), serde_json::to_string_pretty(&manifest)?.as_bytes())?;
    ds.views.par_iter().zip(&g.trajectories).try_for_each(|(v, traj)| -> Result<()> {
        let i = v.index;
        write_rgb_png(&dir.join("rgb").join(name(i, "png")), &v.rgb)?;
        write_pfm(&dir.join("depth").join(name(i, "pfm")), &v.depth)?;
        if let Some(p) = &v.prior {
            write_pfm(&dir.join("prior").join(name(i, "pfm")), &p.depth)?;
            write_pfm(&dir.join("uncert").join(name(i, "pfm")), &p.uncertainty)?;
            write_pfm(&dir.join("blob").join(name(i, "pfm")), &p.blob_mask)?;
            for (k, h) in p.hypotheses.iter().enumerate() {
                write_pfm(&dir.join("hyp").join(format!("{i:04}")).join(format!("{k:02}.pfm")), h)?;
            }
        }
        if let Some(t) = traj {
            write_trajectory_pair(&dir.join("traj").join(format!("{i:04}")), t)?;
        }
        Ok(())
    })
}

pub fn read_dataset(dir: &Path) -> Result<SceneDataset> {
    let path = dir.join("scene.json");
    let manifest: Manifest = serde_json::from_str(&read_text(&path)?)
        .map_err(|e| Error::format(&path, e.to_string()))?;
    if manifest.version != MANIFEST_VERSION {
        return Err(Error::format(&path, format!("unsupported manifest version {}", manifest.version)));
    }
    let views = manifest
        .views
        .par_iter()
        .map(|e| -> Result<View> {
            let pose: [f64; 16] = e
                .pose
                .as_slice()
                .try_into()
                .map_err(|_| Error::format(&path, format!("view {} pose needs 16 values", e.index)))?;
            let camera = Camera::from_pose(manifest.width, manifest.height, e.intrinsics, &pose)
                .map_err(|err| Error::format(&path, err.to_string()))?;
            let i = e.index;
            let rgb = read_rgb_png(&dir.join("rgb").join(name(i, "png")))?;
            let depth = read_pfm(&dir.join("depth").join(name(i, "pfm")))?;
            let prior = if e.split == Split::Train {
                let hypotheses = (0..e.hypotheses)
                    .map(|k| read_pfm(&dir.join("hyp").join(format!("{i:04}")).join(format!("{k:02}.pfm"))))
                    .collect::<Result<Vec<_>>>()?;
                Some(DepthPrior {
                    depth: read_pfm(&dir.join("prior").join(name(i, "pfm")))?,
                    uncertainty: read_pfm(&dir.join("uncert").join(name(i, "pfm")))?,
                    hypotheses,
                    blob_mask: read_pfm(&dir.join("blob").join(name(i, "pfm")))?,
                    scale: e.prior_scale.unwrap_or(1.0),
                    corruption: e.corruption.clone().unwrap_or_default(),
                })
            } else {
                None
            };
            for m in [Some(&depth), prior.as_ref().map(|p| &p.depth), prior.as_ref().map(|p| &p.uncertainty)]
                .into_iter()
                .flatten()
            {
                if m.shape() != (manifest.width, manifest.height) {
                    return Err(Error::format(dir, format!("view {i} map has the wrong size")));
                }
            }
            if (rgb.width, rgb.height) != (manifest.width, manifest.height) {
                return Err(Error::format(dir, format!("view {i} image has the wrong size")));
            }
            Ok(View {
                index: i,
                split: e.split,
                camera,
                rgb,
                depth,
                prior,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SceneDataset {
        spec: manifest.spec,
        seed: manifest.seed,
        tau: manifest.tau,
        views,
    })
}

/// Loads the stored trajectory pairs of every training view.
pub fn read_trajectories(dir: &Path, ds: &SceneDataset) -> Result<Vec<(usize, TrajectoryPair)>> {
    ds.train_views()
        .map(|v| Ok((v.index, read_trajectory_pair(&dir.join("traj").join(format!("{:04}", v.index)))?)))
        .collect()
}
