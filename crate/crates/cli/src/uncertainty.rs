//! `uncertainty`: per-image uncertainty maps from stored trajectory pairs,
//! plus the error-vs-threshold curve when ground truth is available.

use crate::train::load_dataset;
use crate::write_file;
use clap::Args;
use emdnerf::io::encode_pfm;
use emdnerf::metrics::{threshold_curve, threshold_curve_csv, CURVE_THRESHOLDS};
use emdnerf::uncertainty::{default_tau, from_trajectories, read_trajectory_pair, TrajectoryPair};
use emdnerf::{Error, Map2};
use std::path::{Path, PathBuf};

#[derive(Args, Debug)]
pub struct UncertaintyArgs {
    /// Directory of per-image trajectory directories; defaults to the
    /// dataset's `traj/`.
    #[arg(long)]
    pub traj: Option<PathBuf>,
    /// Dataset directory; supplies ground truth for the threshold curve and
    /// the default `tau`.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Receives `uncert/<view>.pfm` and `threshold_curve.csv`.
    #[arg(long)]
    pub out: PathBuf,
    /// Change threshold in depth units.
    #[arg(long)]
    pub tau: Option<f64>,
}

fn read_pairs(dir: &Path) -> anyhow::Result<Vec<(String, TrajectoryPair)>> {
    let entries = std::fs::read_dir(dir).map_err(|e| Error::Io { path: dir.to_path_buf(), source: e })?;
    let mut names: Vec<String> = entries
        .filter_map(|e| e.ok())
        .filter(|e| e.path().join("manifest.txt").is_file())
        .map(|e| e.file_name().to_string_lossy().into_owned())
        .collect();
    names.sort();
    if names.is_empty() {
        return Err(Error::Format {
            path: dir.to_path_buf(),
            reason: "no trajectory directories (with manifest.txt) found".into(),
        }
        .into());
    }
    names
        .into_iter()
        .map(|n| Ok((n.clone(), read_trajectory_pair(&dir.join(&n))?)))
        .collect()
}

/// Depth range over every map of every trajectory.
fn trajectory_tau(pairs: &[(String, TrajectoryPair)]) -> anyhow::Result<f64> {
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for (_, p) in pairs {
        for m in p.direct.steps().iter().chain(p.mirrored.steps()) {
            lo = lo.min(m.min());
            hi = hi.max(m.max());
        }
    }
    default_tau(hi, lo).map_err(|_| {
        Error::Config("trajectories have no depth range to derive tau from; pass --tau".into()).into()
    })
}

pub fn run(a: &UncertaintyArgs) -> anyhow::Result<()> {
    let traj_dir = match (&a.traj, &a.data) {
        (Some(t), _) => t.clone(),
        (None, Some(d)) => d.join("traj"),
        (None, None) => return Err(Error::Config("need --traj or --data".into()).into()),
    };
    if let Some(t) = a.tau {
        if !(t > 0.0 && t.is_finite()) {
            return Err(Error::Config(format!("--tau must be positive, got {t}")).into());
        }
    }
    let pairs = read_pairs(&traj_dir)?;
    let ds = a.data.as_deref().map(load_dataset).transpose()?;
    let tau = match (a.tau, &ds) {
        (Some(t), _) => t,
        (None, Some(ds)) => ds.tau,
        (None, None) => trajectory_tau(&pairs)?,
    };

    let mut maps = Vec::with_capacity(pairs.len());
    let mut errors = Vec::new();
    for (name, p) in &pairs {
        let u = from_trajectories(&p.direct, &p.mirrored, tau)?;
        write_file(&a.out.join("uncert").join(format!("{name}.pfm")), encode_pfm(&u.values))?;
        if let Some(ds) = &ds {
            let id = p.direct.source_image_id;
            let view = ds.views.iter().find(|v| v.index == id).ok_or_else(|| Error::Format {
                path: traj_dir.join(name),
                reason: format!("image id {id} is not in the dataset"),
            })?;
            errors.push(p.direct.final_estimate().zip_with(&view.depth, |z, g| (z - g).abs())?);
        }
        maps.push(u.values);
    }
    println!("wrote {} uncertainty maps (tau {tau:e}) to {}", maps.len(), a.out.join("uncert").display());
    if !errors.is_empty() {
        let u: Vec<&Map2> = maps.iter().collect();
        let e: Vec<&Map2> = errors.iter().collect();
        let rows = threshold_curve(&u, &e, &CURVE_THRESHOLDS)?;
        write_file(&a.out.join("threshold_curve.csv"), threshold_curve_csv(&rows))?;
        for r in &rows {
            println!(
                "t={:.1}: error above {} below {} ({:.1}% of pixels above)",
                r.threshold,
                r.error_above.map_or("n/a".into(), |v| format!("{v:.4}")),
                r.error_below.map_or("n/a".into(), |v| format!("{v:.4}")),
                100.0 * r.fraction_above
            );
        }
    }
    Ok(())
}
