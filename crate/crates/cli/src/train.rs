//! `train`: fit a field and write checkpoint, loss log and manifest.

use crate::manifest::RunManifest;
use crate::{write_file, Overrides};
use anyhow::Context;
use clap::Args;
use emdnerf::config::TrainConfig;
use emdnerf::field::{loss_log_csv, Checkpoint, LossRecord, Trainer};
use emdnerf::scenesim::{read_dataset, SceneDataset};
use emdnerf::Error;
use std::path::{Path, PathBuf};
use std::time::Instant;

pub const CHECKPOINT_FILE: &str = "checkpoint.ckpt";
pub const LOSS_LOG_FILE: &str = "loss_log.csv";
pub const CONFIG_FILE: &str = "config.cfg";

#[derive(Args, Debug)]
pub struct TrainArgs {
    /// Dataset directory written by `gen-scene`.
    #[arg(long)]
    pub data: PathBuf,
    /// Receives the checkpoint, loss log, config and manifest.
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub overrides: Overrides,
}

pub fn load_dataset(dir: &Path) -> anyhow::Result<SceneDataset> {
    read_dataset(dir).with_context(|| format!("cannot load dataset from {}", dir.display()))
}

/// A finished run.
pub struct RunResult {
    pub checkpoint: Checkpoint,
    pub log: Vec<LossRecord>,
}

/// Trains `cfg` on `ds` and writes the run directory `out`. On divergence
/// the last finite checkpoint and the partial log are still written before
/// the error is returned.
pub fn run_training(cfg: &TrainConfig, ds: &SceneDataset, dataset: &Path, out: &Path) -> anyhow::Result<RunResult> {
    let started = Instant::now();
    let mut manifest = RunManifest::new("train", cfg, dataset);
    manifest.outputs = vec![
        ("checkpoint".into(), CHECKPOINT_FILE.into()),
        ("loss_log".into(), LOSS_LOG_FILE.into()),
        ("config".into(), CONFIG_FILE.into()),
    ];
    write_file(&out.join(CONFIG_FILE), cfg.to_kv())?;

    let mut trainer = Trainer::new(cfg, ds)?;
    let mut log = Vec::with_capacity(cfg.steps as usize);
    let mut failure = None;
    for _ in 0..cfg.steps {
        match trainer.step() {
            Ok(r) => log.push(r),
            Err(e) => {
                failure = Some(e);
                break;
            }
        }
    }
    let checkpoint = match &failure {
        Some(Error::Diverged { last_finite, .. }) => (**last_finite).clone(),
        _ => trainer.checkpoint(),
    };
    checkpoint.write(&out.join(CHECKPOINT_FILE))?;
    write_file(&out.join(LOSS_LOG_FILE), loss_log_csv(&log))?;
    manifest.steps_completed = log.len() as u64;
    manifest.elapsed_secs = started.elapsed().as_secs_f64();
    manifest.status = match &failure {
        None => "ok".into(),
        Some(Error::Diverged { .. }) => "diverged".into(),
        Some(_) => "failed".into(),
    };
    manifest.write(out)?;
    match failure {
        None => Ok(RunResult { checkpoint, log }),
        Some(e) => Err(e.into()),
    }
}

pub fn run(a: &TrainArgs) -> anyhow::Result<()> {
    let cfg = a.overrides.load()?;
    cfg.validate()?;
    let ds = load_dataset(&a.data)?;
    let r = run_training(&cfg, &ds, &a.data, &a.out)?;
    match r.log.last() {
        Some(last) => println!(
            "trained {} steps: photo {:.6} depth {:.6} total {:.6} scale {:.6}",
            r.log.len(),
            last.photo,
            last.depth,
            last.total,
            last.scale
        ),
        None => println!("wrote the initial checkpoint (0 steps)"),
    }
    println!("run directory: {}", a.out.display());
    Ok(())
}
