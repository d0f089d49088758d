//! `eval`: render a checkpoint over a split and write metrics and renders.

use crate::train::{load_dataset, CONFIG_FILE};
use crate::write_file;
use anyhow::Context;
use clap::{Args, ValueEnum};
use emdnerf::config::TrainConfig;
use emdnerf::field::{evaluate, render_view, Checkpoint, Model, RenderSettings};
use emdnerf::io::{encode_pfm, write_rgb_png};
use emdnerf::metrics::MetricsReport;
use emdnerf::scenesim::{SceneDataset, Split};
use emdnerf::Error;
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SplitArg {
    Train,
    Test,
}

impl From<SplitArg> for Split {
    fn from(s: SplitArg) -> Self {
        match s {
            SplitArg::Train => Split::Train,
            SplitArg::Test => Split::Test,
        }
    }
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    /// Checkpoint written by `train`.
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Dataset directory written by `gen-scene`.
    #[arg(long)]
    pub data: PathBuf,
    /// Receives `metrics.csv` and `metrics.json`.
    #[arg(long)]
    pub out: PathBuf,
    /// Config the checkpoint was trained with; defaults to the `config.cfg`
    /// next to the checkpoint.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "test")]
    pub split: SplitArg,
    /// Also write rendered RGB and depth per view.
    #[arg(long)]
    pub renders: bool,
}

/// Reads the checkpoint's config and checks that it is the one the
/// checkpoint was trained with.
pub fn checkpoint_config(ckpt: &Checkpoint, ckpt_path: &Path, config: Option<&Path>) -> anyhow::Result<TrainConfig> {
    let path = match config {
        Some(p) => p.to_path_buf(),
        None => ckpt_path.parent().unwrap_or(Path::new(".")).join(CONFIG_FILE),
    };
    let cfg = TrainConfig::from_file(&path)?;
    if cfg.hash() != ckpt.config_hash {
        return Err(Error::Config(format!(
            "{} does not match the config the checkpoint was trained with",
            path.display()
        ))
        .into());
    }
    Ok(cfg)
}

pub fn evaluate_checkpoint(
    model: &Model,
    cfg: &TrainConfig,
    ds: &SceneDataset,
    split: Split,
) -> anyhow::Result<MetricsReport> {
    let s = RenderSettings::new(cfg, ds.near(), ds.far());
    Ok(evaluate(model, ds, split, &s)?)
}

pub fn run(a: &EvalArgs) -> anyhow::Result<()> {
    let ckpt = Checkpoint::read(&a.checkpoint).with_context(|| format!("cannot load {}", a.checkpoint.display()))?;
    let cfg = checkpoint_config(&ckpt, &a.checkpoint, a.config.as_deref())?;
    let ds = load_dataset(&a.data)?;
    let model = Model::from_checkpoint(&ckpt);
    let split = Split::from(a.split);
    let report = evaluate_checkpoint(&model, &cfg, &ds, split)?;
    crate::create_dir(&a.out)?;
    report.write(&a.out)?;
    if a.renders {
        let s = RenderSettings::new(&cfg, ds.near(), ds.far());
        for v in ds.views.iter().filter(|v| v.split == split) {
            let r = render_view(&model, &v.camera, &s)?;
            write_rgb_png(&a.out.join("render").join(format!("{:04}.png", v.index)), &r.rgb)?;
            write_file(&a.out.join("render").join(format!("{:04}.pfm", v.index)), encode_pfm(&r.depth))?;
        }
    }
    println!(
        "{} views: abs_rel {:.4} sq_rel {:.4} rmse {:.4} rmse_log {} psnr {}",
        report.per_image.len(),
        report.abs_rel,
        report.sq_rel,
        report.rmse,
        report.rmse_log.map_or("n/a".into(), |v| format!("{v:.4}")),
        report.psnr.map_or("n/a".into(), |v| format!("{v:.2}"))
    );
    Ok(())
}
