//! `emdnerf`: scene generation, training, evaluation, the ablation grid and
//! uncertainty maps from the command line.
//!
//! Exit codes: 0 success, 2 configuration error, 3 data error, 4 numerical
//! divergence, 1 anything else. `EMDNERF_WORKERS` sets the worker-thread
//! count; results do not depend on it.

mod ablate;
mod eval;
mod gen_scene;
mod manifest;
mod train;
mod uncertainty;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use emdnerf::config::TrainConfig;
use emdnerf::Error;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "emdnerf", version, about = "Depth-guided radiance fields with EMD supervision")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Render a synthetic scene with corrupted priors and trajectories.
    GenScene(gen_scene::GenSceneArgs),
    /// Train a field on a generated dataset.
    Train(train::TrainArgs),
    /// Render a checkpoint and report depth and photometric metrics.
    Eval(eval::EvalArgs),
    /// Run the depth-loss x uncertainty grid and aggregate the metrics.
    Ablate(ablate::AblateArgs),
    /// Uncertainty maps and the threshold curve from stored trajectories.
    Uncertainty(uncertainty::UncertaintyArgs),
}

/// Flags that override the config file.
#[derive(Args, Debug, Clone, Default)]
pub struct Overrides {
    /// Config file (`key = value` lines); the desk profile when omitted.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Required unless the config sets `seed`.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Depth-guidance term.
    #[arg(long, value_parser = ["none", "l2", "l2h", "emd"])]
    pub loss: Option<String>,
    /// Exact 1-D transport or the Sinkhorn divergence.
    #[arg(long = "emd-mode", value_parser = ["exact", "sinkhorn"])]
    pub emd_mode: Option<String>,
    /// Uncertainty weighting of the two terms.
    #[arg(long, value_parser = ["on", "off"])]
    pub uncertainty: Option<String>,
    /// Optimizer steps; 0 writes the initial checkpoint only.
    #[arg(long)]
    pub steps: Option<u64>,
}

impl Overrides {
    pub fn load(&self) -> emdnerf::Result<TrainConfig> {
        let mut cfg = match &self.config {
            Some(p) => TrainConfig::from_file(p)?,
            None => TrainConfig::desk(),
        };
        self.apply(&mut cfg)?;
        Ok(cfg)
    }

    pub fn apply(&self, cfg: &mut TrainConfig) -> emdnerf::Result<()> {
        if let Some(s) = self.seed {
            cfg.seed = Some(s);
        }
        if let Some(s) = self.steps {
            cfg.steps = s;
        }
        for (key, v) in [("loss", &self.loss), ("emd_mode", &self.emd_mode), ("uncertainty", &self.uncertainty)] {
            if let Some(v) = v {
                cfg.set(key, v)?;
            }
        }
        Ok(())
    }
}

/// Process exit code for an error chain.
fn exit_code(err: &anyhow::Error) -> u8 {
    let Some(e) = err.chain().find_map(|c| c.downcast_ref::<Error>()) else {
        return 1;
    };
    match e {
        Error::Config(_) | Error::Generation(_) => 2,
        Error::Diverged { .. } | Error::NonFiniteGradient { .. } | Error::NotConverged { .. } => 4,
        e if e.is_data_error() => 3,
        Error::InvalidInput(_) | Error::LengthMismatch { .. } | Error::ShapeMismatch { .. } => 3,
        _ => 1,
    }
}

fn init_workers() -> anyhow::Result<()> {
    let Ok(v) = std::env::var("EMDNERF_WORKERS") else {
        return Ok(());
    };
    let n: usize = v
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| Error::Config(format!("EMDNERF_WORKERS must be a positive integer, got `{v}`")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .context("cannot start the worker pool")?;
    Ok(())
}

pub fn create_dir(dir: &Path) -> anyhow::Result<()> {
    std::fs::create_dir_all(dir)
        .map_err(|e| Error::Io { path: dir.to_path_buf(), source: e })
        .with_context(|| format!("cannot create output directory {}", dir.display()))
}

pub fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> anyhow::Result<()> {
    if let Some(parent) = path.parent() {
        create_dir(parent)?;
    }
    std::fs::write(path, contents)
        .map_err(|e| Error::Io { path: path.to_path_buf(), source: e })
        .with_context(|| format!("cannot write {}", path.display()))
}

fn run(cli: Cli) -> anyhow::Result<()> {
    init_workers()?;
    match cli.command {
        Command::GenScene(a) => gen_scene::run(&a),
        Command::Train(a) => train::run(&a),
        Command::Eval(a) => eval::run(&a),
        Command::Ablate(a) => ablate::run(&a),
        Command::Uncertainty(a) => uncertainty::run(&a),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
