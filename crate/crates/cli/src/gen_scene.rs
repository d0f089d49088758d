//! `gen-scene`: render a dataset to disk.

use anyhow::Context;
use clap::Args;
use emdnerf::scenesim::{generate, write_dataset, SceneSpec};
use emdnerf::Error;
use std::path::PathBuf;

#[derive(Args, Debug)]
pub struct GenSceneArgs {
    /// Scene description as JSON; omitted fields take their defaults.
    #[arg(long)]
    pub spec: Option<PathBuf>,
    /// Dataset directory to create.
    #[arg(long)]
    pub out: PathBuf,
    /// Seeds the corruption and trajectory streams.
    #[arg(long)]
    pub seed: u64,
}

pub fn load_spec(path: Option<&PathBuf>) -> anyhow::Result<SceneSpec> {
    let Some(path) = path else {
        return Ok(SceneSpec::default());
    };
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("cannot read scene spec {}: {e}", path.display())))?;
    let spec: SceneSpec = serde_json::from_str(&text)
        .map_err(|e| Error::Config(format!("invalid scene spec {}: {e}", path.display())))?;
    Ok(spec)
}

pub fn run(a: &GenSceneArgs) -> anyhow::Result<()> {
    let spec = load_spec(a.spec.as_ref())?;
    let g = generate(&spec, a.seed).context("scene generation failed")?;
    write_dataset(&a.out, &g).with_context(|| format!("cannot write dataset to {}", a.out.display()))?;
    let ds = &g.dataset;
    println!(
        "wrote {} views ({} train, {} test) to {}",
        ds.views.len(),
        ds.train_views().count(),
        ds.test_views().count(),
        a.out.display()
    );
    Ok(())
}
