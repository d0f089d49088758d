//! `ablate`: the depth-loss x uncertainty grid on one dataset.
//!
//! The grid file is an ordinary config file in which `grid.<key> = a, b`
//! lines declare axes. Every cell gets the base config with one value per
//! axis and the same seed. Without axes the grid is
//! `loss = none, l2, l2h, emd` x `uncertainty = on, off`.

use crate::eval::evaluate_checkpoint;
use crate::train::{load_dataset, run_training};
use crate::{write_file, Overrides};
use clap::Args;
use emdnerf::config::TrainConfig;
use emdnerf::field::{blob_region_rmse, Model, RenderSettings};
use emdnerf::scenesim::{SceneDataset, Split};
use emdnerf::Error;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

#[derive(Args, Debug)]
pub struct AblateArgs {
    /// Dataset directory written by `gen-scene`.
    #[arg(long)]
    pub data: PathBuf,
    /// Base config plus `grid.<key> = v1, v2, ...` axes.
    #[arg(long)]
    pub grid: Option<PathBuf>,
    /// One subdirectory per cell plus `ablation.csv`.
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub overrides: Overrides,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    pub base: TrainConfig,
    pub axes: Vec<(String, Vec<String>)>,
}

impl Grid {
    pub fn parse(text: &str, base_dir: &Path) -> emdnerf::Result<Self> {
        let mut axes = Vec::new();
        let mut rest = String::new();
        for line in text.lines() {
            let body = line.split('#').next().unwrap_or("").trim();
            match body.split_once('=') {
                Some((k, v)) if k.trim().starts_with("grid.") => {
                    let key = k.trim().trim_start_matches("grid.").to_string();
                    let values: Vec<String> =
                        v.split(',').map(|s| s.trim().to_string()).filter(|s| !s.is_empty()).collect();
                    if values.is_empty() {
                        return Err(Error::Config(format!("grid axis `{key}` has no values")));
                    }
                    axes.push((key, values));
                }
                _ => {
                    rest.push_str(line);
                    rest.push('\n');
                }
            }
        }
        if axes.is_empty() {
            let v = |xs: &[&str]| xs.iter().map(|s| s.to_string()).collect();
            axes = vec![
                ("loss".into(), v(&["none", "l2", "l2h", "emd"])),
                ("uncertainty".into(), v(&["on", "off"])),
            ];
        }
        Ok(Self {
            base: TrainConfig::parse(&rest, base_dir)?,
            axes,
        })
    }

    /// Every combination of axis values, first axis slowest.
    pub fn cells(&self) -> Vec<Vec<(String, String)>> {
        let mut cells = vec![Vec::new()];
        for (key, values) in &self.axes {
            cells = cells
                .into_iter()
                .flat_map(|c| {
                    values.iter().map(move |v| {
                        let mut c = c.clone();
                        c.push((key.clone(), v.clone()));
                        c
                    })
                })
                .collect();
        }
        cells
    }
}

fn cell_name(cell: &[(String, String)]) -> String {
    cell.iter()
        .map(|(k, v)| format!("{k}-{v}"))
        .collect::<Vec<_>>()
        .join("_")
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' || c == '.' { c } else { '_' })
        .collect()
}

struct CellMetrics {
    steps: usize,
    abs_rel: f64,
    sq_rel: f64,
    rmse: f64,
    rmse_log: Option<f64>,
    psnr: Option<f64>,
    blob_rmse: Option<f64>,
    prior_scale: f64,
}

fn run_cell(cfg: &TrainConfig, ds: &SceneDataset, data: &Path, dir: &Path) -> anyhow::Result<CellMetrics> {
    cfg.validate()?;
    let r = run_training(cfg, ds, data, dir)?;
    let model = Model::from_checkpoint(&r.checkpoint);
    let report = evaluate_checkpoint(&model, cfg, ds, Split::Test)?;
    report.write(dir)?;
    let blob = blob_region_rmse(&model, ds, &RenderSettings::new(cfg, ds.near(), ds.far()))?;
    Ok(CellMetrics {
        steps: r.log.len(),
        abs_rel: report.abs_rel,
        sq_rel: report.sq_rel,
        rmse: report.rmse,
        rmse_log: report.rmse_log,
        psnr: report.psnr,
        blob_rmse: blob,
        prior_scale: model.prior_scale,
    })
}

fn opt(v: Option<f64>) -> String {
    v.map_or(String::new(), |v| v.to_string())
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

pub fn run(a: &AblateArgs) -> anyhow::Result<()> {
    let mut grid = match &a.grid {
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .map_err(|e| Error::Config(format!("cannot read grid {}: {e}", p.display())))?;
            Grid::parse(&text, p.parent().unwrap_or(Path::new(".")))?
        }
        None => Grid::parse("", Path::new("."))?,
    };
    if let Some(c) = &a.overrides.config {
        grid.base = TrainConfig::from_file(c)?;
    }
    a.overrides.apply(&mut grid.base)?;
    grid.base.seed()?;
    let ds = load_dataset(&a.data)?;

    let mut csv = String::from("cell");
    for (k, _) in &grid.axes {
        let _ = write!(csv, ",{}", csv_field(k));
    }
    csv.push_str(",status,steps,abs_rel,sq_rel,rmse,rmse_log,psnr,blob_rmse,prior_scale,error\n");
    let mut failures = 0;
    for cell in grid.cells() {
        let name = cell_name(&cell);
        let mut cfg = grid.base.clone();
        let result = cell
            .iter()
            .try_for_each(|(k, v)| cfg.set(k, v))
            .map_err(anyhow::Error::from)
            .and_then(|()| run_cell(&cfg, &ds, &a.data, &a.out.join(&name)));
        let _ = write!(csv, "{}", csv_field(&name));
        for (_, v) in &cell {
            let _ = write!(csv, ",{}", csv_field(v));
        }
        match result {
            Ok(m) => {
                println!("{name}: rmse {:.4} blob rmse {}", m.rmse, opt(m.blob_rmse));
                let _ = writeln!(
                    csv,
                    ",ok,{},{},{},{},{},{},{},{},",
                    m.steps,
                    m.abs_rel,
                    m.sq_rel,
                    m.rmse,
                    opt(m.rmse_log),
                    opt(m.psnr),
                    opt(m.blob_rmse),
                    m.prior_scale
                );
            }
            Err(e) => {
                failures += 1;
                let status = match crate::exit_code(&e) {
                    2 => "config_error",
                    3 => "data_error",
                    4 => "diverged",
                    _ => "failed",
                };
                eprintln!("{name}: {status}: {e:#}");
                let _ = writeln!(csv, ",{status},,,,,,,,,{}", csv_field(&format!("{e:#}")));
            }
        }
    }
    write_file(&a.out.join("ablation.csv"), &csv)?;
    println!(
        "wrote {} ({} cells, {failures} failed)",
        a.out.join("ablation.csv").display(),
        grid.cells().len()
    );
    Ok(())
}
