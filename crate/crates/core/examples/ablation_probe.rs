//! Trains ablation cells on the default scene and prints depth errors:
//! test-view RMSE and error quantiles, per-view opacity and depth-edge
//! share of the squared error, RMSE inside the prior's blob regions, and
//! the prior's own error.
//!
//! `cargo run --release -p emdnerf --example ablation_probe -- [steps] [seed] [key=value ...] [cells=none,l2,emd,emdu]`
//!
//! Scene overrides: `PROBE_BLOBS` (random blob count), `PROBE_HYP`
//! (hypotheses per view), `PROBE_SPREAD` (hypothesis spread).
//! `PROBE_DUMP=<dir>` writes a false-color depth comparison and the
//! rendered RGB of every test view.

use emdnerf::config::{DepthLoss, TrainConfig};
use emdnerf::field::{evaluate, render_view, train, Model, RenderSettings};
use emdnerf::scenesim::{generate, SceneSpec, Split};
use std::time::Instant;

fn main() -> emdnerf::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let steps: u64 = args.first().and_then(|s| s.parse().ok()).unwrap_or(8000);
    let seed: u64 = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(1);
    let mut spec = SceneSpec::default();
    if let Ok(k) = std::env::var("PROBE_HYP") {
        spec.trajectory.hypotheses = k.parse().expect("hypothesis count");
    }
    if let Ok(k) = std::env::var("PROBE_BLOBS") {
        spec.corruption.blob_count = k.parse().expect("blob count");
    }
    if let Ok(k) = std::env::var("PROBE_SPREAD") {
        spec.trajectory.hypothesis_spread = k.parse().expect("spread");
    }
    let ds = generate(&spec, seed)?.dataset;
    let mut base = TrainConfig {
        seed: Some(seed),
        steps,
        ..TrainConfig::desk()
    };
    let mut cells = vec!["none", "l2", "emd", "emdu"];
    for kv in args.iter().skip(2) {
        let (k, v) = kv.split_once('=').expect("key=value");
        if k == "cells" {
            cells = v.split(',').collect();
        } else {
            base.set(k, v)?;
        }
    }
    let (mut blob_sq, mut blob_n, mut prior_sq, mut prior_rel, mut n) = (0.0, 0usize, 0.0, 0.0, 0usize);
    for v in ds.train_views() {
        let p = v.prior.as_ref().unwrap();
        for i in 0..v.depth.data().len() {
            let e = p.depth.data()[i] - v.depth.data()[i];
            prior_sq += e * e;
            prior_rel += e.abs() / v.depth.data()[i];
            n += 1;
            if p.blob_mask.data()[i] > 0.0 {
                blob_sq += e * e;
                blob_n += 1;
            }
        }
    }
    println!(
        "prior: train rmse {:.4}, absrel {:.4}, blob rmse {:.4} ({} px)",
        (prior_sq / n as f64).sqrt(),
        prior_rel / n as f64,
        (blob_sq / blob_n as f64).sqrt(),
        blob_n
    );
    for cell in cells {
        let (loss, u) = match cell {
            "none" => (DepthLoss::None, false),
            "l2" => (DepthLoss::L2, false),
            "l2h" => (DepthLoss::L2Hypothesis, false),
            "emd" => (DepthLoss::Emd, false),
            "emdu" => (DepthLoss::Emd, true),
            "l2u" => (DepthLoss::L2, true),
            _ => panic!("unknown cell {cell}"),
        };
        let cfg = TrainConfig {
            loss,
            uncertainty: u,
            ..base.clone()
        };
        let start = Instant::now();
        let out = train(&cfg, &ds)?;
        let secs = start.elapsed().as_secs_f64();
        let model = Model::from_checkpoint(&out.checkpoint);
        let s = RenderSettings::new(&cfg, ds.near(), ds.far());
        let test = evaluate(&model, &ds, Split::Test, &s)?;
        let mut errs: Vec<f64> = Vec::new();
        for v in ds.test_views() {
            let r = render_view(&model, &v.camera, &s)?;
            errs.extend(r.depth.data().iter().zip(v.depth.data()).map(|(a, b)| (a - b).abs()));
            let (w, h) = v.depth.shape();
            let (mut edge, mut big, mut signed, mut edge_sq, mut all_sq) = (0usize, 0usize, 0.0, 0.0, 0.0);
            for y in 0..h {
                for x in 0..w {
                    let g = v.depth.get(x, y);
                    let e = r.depth.get(x, y) - g;
                    let near_edge = [(-1i64, 0i64), (1, 0), (0, -1), (0, 1), (-2, 0), (2, 0), (0, -2), (0, 2)].iter().any(|&(dx, dy)| {
                        let (nx, ny) = (x as i64 + dx, y as i64 + dy);
                        nx >= 0 && ny >= 0 && (nx as usize) < w && (ny as usize) < h && (v.depth.get(nx as usize, ny as usize) - g).abs() > 0.3
                    });
                    all_sq += e * e;
                    if near_edge {
                        edge_sq += e * e;
                    }
                    if e.abs() > 0.5 {
                        big += 1;
                        signed += e;
                        edge += near_edge as usize;
                    }
                }
            }
            let op = r.opacity.data();
            let low = op.iter().filter(|&&a| a < 0.95).count();
            println!("    view {}: opacity mean {:.4}, {low} px below 0.95", v.index, op.iter().sum::<f64>() / op.len() as f64);
            println!("    view {}: big {big} ({} near edges, mean signed {:.2}); edge share of sq err {:.2}", v.index, edge, signed / big.max(1) as f64, edge_sq / all_sq);
        }
        if let Ok(dir) = std::env::var("PROBE_DUMP") {
            for v in ds.test_views() {
                let r = render_view(&model, &v.camera, &s)?;
                let mut img = emdnerf::io::RgbImage::new(v.depth.width(), v.depth.height());
                for (i, px) in img.pixels.iter_mut().enumerate() {
                    let (g, p) = (v.depth.data()[i], r.depth.data()[i]);
                    *px = [(g / 7.0).min(1.0), (p / 7.0).min(1.0), ((p - g).abs() / 2.0).min(1.0)];
                }
                emdnerf::io::write_rgb_png(&std::path::Path::new(&dir).join(format!("{cell}_{:04}.png", v.index)), &img)?;
                emdnerf::io::write_rgb_png(&std::path::Path::new(&dir).join(format!("{cell}_{:04}_rgb.png", v.index)), &r.rgb)?;
            }
        }
        errs.sort_by(f64::total_cmp);
        let q = |p: f64| errs[((errs.len() - 1) as f64 * p) as usize];
        let big = errs.iter().filter(|&&e| e > 0.5).count() as f64 / errs.len() as f64;
        println!("  test |err| median {:.4} p90 {:.4} p99 {:.4}, >0.5m {:.2}%", q(0.5), q(0.9), q(0.99), 100.0 * big);
        let (mut sq, mut k) = (0.0, 0usize);
        for v in ds.train_views() {
            let r = render_view(&model, &v.camera, &s)?;
            let m = &v.prior.as_ref().unwrap().blob_mask;
            for i in 0..m.data().len() {
                if m.data()[i] > 0.0 {
                    let e = r.depth.data()[i] - v.depth.data()[i];
                    sq += e * e;
                    k += 1;
                }
            }
        }
        let last = out.log.last().unwrap();
        println!(
            "{loss} u={u}: test rmse {:.4} absrel {:.4} psnr {:.2} | blob rmse {:.4} | photo {:.5} scale {:.5} | {secs:.0}s",
            test.rmse,
            test.abs_rel,
            test.psnr.unwrap_or(f64::NAN),
            (sq / k as f64).sqrt(),
            last.photo,
            last.scale
        );
    }
    Ok(())
}
