//! Times training steps on the default scene for a few network sizes.
//!
//! `cargo run --release -p emdnerf --example throughput [steps]`

use emdnerf::config::{DepthLoss, TrainConfig};
use emdnerf::field::Trainer;
use emdnerf::scenesim::{generate, SceneSpec};
use std::time::Instant;

fn main() -> emdnerf::Result<()> {
    let steps: u64 = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(50);
    let ds = generate(&SceneSpec::default(), 1)?.dataset;
    let shapes = [(4, 32, 64, 32, 0), (4, 32, 64, 16, 16), (4, 32, 64, 24, 16), (4, 32, 48, 24, 24), (3, 32, 64, 16, 16)];
    for (depth, width, rays, nc, nf) in shapes {
        for loss in [DepthLoss::Emd] {
            let cfg = TrainConfig {
                seed: Some(1),
                trunk_depth: depth,
                trunk_width: width,
                head_width: width / 2,
                rays_per_batch: rays,
                n_coarse: nc,
                n_fine: nf,
                n_emd_samples: nc.max(nf),
                loss,
                emd_source: if nf == 0 { emdnerf::config::DistributionSource::Coarse } else { emdnerf::config::DistributionSource::Fine },
                ..TrainConfig::desk()
            };
            let mut t = Trainer::new(&cfg, &ds)?;
            let start = Instant::now();
            for _ in 0..steps {
                t.step()?;
            }
            let ms = start.elapsed().as_secs_f64() * 1e3 / steps as f64;
            println!("trunk {depth}x{width} rays {rays} samples {nc}/{nf} loss {loss}: {ms:.2} ms/step");
        }
    }
    Ok(())
}
