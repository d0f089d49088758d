//! End-to-end runs of the `emdnerf` binary on tiny scenes.

use emdnerf::io::{read_pfm, write_pfm};
use emdnerf::uncertainty::{write_trajectory_pair, DenoisingTrajectory, TrajectoryPair};
use emdnerf::Map2;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const SMALL_SPEC: &str = r#"{
  "width": 16,
  "height": 16,
  "cameras": { "count": 8, "center": [0.0, 1.4, 0.0], "radius": 2.2, "lookat": [0.0, 0.7, 0.0], "fov_deg": 70.0 },
  "test_views": [1, 5]
}"#;

const TINY_CONFIG: &str = "\
seed = 3
steps = 4
rays_per_batch = 16
chunk_rays = 8
n_coarse = 8
n_fine = 4
n_emd_samples = 8
trunk_depth = 2
trunk_width = 8
head_width = 8
pos_levels = 2
dir_levels = 1
";

fn emdnerf(args: &[&str]) -> Output {
    emdnerf_env(args, &[])
}

fn emdnerf_env(args: &[&str], env: &[(&str, &str)]) -> Output {
    let mut c = Command::new(env!("CARGO_BIN_EXE_emdnerf"));
    c.args(args);
    for (k, v) in env {
        c.env(k, v);
    }
    c.output().expect("binary runs")
}

fn ok(o: &Output) {
    assert!(
        o.status.success(),
        "exit {:?}\nstdout: {}\nstderr: {}",
        o.status.code(),
        String::from_utf8_lossy(&o.stdout),
        String::from_utf8_lossy(&o.stderr)
    );
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

struct Fixture {
    dir: tempfile::TempDir,
}

impl Fixture {
    /// A small dataset plus the tiny config, written once per test.
    fn new() -> Self {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("spec.json"), SMALL_SPEC).unwrap();
        std::fs::write(dir.path().join("tiny.cfg"), TINY_CONFIG).unwrap();
        let f = Self { dir };
        ok(&emdnerf(&["gen-scene", "--spec", s(&f.path("spec.json")), "--out", s(&f.data()), "--seed", "7"]));
        f
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn data(&self) -> PathBuf {
        self.path("data")
    }

    fn train(&self, out: &str, extra: &[&str]) -> Output {
        let (data, cfg, out) = (self.data(), self.path("tiny.cfg"), self.path(out));
        let mut args = vec!["train", "--data", s(&data), "--config", s(&cfg), "--out", s(&out)];
        args.extend(extra);
        emdnerf(&args)
    }
}

#[test]
fn gen_scene_default_spec_writes_26_views() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("scene");
    ok(&emdnerf(&["gen-scene", "--out", s(&out), "--seed", "1"]));
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("scene.json")).unwrap()).unwrap();
    let views = manifest["views"].as_array().unwrap();
    assert_eq!(views.len(), 26);
    let train = views.iter().filter(|v| v["split"] == "train").count();
    assert_eq!((train, views.len() - train), (18, 8));
    for i in 0..26 {
        assert!(out.join("depth").join(format!("{i:04}.pfm")).is_file());
        assert!(out.join("rgb").join(format!("{i:04}.png")).is_file());
    }
}

#[test]
fn gen_scene_is_idempotent_per_seed() {
    let f = Fixture::new();
    let again = f.path("again");
    ok(&emdnerf(&["gen-scene", "--spec", s(&f.path("spec.json")), "--out", s(&again), "--seed", "7"]));
    for i in 0..8 {
        let name = format!("{i:04}.pfm");
        let a = std::fs::read(f.data().join("depth").join(&name)).unwrap();
        let b = std::fs::read(again.join("depth").join(&name)).unwrap();
        assert_eq!(a, b, "depth map {i}");
    }
    assert_eq!(
        std::fs::read(f.data().join("scene.json")).unwrap(),
        std::fs::read(again.join("scene.json")).unwrap()
    );
}

#[test]
fn invalid_spec_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let spec = dir.path().join("bad.json");
    std::fs::write(&spec, r#"{ "width": 0 }"#).unwrap();
    let o = emdnerf(&["gen-scene", "--spec", s(&spec), "--out", s(&dir.path().join("x")), "--seed", "1"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("image size"));

    std::fs::write(&spec, r#"{ "widht": 16 }"#).unwrap();
    let o = emdnerf(&["gen-scene", "--spec", s(&spec), "--out", s(&dir.path().join("x")), "--seed", "1"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn zero_steps_writes_only_the_initial_checkpoint() {
    let f = Fixture::new();
    ok(&f.train("run", &["--steps", "0"]));
    let run = f.path("run");
    assert!(run.join("checkpoint.ckpt").is_file());
    assert_eq!(std::fs::read_to_string(run.join("loss_log.csv")).unwrap(), "step,photo,depth,total,lr,scale\n");
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(run.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["steps_completed"], 0);
    assert_eq!(manifest["status"], "ok");
    assert_eq!(manifest["seed"], 3);
    let ckpt = emdnerf::field::Checkpoint::read(&run.join("checkpoint.ckpt")).unwrap();
    assert_eq!(ckpt.step, 0);
    assert_eq!(ckpt.prior_scale, 1.0);
}

#[test]
fn exit_codes_distinguish_failure_kinds() {
    let f = Fixture::new();
    // missing dataset
    let o = emdnerf(&["train", "--data", s(&f.path("nowhere")), "--config", s(&f.path("tiny.cfg")), "--out", s(&f.path("r1"))]);
    assert_eq!(o.status.code(), Some(3), "{}", String::from_utf8_lossy(&o.stderr));
    // no seed anywhere
    let o = emdnerf(&["train", "--data", s(&f.data()), "--out", s(&f.path("r2"))]);
    assert_eq!(o.status.code(), Some(2));
    // unknown key
    std::fs::write(f.path("bad.cfg"), "seed = 1\nlearning_rate = 3\n").unwrap();
    let o = emdnerf(&["train", "--data", s(&f.data()), "--config", s(&f.path("bad.cfg")), "--out", s(&f.path("r3"))]);
    assert_eq!(o.status.code(), Some(2));
    // a loss threshold no step can meet
    std::fs::write(f.path("div.cfg"), format!("{TINY_CONFIG}divergence_threshold = 1e-12\n")).unwrap();
    let o = emdnerf(&["train", "--data", s(&f.data()), "--config", s(&f.path("div.cfg")), "--out", s(&f.path("r4"))]);
    assert_eq!(o.status.code(), Some(4));
    let manifest = std::fs::read_to_string(f.path("r4").join("manifest.json")).unwrap();
    assert!(manifest.contains("diverged"));
    assert!(f.path("r4").join("checkpoint.ckpt").is_file());
}

#[test]
fn loss_logs_are_reproducible_across_runs_and_workers() {
    let f = Fixture::new();
    let cfg = f.path("tiny.cfg");
    let mut logs = Vec::new();
    for (name, workers) in [("a", "1"), ("b", "1"), ("c", "4")] {
        let out = f.path(name);
        let o = emdnerf_env(
            &["train", "--data", s(&f.data()), "--config", s(&cfg), "--out", s(&out), "--loss", "emd"],
            &[("EMDNERF_WORKERS", workers)],
        );
        ok(&o);
        logs.push(std::fs::read(out.join("loss_log.csv")).unwrap());
        assert!(out.join("manifest.json").is_file());
    }
    assert_eq!(logs[0], logs[1]);
    assert_eq!(logs[0], logs[2]);
    assert_eq!(String::from_utf8_lossy(&logs[0]).lines().count(), 5);
}

#[test]
fn flags_override_the_config() {
    let f = Fixture::new();
    ok(&f.train("run", &["--loss", "l2", "--emd-mode", "sinkhorn", "--uncertainty", "off", "--steps", "2", "--seed", "9"]));
    let cfg = std::fs::read_to_string(f.path("run").join("config.cfg")).unwrap();
    for line in ["loss = l2", "emd_mode = sinkhorn", "uncertainty = off", "steps = 2", "seed = 9"] {
        assert!(cfg.lines().any(|l| l == line), "missing `{line}` in\n{cfg}");
    }
    let o = f.train("bad", &["--loss", "kl"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn eval_is_repeatable_and_detects_corruption() {
    let f = Fixture::new();
    ok(&f.train("run", &[]));
    let ckpt = f.path("run").join("checkpoint.ckpt");
    for out in ["e1", "e2"] {
        ok(&emdnerf(&["eval", "--checkpoint", s(&ckpt), "--data", s(&f.data()), "--out", s(&f.path(out)), "--renders"]));
    }
    let a = std::fs::read(f.path("e1").join("metrics.csv")).unwrap();
    assert_eq!(a, std::fs::read(f.path("e2").join("metrics.csv")).unwrap());
    assert_eq!(String::from_utf8_lossy(&a).lines().count(), 4, "header, two test views, mean");
    assert!(f.path("e1").join("metrics.json").is_file());
    assert!(f.path("e1").join("render").join("0001.png").is_file());
    assert_eq!(read_pfm(&f.path("e1").join("render").join("0005.pfm")).unwrap().shape(), (16, 16));

    let mut bytes = std::fs::read(&ckpt).unwrap();
    let last = bytes.len() - 1;
    bytes[last] ^= 0x55;
    std::fs::write(&ckpt, bytes).unwrap();
    let o = emdnerf(&["eval", "--checkpoint", s(&ckpt), "--data", s(&f.data()), "--out", s(&f.path("e3"))]);
    assert_eq!(o.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&o.stderr).contains("checksum"));
}

#[test]
fn training_lowers_train_view_depth_error() {
    let f = Fixture::new();
    let cfg = format!("{TINY_CONFIG}trunk_width = 16\nrays_per_batch = 64\nlr = 5e-3\nlr_final = 5e-3\nlambda = 0.1\n");
    std::fs::write(f.path("longer.cfg"), cfg).unwrap();
    let mut rmse = Vec::new();
    for (name, steps) in [("r0", "0"), ("r1", "300")] {
        let out = f.path(name);
        ok(&emdnerf(&[
            "train", "--data", s(&f.data()), "--config", s(&f.path("longer.cfg")), "--out", s(&out), "--steps", steps,
        ]));
        let ev = f.path(&format!("{name}-eval"));
        ok(&emdnerf(&[
            "eval", "--checkpoint", s(&out.join("checkpoint.ckpt")), "--data", s(&f.data()), "--out", s(&ev), "--split", "train",
        ]));
        let m: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(ev.join("metrics.json")).unwrap()).unwrap();
        rmse.push(m["rmse"].as_f64().unwrap());
    }
    assert!(rmse[1] < rmse[0], "rmse before {} after {}", rmse[0], rmse[1]);
}

#[test]
fn ablation_grid_writes_one_row_per_cell() {
    let f = Fixture::new();
    std::fs::write(f.path("grid.cfg"), format!("{TINY_CONFIG}steps = 2\n")).unwrap();
    ok(&emdnerf(&["ablate", "--data", s(&f.data()), "--grid", s(&f.path("grid.cfg")), "--out", s(&f.path("abl"))]));
    let csv = std::fs::read_to_string(f.path("abl").join("ablation.csv")).unwrap();
    let rows: Vec<&str> = csv.lines().collect();
    assert_eq!(rows.len(), 9);
    assert!(rows[0].starts_with("cell,loss,uncertainty,status,"));
    assert!(rows[1..].iter().all(|r| r.split(',').nth(3) == Some("ok")), "{csv}");
    // the photometric-only cells see the same rays and the same initialization
    let log = |cell: &str| std::fs::read_to_string(f.path("abl").join(cell).join("loss_log.csv")).unwrap();
    assert_eq!(log("loss-none_uncertainty-on"), log("loss-none_uncertainty-off"));
    let first_photo = |cell: &str| log(cell).lines().nth(1).unwrap().split(',').nth(1).unwrap().to_string();
    assert_eq!(first_photo("loss-none_uncertainty-off"), first_photo("loss-emd_uncertainty-off"));
}

#[test]
fn ablation_marks_failed_cells_and_continues() {
    let f = Fixture::new();
    std::fs::write(f.path("grid.cfg"), format!("{TINY_CONFIG}steps = 1\ngrid.lambda = 0.007, -1\n")).unwrap();
    ok(&emdnerf(&["ablate", "--data", s(&f.data()), "--grid", s(&f.path("grid.cfg")), "--out", s(&f.path("abl"))]));
    let csv = std::fs::read_to_string(f.path("abl").join("ablation.csv")).unwrap();
    let rows: Vec<&str> = csv.lines().collect();
    assert_eq!(rows.len(), 3);
    assert_eq!(rows[1].split(',').nth(2), Some("ok"));
    assert_eq!(rows[2].split(',').nth(2), Some("config_error"));
}

#[test]
fn uncertainty_curve_from_a_dataset() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    ok(&emdnerf(&["gen-scene", "--out", s(&data), "--seed", "2"]));
    let out = dir.path().join("u");
    ok(&emdnerf(&["uncertainty", "--data", s(&data), "--out", s(&out)]));
    let csv = std::fs::read_to_string(out.join("threshold_curve.csv")).unwrap();
    let rows: Vec<Vec<f64>> = csv
        .lines()
        .skip(1)
        .map(|l| l.split(',').map(|v| v.parse().unwrap_or(f64::NAN)).collect())
        .collect();
    assert_eq!(rows.len(), 9);
    let thresholds: Vec<f64> = rows.iter().map(|r| r[0]).collect();
    for (k, t) in thresholds.iter().enumerate() {
        assert!((t - 0.1 * k as f64).abs() < 1e-12);
    }
    for w in rows.windows(2) {
        assert!(w[1][1] >= w[0][1], "error above threshold must not decrease:\n{csv}");
    }
    let maps = std::fs::read_dir(out.join("uncert")).unwrap().count();
    assert_eq!(maps, 18);
}

#[test]
fn constant_trajectories_give_zero_uncertainty() {
    let dir = tempfile::tempdir().unwrap();
    let traj = dir.path().join("traj");
    let map = Map2::from_fn(6, 4, |x, y| 1.0 + 0.1 * x as f64 + 0.2 * y as f64);
    for id in 0..2 {
        let t = DenoisingTrajectory::new(vec![map.clone(); 5], id).unwrap();
        let m = DenoisingTrajectory::new(vec![map.mirrored(); 5], id).unwrap();
        write_trajectory_pair(&traj.join(format!("{id:04}")), &TrajectoryPair { direct: t, mirrored: m }).unwrap();
    }
    let out = dir.path().join("u");
    ok(&emdnerf(&["uncertainty", "--traj", s(&traj), "--out", s(&out)]));
    for id in 0..2 {
        let u = read_pfm(&out.join("uncert").join(format!("{id:04}.pfm"))).unwrap();
        assert!(u.data().iter().all(|&v| v == 0.0));
    }
    assert!(!out.join("threshold_curve.csv").exists());

    let o = emdnerf(&["uncertainty", "--traj", s(&traj), "--out", s(&out), "--tau", "-1"]);
    assert_eq!(o.status.code(), Some(2));
    let o = emdnerf(&["uncertainty", "--traj", s(&dir.path().join("none")), "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(3));
    write_pfm(&traj.join("0000").join("step_0002.pfm"), &Map2::zeros(3, 3)).unwrap();
    let o = emdnerf(&["uncertainty", "--traj", s(&traj), "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(3));
}
