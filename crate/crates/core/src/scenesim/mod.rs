//! Synthetic supervision: analytic scenes with exact RGB-D, corrupted depth
//! priors and denoising trajectories whose instability tracks the
//! injected error.

mod camera;
mod corrupt;
mod dataset;
mod scene;
mod trajectory;

pub use camera::{Camera, Intrinsics};
pub use corrupt::{corrupt_prior, Blob, CorruptedPrior, CorruptionSpec};
pub use dataset::{generate, read_dataset, read_trajectories, write_dataset, DepthPrior, Generated, SceneDataset, Split, View};
pub use scene::{make_scene, render_gt, CameraRing, Hit, Material, Primitive, RenderedView, Room, SceneSpec};
pub use trajectory::{synth_hypotheses, synth_trajectory, TrajectorySpec};
