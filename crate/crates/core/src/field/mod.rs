//! The radiance field: MLP, optimizer, trainer, checkpoints and rendering.

mod adam;
mod checkpoint;
mod mlp;
mod render;
mod train;

pub use adam::{Adam, AdamParams};
pub use checkpoint::Checkpoint;
pub use mlp::{Bounds, Dropout, Field, FieldArch, FieldOutput, ForwardCache, Linear};
pub use render::{blob_region_rmse, evaluate, render_view, RenderSettings, RenderedImage};
pub use train::{
    bin_centers, loss_and_grads, loss_log_csv, mid_quantiles, train, train_with, BatchOutput, Gradients, LossRecord,
    Model, RayPool, StepInputs, TrainOutput, TrainRay, Trainer, LOSS_LOG_HEADER,
};
