//! Depth-guided radiance field training.
//!
//! A radiance field is fit to posed images with the usual photometric loss,
//! and additionally guided by a (possibly wrong) depth prior. Instead of
//! forcing the rendered depth onto the prior, the per-ray distribution of
//! ray termination distances is compared with the prior under the Earth
//! Mover's Distance. A per-pixel uncertainty derived from the instability of
//! a denoising depth predictor balances the two terms.
//!
//! Module map:
//!
//! | module | contents |
//! |--------|----------|
//! | [`raymarch`] | quadrature sampling, transmittance/weights, color and depth rendering |
//! | [`raydist`] | piecewise-constant termination distributions, inverse transform sampling |
//! | [`transport`] | exact 1-D Wasserstein distance and debiased Sinkhorn divergence |
//! | [`uncertainty`] | change counts over denoising trajectories and flip consistency |
//! | [`objective`] | photometric/depth losses and the uncertainty-weighted total |
//! | [`field`] | the MLP radiance field, optimizer, trainer and checkpoints |
//! | [`scenesim`] | synthetic scenes, corrupted priors and synthetic trajectories |
//! | [`metrics`] | depth and photometric evaluation |
//! | [`config`] | flat key-value experiment configuration |

pub mod config;
mod error;
pub mod field;
pub mod io;
pub mod map;
pub mod metrics;
pub mod objective;
pub mod raydist;
pub mod raymarch;
pub mod rng;
pub mod scenesim;
pub mod transport;
pub mod uncertainty;

pub use error::{Error, Result};
pub use map::Map2;
