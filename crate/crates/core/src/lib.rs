//! Single-image dehazing: a dense dilated inverted-residual stage, an
//! attention-based detail-recovery stage, and a quadruplet contrastive
//! regularizer, built on a small reverse-mode tensor engine.
//!
//! Module map:
//! - [`tensor`]: rank-4 tensors, convolution kernels, autograd tape.
//! - [`model`]: architecture config, parameter store, blocks, full network.
//! - [`loss`]: MAE, SSIM, triplet/quadruplet contrastive terms, composite loss.
//! - [`haze`]: atmospheric scattering synthesis and its exact inverse.
//! - [`metrics`] and [`profile`]: PSNR/SSIM and analytic parameter/FLOP counts.
//! - [`train`]: Adam, crop sampling, the training step, checkpoints.
//! - [`ppm`]: binary P6 image I/O.

pub mod error;
pub mod haze;
pub mod loss;
pub mod metrics;
pub mod model;
pub mod par;
pub mod ppm;
pub mod profile;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
