//! Blind deconvolution of photon-limited (Poisson) images.
//!
//! The blur kernel is estimated without supervision: a differentiable
//! non-blind Poisson solver `F(y, h)` is unrolled, and the kernel is refined by
//! gradient steps on `|| G(y) - h * F(y, h) ||^2`, where `G` is a
//! blur-preserving Poisson denoiser. An l1 prior on the kernel is handled by
//! half-quadratic splitting with a soft-threshold step.
//!
//! Module map:
//!
//! * [`field`] dense 2-D fields, symmetric padding, kernel projection
//! * [`conv`] FFT convolution / correlation and a direct-sum reference
//! * [`poisson`] forward model, likelihood, sampling, photon-level estimate
//! * [`solver`] unrolled Richardson-Lucy with an exact hand-written adjoint
//! * [`denoise`] Anscombe + TV denoiser used as the loss target
//! * [`kernel_init`] anisotropic Gaussian initial kernel
//! * [`blind`] the outer kernel-estimation loop
//! * [`metrics`] PSNR, SSIM, kernel MAE
//! * [`synth`] ground-truth motion kernels for simulations

// `!(x > 0.0)` is used on purpose so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod blind;
pub mod conv;
pub mod denoise;
mod error;
pub mod field;
pub mod kernel_init;
pub mod metrics;
pub mod poisson;
pub mod solver;
pub mod synth;
#[cfg(test)]
mod testutil;

pub use error::{Error, Result};
pub use field::{BlurKernel, Field2D};
