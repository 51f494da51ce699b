//! Coupled convolutional sparse coding for guided image super-resolution.
//!
//! The crate holds the numerical core of the LMCSC model: the ℓ1-ℓ1 proximal
//! operator with side information, a same-padded convolution engine with
//! exact adjoints and vector-Jacobian products, the iterative coupled
//! sparse-coding solver, the unfolded three-branch network with
//! reverse-mode gradients and Adam, image resampling/degradation, and the
//! PSNR/SSIM metrics.
//!
//! Everything here is `no_std` + `alloc`; file formats, the training loop
//! and the command line live in the `lmcsc` companion crate.

#![no_std]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod adam;
pub mod conv;
pub mod dataset;
mod error;
pub mod grad;
pub mod gradcheck;
pub mod image;
pub mod metrics;
pub mod network;
pub mod prox;
mod real;
pub mod solver;
pub mod synthetic;
pub mod train;
mod tensor;

pub use error::{Error, Result};
pub use real::Real;
pub use tensor::{FeatureMaps, KernelBank, Tensor};
