//! File formats, training and command-line front end for guided
//! super-resolution with unfolded multimodal convolutional sparse coding.
//! The numerical core lives in `lmcsc-core`.

pub mod checkpoint;
pub mod cli;
pub mod config;
mod error;
pub mod manifest;
pub mod model;
pub mod netpbm;
pub mod trainer;

pub use error::{Error, Result};
pub use lmcsc_core as core;
