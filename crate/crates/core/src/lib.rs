//! Greedy latent-space dynamics identification.
//!
//! An autoencoder compresses full-order snapshots to a small latent space
//! where a polynomial dynamics model is fit jointly with the network. A
//! residual-based error indicator picks the next training parameter from a
//! discrete grid, and predictions at unseen parameters interpolate the
//! dynamics coefficients of nearby training points.

// `!(x > 0.0)` is deliberate: NaN has to fail validation too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]
#![allow(clippy::needless_range_loop)]

pub mod config;
pub mod dynamics_id;
pub mod error;
pub mod exec;
pub mod fom;
pub mod greedy;
pub mod interpolation;
pub mod nn;
pub mod parameter_space;
pub mod report;
pub mod rom;
mod serde_util;
pub mod trainer;

pub use error::{Error, Result};
