//! Generalized DP-SGD training with individual, batch and layerwise clipping,
//! an f-DP privacy accountant, and an empirical trade-off harness.

pub mod accountant;
pub mod attack;
pub mod clipping;
pub mod data;
pub mod engine;
pub mod error;
pub mod experiment;
pub mod nn;
pub mod rng;
pub mod sampling;

pub use error::{Error, Result};
