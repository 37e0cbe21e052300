//! Inductive feature-generating zero-shot learning with a VAE-GAN generator,
//! a semantic regressor for pseudo class conditions, and prior diagnostics.

pub mod config;
pub mod container;
pub mod data;
pub mod diagnostics;
pub mod error;
pub mod fgen;
pub mod losses;
pub mod numkit;
pub mod pipeline;
pub mod priors;
pub mod regress;
pub mod runner;
pub mod trace;
pub mod vae;
pub mod ver;
pub mod zsl_eval;

pub use error::{Error, Result};

/// Double-precision matrix used by every pipeline stage.
pub type Matrix = numkit::Matrix<f64>;
pub type Matrix32 = numkit::Matrix<f32>;
pub type Mlp2 = numkit::Mlp2Params<f64>;
pub type Mlp2F32 = numkit::Mlp2Params<f32>;
