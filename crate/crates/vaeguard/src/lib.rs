//! Adversarially robust VAE laboratory.
//!
//! A desk-scale VAE (stride-2 conv encoder, mirrored decoder) plus the pieces
//! needed to study and harden its latent space: projected-gradient attacks on
//! the reconstruction and the encoder, a min-max fine-tuning loop that keeps
//! the latent distribution anchored to the pre-trained encoder, reconstruction
//! and distribution metrics, and latent-geometry analyses (loss surfaces, PCA,
//! cluster tightness).
//!
//! Everything is seeded and single-precision-free: f64 end to end, so repeat
//! runs produce byte-identical artifacts.

pub mod analysis;
pub mod attacks;
pub mod checkpoint;
pub mod config;
pub mod data;
pub mod error;
pub mod linalg;
pub mod manifest;
pub mod metrics;
pub mod nn;
pub mod perceptual;
pub mod rng;
pub mod tensor;
pub mod trainer;
pub mod vae;

pub use error::{Error, Result};
