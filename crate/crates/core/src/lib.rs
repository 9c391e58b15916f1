//! Desk-scale cross-modal knowledge distillation for coordinate-classification
//! landmark detection.
//!
//! The crate provides, bottom to top:
//!
//! - [`autograd`]: a tape-based reverse-mode AD tensor core (f64 everywhere);
//! - [`nn`]: small scalable conv backbones with SimCC coordinate-classification
//!   heads, separable so heads and backbones can be cross-plugged;
//! - [`losses`]: feature mimicry, logits distillation, visibility-masked
//!   keypoint supervision, dual-injection losses, and the time-adaptive decay
//!   that combines them;
//! - [`optim`]: AdamW, cosine-annealing LR, early stopping, gradient norms;
//! - [`data`]: a seeded procedural generator of paired RGB/thermal landmark
//!   scenes with an on-disk format;
//! - [`pipeline`]: the three training stages (teacher pretraining, cross-modal
//!   transfer, intra-modal compression) with checkpointing and logging;
//! - [`eval`]: SimCC decoding, NME under both normalizations, arm comparison;
//! - [`stability`]: gradient-norm stability analytics;
//! - [`config`]: flat key-value run configuration with digesting.

pub mod autograd;
pub mod config;
pub mod data;
pub mod error;
pub mod eval;
pub mod hash;
pub mod losses;
pub mod nn;
pub mod optim;
pub mod pipeline;
pub mod stability;

pub use error::{Error, Result};
