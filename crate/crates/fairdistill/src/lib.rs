//! Fair synthetic tabular data through latent-space distillation.
//!
//! The pipeline has four stages. A conditional variational autoencoder (the
//! teacher) learns to reconstruct encoded records while a distance-covariance
//! penalty pushes its latent space away from the protected attribute. A
//! smaller student encoder is then distilled against the frozen teacher's
//! latents under a per-coordinate quality loss plus a prior-matching KL term.
//! Synthetic records come from decoding student latents with the frozen
//! teacher decoder, and an evaluation stage scores the result for fairness
//! (selection-rate and error-rate ratios), utility (a random-forest
//! classifier), and sample quality (density/coverage, principal components,
//! feature importances).
//!
//! Everything is seeded and single-threaded; identical configs produce
//! byte-identical artifacts.

pub mod data;
pub mod datagen;
pub mod distill;
pub mod eval;
pub mod fairvae;
pub mod generate;
pub mod nn;
pub mod pipeline;
pub(crate) mod util;

pub use data::{Dataset, SplitPair, TabularSchema};
