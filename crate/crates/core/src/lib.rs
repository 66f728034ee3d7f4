//! Desk-scale laboratory for adversarial information maximization in response
//! generation.
//!
//! The crate provides a small reverse-mode differentiation engine, CNN-LSTM
//! generators with an embedding-cosine discriminator, the cGAN / AIM / DAIM
//! objectives with deterministic-path and score-function gradient estimators,
//! the usual dialogue diversity and relevance metrics, and brute-force oracles
//! (exact mutual information, exact expected gradients) used to check the
//! estimators on enumerable toy tasks.

pub mod autodiff;
pub mod corpus;
pub mod error;
pub mod io;
pub mod metrics;
pub mod objectives;
pub mod oracles;
pub mod params;
pub mod rng;
pub mod selftest;
pub mod seqmodels;
pub mod trainer;

pub use error::{Error, Result};
