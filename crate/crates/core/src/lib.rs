//! Two-stage differentially private conditional VAE.
//!
//! Stage 1 pre-trains a pool of K encoders on disjoint partitions of the
//! training data (non-private, parallelizable). Stage 2 trains a freshly
//! initialized decoder under differential privacy: per-step batch gradients
//! are averaged, clipped to an L2 bound, and perturbed with Gaussian noise,
//! while encoders keep training without noise. Only the decoder is released;
//! a Renyi-DP accountant tracks the cumulative (epsilon, delta) spend.
//!
//! Everything is deterministic given a seed: RNG streams are addressable by
//! (seed, stream_id), so identical configurations reproduce runs bitwise.

pub mod accountant;
pub mod cvae;
pub mod data;
pub mod error;
pub mod eval;
pub mod nn;
pub mod numerics;
pub mod training;

pub use error::{Error, Result};
