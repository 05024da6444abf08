//! Deterministic randomness and the small dense linear-algebra kernel used by
//! feature extraction and the Frechet metric.

mod eig;
mod matrix;
mod rng;

pub use eig::{sqrtm_psd, sym_eig_psd, SymEigDecomposition};
pub use matrix::Matrix;
pub use rng::{gaussian_sample, inverse_normal_cdf, RngState, RngStream};
