//! Empirical per-step privacy audit.
//!
//! A stage-2 step releases one sample of N(clip(ḡ(D)), (σC)²I). For a pair
//! of batches differing in at most one record, the Rényi divergence of
//! order α between the two release distributions is exactly
//! α·‖clip(ḡ(D)) − clip(ḡ(D′))‖² / (2(σC)²), and because both means lie in
//! the radius-C ball it can never exceed 2α/σ². The audit replays the
//! per-example batch walk for both batches (same parameters, same frozen
//! latent draws) and checks that inequality on the actual clipped means.

use crate::accountant::{self, PrivacyParams};
use crate::cvae;
use crate::data::LabeledDataset;
use crate::error::{Error, Result};
use crate::nn::{DenseNet, FlatParams};
use crate::numerics::RngStream;

use super::{clip_to_norm, streams, EncoderPool};

/// Result of one audited step: the exact divergence and its analytic cap.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AuditOutcome {
    pub divergence: f64,
    pub bound: f64,
}

/// Rényi divergence of order `alpha` between N(mean_a, noise_std²·I) and
/// N(mean_b, noise_std²·I): α·‖a−b‖²/(2·noise_std²).
pub fn renyi_divergence_gaussian(
    mean_a: &[f64],
    mean_b: &[f64],
    noise_std: f64,
    alpha: f64,
) -> Result<f64> {
    if !alpha.is_finite() || alpha <= 1.0 {
        return Err(Error::InvalidOrder(alpha));
    }
    if !(noise_std > 0.0) || !noise_std.is_finite() {
        return Err(Error::invalid_parameter(
            "noise_std",
            format!("must be finite and positive, got {noise_std}"),
        ));
    }
    if mean_a.len() != mean_b.len() {
        return Err(Error::Shape(format!(
            "divergence needs equal-length means, got {} and {}",
            mean_a.len(),
            mean_b.len()
        )));
    }
    let dist_sq: f64 = mean_a
        .iter()
        .zip(mean_b)
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    if !dist_sq.is_finite() {
        return Err(Error::Numeric("non-finite mean distance in audit".into()));
    }
    Ok(alpha * dist_sq / (2.0 * noise_std * noise_std))
}

/// Replays the stage-2 batch walk for one batch and returns the clipped mean
/// decoder gradient, the pre-noise release mean. The pool is cloned, never
/// mutated; `eps[i]` supplies example i's latent draw.
fn replay_clipped_mean(
    pool: &EncoderPool,
    encoder_index: usize,
    decoder: &DenseNet,
    dataset: &LabeledDataset,
    batch: &[usize],
    eps: &[Vec<f64>],
    clip_bound: f64,
    lr: f64,
    freeze_encoders: bool,
) -> Result<FlatParams> {
    let shape = pool.config().shape();
    let mut encoder = pool.encoder(encoder_index).clone();
    let mut adam = pool.adam(encoder_index).clone();
    let mut dec_sum = FlatParams::zeros(decoder.param_count());
    for (pos, &i) in batch.iter().enumerate() {
        let g = cvae::elbo_and_grads_with_eps(
            &encoder,
            decoder,
            shape,
            dataset.image(i),
            dataset.label(i),
            &eps[pos],
        )?;
        dec_sum.add_assign(&g.decoder_grad)?;
        if !freeze_encoders {
            encoder.adam_update(&g.encoder_grad, &mut adam, lr)?;
        }
    }
    dec_sum.scale_in_place(1.0 / batch.len() as f64);
    clip_to_norm(&dec_sum, clip_bound)
}

/// Audits one step: replays both batches from the same parameters with the
/// same frozen latent draws (stream derived from `eps_seed`), computes the
/// exact order-α divergence between the two release distributions, and
/// verifies it against the analytic 2α/σ² cap.
///
/// Batches are positions into `dataset` and must have equal nonzero length
/// and differ in at most one position by record content (image or label);
/// identical batches are the degenerate adjacent pair. Anything else is
/// rejected. A divergence above the cap (beyond a 1e-9 relative margin)
/// returns the violation as an error.
#[allow(clippy::too_many_arguments)]
pub fn audit_step_divergence(
    pool: &EncoderPool,
    encoder_index: usize,
    decoder: &DenseNet,
    dataset: &LabeledDataset,
    batch: &[usize],
    adjacent_batch: &[usize],
    privacy: &PrivacyParams,
    alpha: f64,
    lr: f64,
    freeze_encoders: bool,
    eps_seed: u64,
) -> Result<AuditOutcome> {
    privacy.validate()?;
    if encoder_index >= pool.len() {
        return Err(Error::invalid_parameter(
            "encoder_index",
            format!("{encoder_index} out of range for a pool of {}", pool.len()),
        ));
    }
    if !(lr > 0.0) || !lr.is_finite() {
        return Err(Error::invalid_parameter(
            "lr",
            format!("must be finite and positive, got {lr}"),
        ));
    }
    if batch.is_empty() || batch.len() != adjacent_batch.len() {
        return Err(Error::Data(format!(
            "adjacent batches need equal nonzero sizes, got {} and {}",
            batch.len(),
            adjacent_batch.len()
        )));
    }
    let mut differing = 0usize;
    for (&i, &j) in batch.iter().zip(adjacent_batch) {
        if i.max(j) >= dataset.len() {
            return Err(Error::invalid_parameter(
                "batch",
                format!("index {} out of range for {} records", i.max(j), dataset.len()),
            ));
        }
        let same_content = dataset.label(i) == dataset.label(j)
            && dataset
                .image(i)
                .iter()
                .zip(dataset.image(j))
                .all(|(a, b)| a.to_bits() == b.to_bits());
        if !same_content {
            differing += 1;
        }
    }
    if differing > 1 {
        return Err(Error::Data(format!(
            "batches differ in {differing} records; adjacency allows at most one"
        )));
    }

    // One frozen latent draw per position, shared by both replays, so the
    // divergence isolates the record difference.
    let latent_dim = pool.config().latent_dim;
    let mut eps_rng = RngStream::new(eps_seed, streams::AUDIT_EPS);
    let eps: Vec<Vec<f64>> = (0..batch.len())
        .map(|_| (0..latent_dim).map(|_| eps_rng.next_gaussian()).collect())
        .collect();

    let mean_a = replay_clipped_mean(
        pool, encoder_index, decoder, dataset, batch, &eps,
        privacy.clip_bound, lr, freeze_encoders,
    )?;
    let mean_b = replay_clipped_mean(
        pool, encoder_index, decoder, dataset, adjacent_batch, &eps,
        privacy.clip_bound, lr, freeze_encoders,
    )?;

    let noise_std = privacy.noise_multiplier * privacy.clip_bound;
    let divergence = renyi_divergence_gaussian(&mean_a.0, &mean_b.0, noise_std, alpha)?;
    let bound = accountant::decoder_step_rdp(alpha, privacy.noise_multiplier)?;
    if divergence > bound * (1.0 + 1e-9) {
        return Err(Error::AuditViolation { divergence, bound });
    }
    Ok(AuditOutcome { divergence, bound })
}

// ----------------------------------------------------------------------------
