//! Conditional VAE: Gaussian posterior, Bernoulli decoder, label conditioning.
//!
//! The encoder maps `concat(x, onehot(y))` to a single output vector of
//! `2 * latent_dim` values, split into the posterior mean and log-variance.
//! The decoder maps `concat(z, onehot(y))` through a sigmoid output layer to
//! per-pixel Bernoulli means. The ELBO is
//!
//! ```text
//! elbo = sum_j [ x_j ln xhat_j + (1 - x_j) ln(1 - xhat_j) ]
//!      - 0.5 * sum_i [ mu_i^2 + exp(lv_i) - 1 - lv_i ]
//! ```
//!
//! and all gradients here are gradients of the loss `-elbo`, differentiated
//! by hand through the reparameterization `z = mu + eps * exp(lv / 2)`.

use crate::error::{Error, Result};
use crate::nn::{Activation, DenseNet, FlatParams, LayerSpec};
use crate::numerics::RngStream;

/// Decoder outputs are clamped to `[XHAT_CLIP, 1 - XHAT_CLIP]` inside the
/// log-likelihood; the clamp passes no gradient when it is active.
pub const XHAT_CLIP: f64 = 1e-7;

/// `exp` with the exponent capped at 700 to keep the result finite.
pub fn guarded_exp(x: f64) -> f64 {
    x.min(700.0).exp()
}

/// One-hot encoding of a class label.
pub fn one_hot(label: u8, n_classes: usize) -> Result<Vec<f64>> {
    if (label as usize) >= n_classes {
        return Err(Error::InvalidLabel { label, n_classes });
    }
    let mut v = vec![0.0; n_classes];
    v[label as usize] = 1.0;
    Ok(v)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CvaeShape {
    pub input_dim: usize,
    pub latent_dim: usize,
    pub n_classes: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CvaeConfig {
    pub input_dim: usize,
    pub latent_dim: usize,
    pub n_classes: usize,
    pub encoder_hidden: Vec<usize>,
    pub decoder_hidden: Vec<usize>,
}

impl CvaeConfig {
    /// Architecture used throughout the desk-scale experiments: 28x28 images,
    /// ten classes, an 8-dimensional latent.
    pub fn mnist_desk() -> Self {
        CvaeConfig {
            input_dim: 784,
            latent_dim: 8,
            n_classes: 10,
            encoder_hidden: vec![256, 128],
            decoder_hidden: vec![128, 256],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 {
            return Err(Error::invalid_parameter("input_dim", "must be positive"));
        }
        if self.latent_dim == 0 {
            return Err(Error::invalid_parameter("latent_dim", "must be positive"));
        }
        if self.n_classes == 0 || self.n_classes > 256 {
            return Err(Error::invalid_parameter(
                "n_classes",
                format!("must be in 1..=256 (labels are bytes), got {}", self.n_classes),
            ));
        }
        if self.encoder_hidden.contains(&0) || self.decoder_hidden.contains(&0) {
            return Err(Error::invalid_parameter(
                "hidden",
                "hidden layer widths must be positive",
            ));
        }
        Ok(())
    }

    pub fn shape(&self) -> CvaeShape {
        CvaeShape {
            input_dim: self.input_dim,
            latent_dim: self.latent_dim,
            n_classes: self.n_classes,
        }
    }

    /// Hidden layers are relu; the final layer emits `(mu, logvar)` unsquashed.
    pub fn encoder_specs(&self) -> Vec<LayerSpec> {
        let mut dims = vec![self.input_dim + self.n_classes];
        dims.extend_from_slice(&self.encoder_hidden);
        dims.push(2 * self.latent_dim);
        specs_from_dims(&dims, Activation::Identity)
    }

    /// Hidden layers are relu; the final layer is sigmoid (Bernoulli means).
    pub fn decoder_specs(&self) -> Vec<LayerSpec> {
        let mut dims = vec![self.latent_dim + self.n_classes];
        dims.extend_from_slice(&self.decoder_hidden);
        dims.push(self.input_dim);
        specs_from_dims(&dims, Activation::Sigmoid)
    }

    pub fn init_encoder(&self, rng: &mut RngStream) -> Result<DenseNet> {
        self.validate()?;
        DenseNet::init(&self.encoder_specs(), rng)
    }

    pub fn init_decoder(&self, rng: &mut RngStream) -> Result<DenseNet> {
        self.validate()?;
        DenseNet::init(&self.decoder_specs(), rng)
    }
}

fn specs_from_dims(dims: &[usize], last: Activation) -> Vec<LayerSpec> {
    (0..dims.len() - 1)
        .map(|i| LayerSpec {
            input: dims[i],
            output: dims[i + 1],
            activation: if i + 2 == dims.len() { last } else { Activation::Relu },
        })
        .collect()
}

fn check_encoder(encoder: &DenseNet, shape: CvaeShape) -> Result<()> {
    if encoder.input_dim() != shape.input_dim + shape.n_classes
        || encoder.output_dim() != 2 * shape.latent_dim
    {
        return Err(Error::Shape(format!(
            "encoder is {}->{} but the shape requires {}->{}",
            encoder.input_dim(),
            encoder.output_dim(),
            shape.input_dim + shape.n_classes,
            2 * shape.latent_dim
        )));
    }
    Ok(())
}

fn check_decoder(decoder: &DenseNet, shape: CvaeShape) -> Result<()> {
    if decoder.input_dim() != shape.latent_dim + shape.n_classes
        || decoder.output_dim() != shape.input_dim
    {
        return Err(Error::Shape(format!(
            "decoder is {}->{} but the shape requires {}->{}",
            decoder.input_dim(),
            decoder.output_dim(),
            shape.latent_dim + shape.n_classes,
            shape.input_dim
        )));
    }
    Ok(())
}

/// Posterior parameters for one example.
pub fn encode(
    encoder: &DenseNet,
    shape: CvaeShape,
    x: &[f64],
    label: u8,
) -> Result<(Vec<f64>, Vec<f64>)> {
    check_encoder(encoder, shape)?;
    if x.len() != shape.input_dim {
        return Err(Error::Shape(format!(
            "encode: input length {} but shape expects {}",
            x.len(),
            shape.input_dim
        )));
    }
    let mut enc_in = x.to_vec();
    enc_in.extend_from_slice(&one_hot(label, shape.n_classes)?);
    let out = encoder.output(&enc_in)?;
    let (mu, lv) = out.split_at(shape.latent_dim);
    Ok((mu.to_vec(), lv.to_vec()))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ElboTerms {
    pub recon: f64,
    pub kl: f64,
}

impl ElboTerms {
    pub fn elbo(&self) -> f64 {
        self.recon - self.kl
    }
}

#[derive(Debug, Clone)]
pub struct ElboGrads {
    pub terms: ElboTerms,
    /// Gradient of `-elbo` with respect to the decoder parameters.
    pub decoder_grad: FlatParams,
    /// Gradient of `-elbo` with respect to the encoder parameters.
    pub encoder_grad: FlatParams,
}

impl ElboGrads {
    pub fn elbo(&self) -> f64 {
        self.terms.elbo()
    }
}

/// Single-example ELBO and gradients, drawing the reparameterization noise
/// from `rng` (exactly `latent_dim` Gaussians).
pub fn elbo_and_grads(
    encoder: &DenseNet,
    decoder: &DenseNet,
    shape: CvaeShape,
    x: &[f64],
    label: u8,
    rng: &mut RngStream,
) -> Result<ElboGrads> {
    let eps: Vec<f64> = (0..shape.latent_dim).map(|_| rng.next_gaussian()).collect();
    elbo_and_grads_with_eps(encoder, decoder, shape, x, label, &eps)
}

/// As `elbo_and_grads` but with the noise vector supplied by the caller, so a
/// single stochastic realization can be replayed (finite-difference checks,
/// divergence audits).
pub fn elbo_and_grads_with_eps(
    encoder: &DenseNet,
    decoder: &DenseNet,
    shape: CvaeShape,
    x: &[f64],
    label: u8,
    eps: &[f64],
) -> Result<ElboGrads> {
    check_encoder(encoder, shape)?;
    check_decoder(decoder, shape)?;
    if x.len() != shape.input_dim {
        return Err(Error::Shape(format!(
            "elbo: input length {} but shape expects {}",
            x.len(),
            shape.input_dim
        )));
    }
    if eps.len() != shape.latent_dim {
        return Err(Error::Shape(format!(
            "elbo: noise length {} but latent_dim is {}",
            eps.len(),
            shape.latent_dim
        )));
    }
    let onehot = one_hot(label, shape.n_classes)?;

    let mut enc_in = x.to_vec();
    enc_in.extend_from_slice(&onehot);
    let enc_tape = encoder.forward(&enc_in)?;
    let (mu, lv) = enc_tape.output().split_at(shape.latent_dim);

    let sigma: Vec<f64> = lv.iter().map(|&v| guarded_exp(0.5 * v)).collect();
    let z: Vec<f64> = mu
        .iter()
        .zip(&sigma)
        .zip(eps)
        .map(|((&m, &s), &e)| m + e * s)
        .collect();

    let mut dec_in = z.clone();
    dec_in.extend_from_slice(&onehot);
    let dec_tape = decoder.forward(&dec_in)?;
    let xhat_raw = dec_tape.output();

    let lo = XHAT_CLIP;
    let hi = 1.0 - XHAT_CLIP;
    let mut recon = 0.0;
    let mut dec_out_grad = vec![0.0; shape.input_dim];
    for j in 0..shape.input_dim {
        let raw = xhat_raw[j];
        let xh = raw.clamp(lo, hi);
        recon += x[j] * xh.ln() + (1.0 - x[j]) * (1.0 - xh).ln();
        // d(-recon)/dxhat, zeroed where the clamp is active.
        if raw >= lo && raw <= hi {
            dec_out_grad[j] = -(x[j] / xh - (1.0 - x[j]) / (1.0 - xh));
        }
    }

    let kl = 0.5
        * mu
            .iter()
            .zip(lv)
            .map(|(&m, &v)| m * m + guarded_exp(v) - 1.0 - v)
            .sum::<f64>();

    let dec_bp = decoder.backward(&dec_tape, &dec_out_grad)?;
    let dz = &dec_bp.input_grad[..shape.latent_dim];

    let mut enc_out_grad = Vec::with_capacity(2 * shape.latent_dim);
    for i in 0..shape.latent_dim {
        // d(-elbo)/dmu_i: reconstruction path plus the KL term mu_i.
        enc_out_grad.push(dz[i] + mu[i]);
    }
    for i in 0..shape.latent_dim {
        // d(-elbo)/dlv_i: dz/dlv = eps * sigma / 2, KL term (exp(lv) - 1) / 2.
        enc_out_grad.push(dz[i] * eps[i] * 0.5 * sigma[i] + 0.5 * (guarded_exp(lv[i]) - 1.0));
    }
    let enc_bp = encoder.backward(&enc_tape, &enc_out_grad)?;

    let terms = ElboTerms { recon, kl };
    if !terms.elbo().is_finite()
        || !dec_bp.param_grad.is_finite()
        || !enc_bp.param_grad.is_finite()
    {
        return Err(Error::Numeric(format!(
            "non-finite ELBO or gradient (recon {recon}, kl {kl})"
        )));
    }
    Ok(ElboGrads {
        terms,
        decoder_grad: dec_bp.param_grad,
        encoder_grad: enc_bp.param_grad,
    })
}

/// ELBO of one example under noise drawn from `rng`, without gradients.
pub fn elbo(
    encoder: &DenseNet,
    decoder: &DenseNet,
    shape: CvaeShape,
    x: &[f64],
    label: u8,
    rng: &mut RngStream,
) -> Result<ElboTerms> {
    let grads = elbo_and_grads(encoder, decoder, shape, x, label, rng)?;
    Ok(grads.terms)
}

/// Decode a prior sample `z ~ N(0, I)` under the given label. Consumes exactly
/// `latent_dim` Gaussians from `rng`.
pub fn generate(
    decoder: &DenseNet,
    shape: CvaeShape,
    label: u8,
    rng: &mut RngStream,
) -> Result<Vec<f64>> {
    check_decoder(decoder, shape)?;
    let mut dec_in: Vec<f64> = (0..shape.latent_dim).map(|_| rng.next_gaussian()).collect();
    dec_in.extend_from_slice(&one_hot(label, shape.n_classes)?);
    decoder.output(&dec_in)
}

// ----------------------------------------------------------------------------
