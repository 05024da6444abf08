//! Deterministic image fixture shaped like MNIST: ten distinguishable
//! classes of 28x28 grayscale blobs.
//!
//! Each class gets a template built from three Gaussian bumps whose centers,
//! widths, and amplitudes are drawn once from a seeded stream; samples are
//! the class template under a random brightness factor plus pixel noise,
//! clamped to [0, 1]. The classes are far apart, so a linear classifier
//! separates them easily; this stands in for real data wherever none is
//! available.

use super::{LabeledDataset, Provenance, N_CLASSES};
use crate::numerics::RngStream;

pub const IMAGE_SIDE: usize = 28;

const TEMPLATE_STREAM: u64 = 0xF1;
const SAMPLE_STREAM: u64 = 0xF2;
const BUMPS_PER_CLASS: usize = 3;
const PIXEL_NOISE_STD: f64 = 0.06;

struct Bump {
    cx: f64,
    cy: f64,
    sigma: f64,
    amp: f64,
}

fn class_template(rng: &mut RngStream) -> Vec<f64> {
    let bumps: Vec<Bump> = (0..BUMPS_PER_CLASS)
        .map(|_| Bump {
            cx: 6.0 + 16.0 * rng.next_uniform(),
            cy: 6.0 + 16.0 * rng.next_uniform(),
            sigma: 2.5 + 2.0 * rng.next_uniform(),
            amp: 0.7 + 0.3 * rng.next_uniform(),
        })
        .collect();
    let mut img = vec![0.0; IMAGE_SIDE * IMAGE_SIDE];
    for y in 0..IMAGE_SIDE {
        for x in 0..IMAGE_SIDE {
            let v: f64 = bumps
                .iter()
                .map(|b| {
                    let dx = x as f64 - b.cx;
                    let dy = y as f64 - b.cy;
                    b.amp * (-(dx * dx + dy * dy) / (2.0 * b.sigma * b.sigma)).exp()
                })
                .sum();
            img[y * IMAGE_SIDE + x] = v.clamp(0.0, 1.0);
        }
    }
    img
}

/// Build `n` labeled images; label of record `i` is `i % 10`. Fully
/// determined by `(n, seed)`.
pub fn make_dataset(n: usize, seed: u64) -> LabeledDataset {
    let mut template_rng = RngStream::new(seed, TEMPLATE_STREAM);
    let templates: Vec<Vec<f64>> = (0..N_CLASSES)
        .map(|_| class_template(&mut template_rng))
        .collect();

    let mut sample_rng = RngStream::new(seed, SAMPLE_STREAM);
    let dim = IMAGE_SIDE * IMAGE_SIDE;
    let mut images = Vec::with_capacity(n * dim);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let label = (i % N_CLASSES) as u8;
        let brightness = 0.75 + 0.25 * sample_rng.next_uniform();
        for &t in &templates[label as usize] {
            let noisy = t * brightness + PIXEL_NOISE_STD * sample_rng.next_gaussian();
            images.push(noisy.clamp(0.0, 1.0));
        }
        labels.push(label);
    }
    LabeledDataset::new(images, labels, IMAGE_SIDE, IMAGE_SIDE, Provenance::Real)
        .expect("construction stays inside the dataset invariants")
}

// ----------------------------------------------------------------------------
