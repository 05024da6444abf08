//! Synthetic-data quality metrics.
//!
//! Two views of quality: a Fréchet distance between Gaussian fits of feature
//! distributions, and downstream classifiers trained on synthetic images and
//! tested on real ones. The feature extractor is a PCA map fitted on real
//! pixels (or the raw-pixel identity), NOT a pretrained vision network, so
//! Fréchet values here are only meaningful relative to each other, never
//! comparable to published scores computed on deep features.

pub mod classifier;
pub mod frechet;

pub use classifier::{
    evaluate_accuracy, evaluate_over_seeds, train_classifier, AccuracyReport, ClassAccuracy,
    Classifier, ClassifierKind, ClassifierReport, MlpClassifier, Predict, SoftmaxRegression,
};
pub use frechet::frechet_distance;

use crate::data::LabeledDataset;
use crate::error::{Error, Result};
use crate::numerics::{sym_eig_psd, Matrix};

/// Default PCA feature dimension.
pub const DEFAULT_FEATURE_DIM: usize = 64;
/// Default number of repeated classifier runs averaged in a report.
pub const DEFAULT_EVAL_RUNS: usize = 5;

/// Which feature extractor to fit.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FeatureKind {
    RawPixels,
    Pca,
}

impl FeatureKind {
    pub fn name(self) -> &'static str {
        match self {
            FeatureKind::RawPixels => "raw",
            FeatureKind::Pca => "pca",
        }
    }

    pub fn from_name(name: &str) -> Result<Self> {
        match name {
            "raw" => Ok(FeatureKind::RawPixels),
            "pca" => Ok(FeatureKind::Pca),
            other => Err(Error::invalid_parameter(
                "features",
                format!("unknown feature kind `{other}` (expected raw or pca)"),
            )),
        }
    }
}

/// A fitted feature extractor. Fit on REAL data only; both real and
/// synthetic images must then pass through the same map.
#[derive(Debug, Clone)]
pub enum FeatureMap {
    /// Identity map on pixels.
    Raw { dim: usize },
    /// Orthonormal projection onto the top principal directions of the real
    /// images. `projection` is input_dim x feature_dim, columns orthonormal.
    Pca { mean: Vec<f64>, projection: Matrix },
}

impl FeatureMap {
    pub fn feature_dim(&self) -> usize {
        match self {
            FeatureMap::Raw { dim } => *dim,
            FeatureMap::Pca { projection, .. } => projection.cols(),
        }
    }

    pub fn input_dim(&self) -> usize {
        match self {
            FeatureMap::Raw { dim } => *dim,
            FeatureMap::Pca { projection, .. } => projection.rows(),
        }
    }

    pub fn kind(&self) -> FeatureKind {
        match self {
            FeatureMap::Raw { .. } => FeatureKind::RawPixels,
            FeatureMap::Pca { .. } => FeatureKind::Pca,
        }
    }

    /// Projects one image into feature space.
    pub fn project(&self, image: &[f64]) -> Result<Vec<f64>> {
        if image.len() != self.input_dim() {
            return Err(Error::Shape(format!(
                "feature map expects {} pixels, got {}",
                self.input_dim(),
                image.len()
            )));
        }
        match self {
            FeatureMap::Raw { .. } => Ok(image.to_vec()),
            FeatureMap::Pca { mean, projection } => {
                let mut f = vec![0.0; projection.cols()];
                for i in 0..projection.rows() {
                    let centered = image[i] - mean[i];
                    if centered != 0.0 {
                        for (fj, pj) in f.iter_mut().zip(projection.row(i)) {
                            *fj += centered * pj;
                        }
                    }
                }
                Ok(f)
            }
        }
    }

    /// Maps features back to pixel space (PCA: mean + P·f; raw: identity).
    pub fn reconstruct(&self, features: &[f64]) -> Result<Vec<f64>> {
        if features.len() != self.feature_dim() {
            return Err(Error::Shape(format!(
                "feature map produces {} features, got {}",
                self.feature_dim(),
                features.len()
            )));
        }
        match self {
            FeatureMap::Raw { .. } => Ok(features.to_vec()),
            FeatureMap::Pca { mean, projection } => {
                let mut x = mean.clone();
                for i in 0..projection.rows() {
                    let row = projection.row(i);
                    let mut acc = 0.0;
                    for (pj, fj) in row.iter().zip(features) {
                        acc += pj * fj;
                    }
                    x[i] += acc;
                }
                Ok(x)
            }
        }
    }

    /// Projects every image of a dataset, preserving order.
    pub fn project_dataset(&self, dataset: &LabeledDataset) -> Result<Vec<Vec<f64>>> {
        (0..dataset.len()).map(|i| self.project(dataset.image(i))).collect()
    }
}

/// Fits a feature extractor on real images. For `Pca` the map is the top
/// `feature_dim` principal directions of the pixel covariance and the fit
/// needs at least `feature_dim` samples; for `RawPixels` the identity map is
/// returned and `feature_dim` is ignored.
pub fn fit_features(
    real: &LabeledDataset,
    kind: FeatureKind,
    feature_dim: usize,
) -> Result<FeatureMap> {
    let dim = real.image_dim();
    match kind {
        FeatureKind::RawPixels => Ok(FeatureMap::Raw { dim }),
        FeatureKind::Pca => {
            if feature_dim == 0 || feature_dim > dim {
                return Err(Error::invalid_parameter(
                    "feature_dim",
                    format!("must be in 1..={dim}, got {feature_dim}"),
                ));
            }
            let n = real.len();
            if n < feature_dim {
                return Err(Error::invalid_parameter(
                    "feature_dim",
                    format!("PCA needs at least feature_dim={feature_dim} samples, got {n}"),
                ));
            }
            let mut mean = vec![0.0; dim];
            for i in 0..n {
                for (m, &x) in mean.iter_mut().zip(real.image(i)) {
                    *m += x;
                }
            }
            for m in &mut mean {
                *m /= n as f64;
            }
            let cov = scatter_matrix(real, &mean, 1.0 / (n as f64 - 1.0).max(1.0))?;
            let eig = sym_eig_psd(&cov, 1e-8 * cov.max_abs().max(1.0))?;
            let mut projection = Matrix::zeros(dim, feature_dim);
            for r in 0..dim {
                for c in 0..feature_dim {
                    projection.set(r, c, eig.eigenvectors.get(r, c));
                }
            }
            Ok(FeatureMap::Pca { mean, projection })
        }
    }
}

/// Upper-triangle accumulation of sum (x-mean)(x-mean)^T, mirrored and scaled.
fn scatter_matrix(dataset: &LabeledDataset, mean: &[f64], scale: f64) -> Result<Matrix> {
    let dim = mean.len();
    let mut cov = Matrix::zeros(dim, dim);
    let mut centered = vec![0.0; dim];
    for s in 0..dataset.len() {
        for (c, (&x, &m)) in centered.iter_mut().zip(dataset.image(s).iter().zip(mean)) {
            *c = x - m;
        }
        for i in 0..dim {
            let ci = centered[i];
            if ci == 0.0 {
                continue;
            }
            let row = cov.row_mut(i);
            for (j, &cj) in centered.iter().enumerate().skip(i) {
                row[j] += ci * cj;
            }
        }
    }
    for i in 0..dim {
        for j in i..dim {
            let v = cov.get(i, j) * scale;
            cov.set(i, j, v);
            cov.set(j, i, v);
        }
    }
    Ok(cov)
}

/// Moments of a feature distribution: sample mean and covariance, with the
/// covariance symmetrized and eigenvalue-clamped so it is exactly PSD.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianFit {
    pub mu: Vec<f64>,
    pub sigma: Matrix,
}

impl GaussianFit {
    pub fn dim(&self) -> usize {
        self.mu.len()
    }
}

/// Fits moments to feature vectors: mean, and covariance with denominator
/// N−1. The covariance is clamped onto the PSD cone (negative rounding
/// eigenvalues set to zero) before it is returned.
pub fn gaussian_fit(features: &[Vec<f64>]) -> Result<GaussianFit> {
    if features.len() < 2 {
        return Err(Error::InsufficientData(format!(
            "covariance needs at least 2 samples, got {}",
            features.len()
        )));
    }
    let dim = features[0].len();
    if dim == 0 {
        return Err(Error::Shape("features must have at least one coordinate".into()));
    }
    for (i, f) in features.iter().enumerate() {
        if f.len() != dim {
            return Err(Error::Shape(format!(
                "feature {i} has length {} but the first has {dim}",
                f.len()
            )));
        }
        if f.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!("feature {i} has a non-finite entry")));
        }
    }
    let n = features.len();
    let mut mu = vec![0.0; dim];
    for f in features {
        for (m, &x) in mu.iter_mut().zip(f) {
            *m += x;
        }
    }
    for m in &mut mu {
        *m /= n as f64;
    }
    let mut sigma = Matrix::zeros(dim, dim);
    let mut centered = vec![0.0; dim];
    for f in features {
        for (c, (&x, &m)) in centered.iter_mut().zip(f.iter().zip(&mu)) {
            *c = x - m;
        }
        for i in 0..dim {
            let ci = centered[i];
            if ci == 0.0 {
                continue;
            }
            let row = sigma.row_mut(i);
            for (j, &cj) in centered.iter().enumerate().skip(i) {
                row[j] += ci * cj;
            }
        }
    }
    let scale = 1.0 / (n as f64 - 1.0);
    for i in 0..dim {
        for j in i..dim {
            let v = sigma.get(i, j) * scale;
            sigma.set(i, j, v);
            sigma.set(j, i, v);
        }
    }
    // Clamp rounding leakage below zero; a true sample covariance is PSD.
    let eig = sym_eig_psd(&sigma, 1e-8 * sigma.max_abs().max(1.0))?;
    let clamped = crate::numerics::SymEigDecomposition {
        eigenvalues: eig.eigenvalues.iter().map(|&l| l.max(0.0)).collect(),
        eigenvectors: eig.eigenvectors,
    };
    let sigma = clamped.reconstruct()?.symmetrized()?;
    Ok(GaussianFit { mu, sigma })
}

// ----------------------------------------------------------------------------
