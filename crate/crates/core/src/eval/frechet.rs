//! Fréchet distance between Gaussian feature fits.

use crate::error::{Error, Result};
use crate::numerics::sqrtm_psd;

use super::GaussianFit;

/// Allowed negative rounding residue before the distance is an error.
const NEGATIVE_RESIDUE_TOL: f64 = 1e-8;

/// Squared Fréchet distance between N(μ_a, Σ_a) and N(μ_b, Σ_b):
/// ‖μ_a−μ_b‖² + tr(Σ_a) + tr(Σ_b) − 2·tr((Σ_a^{1/2} Σ_b Σ_a^{1/2})^{1/2}).
///
/// Rounding can push the result a hair below zero; anything in
/// [−1e-8, 0) is clamped to 0 and anything lower is a numeric error.
pub fn frechet_distance(a: &GaussianFit, b: &GaussianFit) -> Result<f64> {
    if a.dim() != b.dim() || a.sigma.rows() != a.dim() || b.sigma.rows() != b.dim() {
        return Err(Error::Shape(format!(
            "fits have dimensions {} and {}",
            a.dim(),
            b.dim()
        )));
    }
    let mean_sq: f64 = a
        .mu
        .iter()
        .zip(&b.mu)
        .map(|(x, y)| (x - y) * (x - y))
        .sum();
    let root_a = sqrtm_psd(&a.sigma)?;
    let inner = root_a.matmul(&b.sigma)?.matmul(&root_a)?.symmetrized()?;
    let cross = sqrtm_psd(&inner)?;
    let value = mean_sq + a.sigma.trace()? + b.sigma.trace()? - 2.0 * cross.trace()?;
    if !value.is_finite() {
        return Err(Error::Numeric("non-finite Fréchet distance".into()));
    }
    if value < 0.0 {
        // Scale the residue tolerance with the magnitudes involved.
        let scale = (a.sigma.trace()? + b.sigma.trace()?).abs().max(1.0);
        if value >= -NEGATIVE_RESIDUE_TOL * scale {
            return Ok(0.0);
        }
        return Err(Error::Numeric(format!(
            "Fréchet distance computed as {value}, beyond rounding tolerance"
        )));
    }
    Ok(value)
}

// ----------------------------------------------------------------------------

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{Matrix, RngStream};

    fn fit(mu: Vec<f64>, sigma: Matrix) -> GaussianFit {
        GaussianFit { mu, sigma }
    }

    fn random_fit(dim: usize, rng: &mut RngStream) -> GaussianFit {
        // G·G^T + small diagonal: strictly positive definite.
        let g = Matrix::from_vec(
            dim,
            dim,
            (0..dim * dim).map(|_| rng.next_gaussian()).collect(),
        )
        .unwrap();
        let mut sigma = g.matmul(&g.transpose()).unwrap();
        for i in 0..dim {
            sigma.set(i, i, sigma.get(i, i) + 0.1);
        }
        let sigma = sigma.symmetrized().unwrap();
        let mu = (0..dim).map(|_| 2.0 * rng.next_gaussian()).collect();
        fit(mu, sigma)
    }

    #[test]
    fn identical_fits_are_at_distance_zero() {
        let mut rng = RngStream::new(31, 0);
        for _ in 0..5 {
            let a = random_fit(4, &mut rng);
            let d = frechet_distance(&a, &a).unwrap();
            assert!(d.abs() < 1e-6, "distance {d}");
        }
    }

    #[test]
    fn translated_unit_gaussians_are_at_distance_one() {
        let a = fit(vec![0.0], Matrix::from_vec(1, 1, vec![1.0]).unwrap());
        let b = fit(vec![1.0], Matrix::from_vec(1, 1, vec![1.0]).unwrap());
        let d = frechet_distance(&a, &b).unwrap();
        assert!((d - 1.0).abs() < 1e-6, "distance {d}");
    }

    #[test]
    fn axis_swapped_diagonals_match_hand_value() {
        // tr = 5 each; sqrt(diag(4,4)) has trace 4; 5+5-8 = 2.
        let a = fit(vec![0.0, 0.0], Matrix::from_vec(2, 2, vec![1.0, 0.0, 0.0, 4.0]).unwrap());
        let b = fit(vec![0.0, 0.0], Matrix::from_vec(2, 2, vec![4.0, 0.0, 0.0, 1.0]).unwrap());
        let d = frechet_distance(&a, &b).unwrap();
        assert!((d - 2.0).abs() < 1e-9, "distance {d}");
    }

    #[test]
    fn distance_is_symmetric_on_random_fits() {
        let mut rng = RngStream::new(77, 0);
        for _ in 0..100 {
            let a = random_fit(5, &mut rng);
            let b = random_fit(5, &mut rng);
            let ab = frechet_distance(&a, &b).unwrap();
            let ba = frechet_distance(&b, &a).unwrap();
            assert!(
                (ab - ba).abs() <= 1e-8 * ab.abs().max(1.0),
                "{ab} vs {ba}"
            );
            assert!(ab >= 0.0);
        }
    }

    #[test]
    fn dimension_mismatch_is_a_shape_error() {
        let a = fit(vec![0.0], Matrix::from_vec(1, 1, vec![1.0]).unwrap());
        let b = fit(vec![0.0, 0.0], Matrix::from_vec(2, 2, vec![1.0, 0.0, 0.0, 1.0]).unwrap());
        assert!(matches!(frechet_distance(&a, &b), Err(Error::Shape(_))));
    }
}
