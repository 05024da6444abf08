//! Symmetric PSD eigendecomposition and matrix square root. The solver is
//! nalgebra's SymmetricEigen; this wrapper adds symmetry validation, a
//! descending eigenvalue order, and clamping of the small negative eigenvalues
//! that rounding produces on genuinely PSD inputs.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::numerics::Matrix;

#[derive(Debug, Clone)]
pub struct SymEigDecomposition {
    /// Eigenvalues in descending order, clamped at zero when within tolerance.
    pub eigenvalues: Vec<f64>,
    /// Orthonormal eigenvectors as columns, ordered to match `eigenvalues`.
    pub eigenvectors: Matrix,
}

impl SymEigDecomposition {
    /// V diag(lambda) V^T.
    pub fn reconstruct(&self) -> Result<Matrix> {
        let n = self.eigenvalues.len();
        let v = &self.eigenvectors;
        let mut scaled = v.clone();
        for r in 0..n {
            for c in 0..n {
                scaled.set(r, c, v.get(r, c) * self.eigenvalues[c]);
            }
        }
        scaled.matmul(&v.transpose())
    }
}

/// Eigendecomposition of a symmetric matrix intended to be PSD.
///
/// `tol` bounds the accepted input asymmetry; eigenvalues in [-tol', 0) with
/// tol' = max(tol, 1e-10 * max|lambda|) are clamped to zero. Eigenvalues more
/// negative than that are returned as computed (callers decide whether that is
/// an error).
pub fn sym_eig_psd(m: &Matrix, tol: f64) -> Result<SymEigDecomposition> {
    if !m.is_square() {
        return Err(Error::Shape(format!(
            "sym_eig_psd needs a square matrix, got {}x{}",
            m.rows(),
            m.cols()
        )));
    }
    let tol = tol.max(0.0);
    let asym = m.asymmetry()?;
    if asym > tol {
        return Err(Error::Shape(format!(
            "matrix asymmetry {asym} exceeds tolerance {tol}"
        )));
    }
    let n = m.rows();
    if n == 0 {
        return Ok(SymEigDecomposition {
            eigenvalues: vec![],
            eigenvectors: Matrix::zeros(0, 0),
        });
    }
    let sym = m.symmetrized()?;
    let dm = DMatrix::from_row_slice(n, n, sym.as_slice());
    let eig = dm.symmetric_eigen();

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        eig.eigenvalues[b]
            .partial_cmp(&eig.eigenvalues[a])
            .expect("eigenvalues are finite")
    });

    let max_abs = order
        .iter()
        .map(|&i| eig.eigenvalues[i].abs())
        .fold(0.0f64, f64::max);
    let clamp_tol = tol.max(1e-10 * max_abs);

    let mut eigenvalues = Vec::with_capacity(n);
    let mut eigenvectors = Matrix::zeros(n, n);
    for (c, &i) in order.iter().enumerate() {
        let lam = eig.eigenvalues[i];
        eigenvalues.push(if lam < 0.0 && lam >= -clamp_tol {
            0.0
        } else {
            lam
        });
        for r in 0..n {
            eigenvectors.set(r, c, eig.eigenvectors[(r, i)]);
        }
    }
    Ok(SymEigDecomposition {
        eigenvalues,
        eigenvectors,
    })
}

/// Symmetric PSD square root: S with S S = M.
///
/// Rejects inputs whose spectrum is negative beyond rounding tolerance.
pub fn sqrtm_psd(m: &Matrix) -> Result<Matrix> {
    let sym_tol = 1e-8 * m.max_abs().max(1.0);
    let eig = sym_eig_psd(m, sym_tol)?;
    let max_abs = eig
        .eigenvalues
        .iter()
        .fold(0.0f64, |acc, &l| acc.max(l.abs()));
    let psd_tol = 1e-10 * max_abs.max(1.0);
    if let Some(&bad) = eig.eigenvalues.iter().find(|&&l| l < -psd_tol) {
        return Err(Error::NotPsd(bad));
    }
    let sqrt = SymEigDecomposition {
        eigenvalues: eig
            .eigenvalues
            .iter()
            .map(|&l| l.max(0.0).sqrt())
            .collect(),
        eigenvectors: eig.eigenvectors,
    };
    sqrt.reconstruct()?.symmetrized()
}

// ----------------------------------------------------------------------------
