//! Small dense linear-algebra helpers shared by the solvers and checks.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// `‖a − b‖_F / ‖b‖_F`, with the convention that two zero matrices agree.
pub fn relative_frobenius(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    let diff = (a - b).norm();
    let scale = b.norm();
    if scale == 0.0 {
        if diff == 0.0 {
            0.0
        } else {
            f64::INFINITY
        }
    } else {
        diff / scale
    }
}

pub fn spectral_radius(a: &DMatrix<f64>) -> f64 {
    if a.nrows() == 0 {
        return 0.0;
    }
    a.complex_eigenvalues()
        .iter()
        .map(|z| z.norm())
        .fold(0.0, f64::max)
}

pub fn is_symmetric(m: &DMatrix<f64>) -> bool {
    m.is_square() && (m - m.transpose()).norm() <= 1e-12 * m.norm().max(1.0)
}

/// Smallest eigenvalue of the symmetric part of `m`.
pub fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    SymmetricEigen::new(symmetrize(m))
        .eigenvalues
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min)
}

pub fn is_positive_definite(m: &DMatrix<f64>) -> bool {
    is_symmetric(m) && min_eigenvalue(m) > 0.0
}

pub fn is_positive_semidefinite(m: &DMatrix<f64>) -> bool {
    is_symmetric(m) && min_eigenvalue(m) >= -1e-12 * m.norm().max(1.0)
}

/// Ratio `σ_k / σ_1` of the `k`-th to the largest singular value; the matrix
/// has rank at least `k` when the ratio clears the rank tolerance.
pub fn singular_value_ratio(m: &DMatrix<f64>, k: usize) -> f64 {
    let mut sv: Vec<f64> = m.singular_values().iter().copied().collect();
    sv.sort_by(|a, b| b.total_cmp(a));
    let largest = sv.first().copied().unwrap_or(0.0);
    if largest == 0.0 || k == 0 || k > sv.len() {
        return 0.0;
    }
    sv[k - 1] / largest
}

/// Symmetric square root `S` with `S·S = m` for a PSD matrix.
pub fn sqrt_psd(m: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = SymmetricEigen::new(symmetrize(m));
    let roots = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
    &eig.eigenvectors * DMatrix::from_diagonal(&roots) * eig.eigenvectors.transpose()
}

/// Lower Cholesky factor `F` with `F·Fᵀ = cov`.
pub fn covariance_factor(cov: &DMatrix<f64>, what: &'static str) -> Result<DMatrix<f64>> {
    if !is_symmetric(cov) {
        return Err(Error::NotPositiveDefinite(what));
    }
    nalgebra::Cholesky::new(symmetrize(cov))
        .map(|c| c.l())
        .ok_or(Error::NotPositiveDefinite(what))
}

pub fn inverse(m: &DMatrix<f64>, what: &'static str) -> Result<DMatrix<f64>> {
    m.clone()
        .try_inverse()
        .ok_or(Error::NotPositiveDefinite(what))
}

/// `xᵀ·M·x`.
pub fn quadratic_form(m: &DMatrix<f64>, x: &DVector<f64>) -> f64 {
    let mut acc = 0.0;
    for (j, xj) in x.iter().enumerate() {
        let col = m.column(j);
        let mut dot = 0.0;
        for (i, xi) in x.iter().enumerate() {
            dot += xi * col[i];
        }
        acc += dot * xj;
    }
    acc
}

/// `tr(a·b)` without forming the product.
pub fn trace_of_product(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    a.component_mul(&b.transpose()).sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spectral_radius_of_rotation() {
        let a = DMatrix::from_row_slice(2, 2, &[0.0, -2.0, 2.0, 0.0]);
        assert!((spectral_radius(&a) - 2.0).abs() < 1e-12);
    }

    #[test]
    fn covariance_factor_reproduces_covariance() {
        let cov = DMatrix::from_row_slice(2, 2, &[4.0, 1.0, 1.0, 3.0]);
        let f = covariance_factor(&cov, "cov").unwrap();
        assert!((&f * f.transpose() - &cov).norm() < 1e-12);
        let bad = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        assert!(covariance_factor(&bad, "bad").is_err());
    }

    #[test]
    fn sqrt_psd_squares_back() {
        let m = DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]);
        let s = sqrt_psd(&m);
        assert!((&s * &s - &m).norm() < 1e-12);
    }

    #[test]
    fn trace_and_quadratic_form() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 3.0, 4.0]);
        let b = DMatrix::from_row_slice(2, 2, &[0.5, -1.0, 2.0, 1.5]);
        assert!((trace_of_product(&a, &b) - (&a * &b).trace()).abs() < 1e-12);
        let x = DVector::from_vec(vec![1.0, -2.0]);
        let direct = (x.transpose() * &a * &x)[(0, 0)];
        assert!((quadratic_form(&a, &x) - direct).abs() < 1e-12);
    }

    #[test]
    fn rank_ratio_detects_deficiency() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 4.0]);
        assert!(singular_value_ratio(&m, 2) < 1e-9);
        assert!(singular_value_ratio(&DMatrix::<f64>::zeros(2, 2), 1) == 0.0);
        assert!(singular_value_ratio(&DMatrix::<f64>::identity(2, 2), 2) > 0.99);
    }
}
