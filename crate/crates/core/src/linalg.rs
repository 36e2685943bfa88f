//! Small dense linear-algebra helpers over `nalgebra`.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Reciprocal condition threshold below which a matrix is treated as singular.
const RCOND_FLOOR: f64 = 1e-13;

fn check_conditioning(a: &DMatrix<f64>, what: &'static str) -> Result<()> {
    if a.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite(what));
    }
    let sv = a.clone().singular_values();
    let max = sv.max();
    let min = sv.min();
    if max == 0.0 || min / max < RCOND_FLOOR {
        return Err(Error::Singular(what));
    }
    Ok(())
}

pub fn solve(a: &DMatrix<f64>, b: &DVector<f64>, what: &'static str) -> Result<DVector<f64>> {
    check_conditioning(a, what)?;
    a.clone().lu().solve(b).ok_or(Error::Singular(what))
}

pub fn inverse(a: &DMatrix<f64>, what: &'static str) -> Result<DMatrix<f64>> {
    check_conditioning(a, what)?;
    a.clone().try_inverse().ok_or(Error::Singular(what))
}

pub fn symmetrize(a: &DMatrix<f64>) -> DMatrix<f64> {
    (a + a.transpose()) * 0.5
}

/// `bread · meat · breadᵀ`, symmetrized.
pub fn sandwich(bread: &DMatrix<f64>, meat: &DMatrix<f64>) -> DMatrix<f64> {
    symmetrize(&(bread * meat * bread.transpose()))
}

/// Mean outer product `n⁻¹ Σ rᵢ rᵢᵀ` of the rows of `rows`.
pub fn mean_outer(rows: &DMatrix<f64>) -> DMatrix<f64> {
    let n = rows.nrows().max(1) as f64;
    rows.transpose() * rows / n
}

/// Least-squares coefficients via the normal equations.
pub fn least_squares(design: &DMatrix<f64>, y: &DVector<f64>) -> Result<DVector<f64>> {
    let xtx = design.transpose() * design;
    let xty = design.transpose() * y;
    solve(&xtx, &xty, "least squares normal equations")
}

pub fn min_eigenvalue(a: &DMatrix<f64>) -> f64 {
    symmetrize(a).symmetric_eigenvalues().min()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn detects_singularity() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 4.0]);
        assert!(matches!(inverse(&a, "t"), Err(Error::Singular(_))));
        let b = DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 2.0]);
        let inv = inverse(&b, "t").unwrap();
        assert!(((&b * inv) - DMatrix::identity(2, 2)).norm() < 1e-14);
    }
}
