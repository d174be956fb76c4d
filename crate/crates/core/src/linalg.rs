//! Dense symmetric-matrix helpers shared by the solver, synthesis and the
//! simulator.

use nalgebra::{DMatrix, DVector, Schur, SymmetricEigen};

use crate::error::{Error, Result};

/// Symmetry tolerance for matrices built from data (relative to the largest entry).
pub const SYMMETRY_TOL: f64 = 1e-12;

pub fn max_asymmetry(m: &DMatrix<f64>) -> f64 {
    let mut worst = 0.0_f64;
    for i in 0..m.nrows() {
        for j in (i + 1)..m.ncols() {
            worst = worst.max((m[(i, j)] - m[(j, i)]).abs());
        }
    }
    worst
}

/// Fails unless `m` is square and symmetric to `SYMMETRY_TOL` relative to its scale.
pub fn ensure_symmetric(m: &DMatrix<f64>) -> Result<()> {
    if !m.is_square() {
        return Err(Error::Dimension {
            context: "symmetric matrix",
            expected: "square".into(),
            found: format!("{}×{}", m.nrows(), m.ncols()),
        });
    }
    let asym = max_asymmetry(m);
    if asym > SYMMETRY_TOL * m.amax().max(1.0) {
        return Err(Error::NotSymmetric { asymmetry: asym });
    }
    Ok(())
}

pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Eigenvalues of the symmetric part of `m`, ascending.
pub fn sym_eigenvalues(m: &DMatrix<f64>) -> DVector<f64> {
    let mut ev = SymmetricEigen::new(symmetrize(m)).eigenvalues;
    ev.as_mut_slice().sort_by(|a, b| a.total_cmp(b));
    ev
}

pub fn lambda_max(m: &DMatrix<f64>) -> f64 {
    let ev = sym_eigenvalues(m);
    ev[ev.len() - 1]
}

pub fn lambda_min(m: &DMatrix<f64>) -> f64 {
    sym_eigenvalues(m)[0]
}

/// Induced 2-norm (largest singular value).
pub fn spectral_norm(m: &DMatrix<f64>) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    m.clone()
        .svd(false, false)
        .singular_values
        .iter()
        .fold(0.0_f64, |a, &b| a.max(b))
}

pub fn ensure_spd(m: &DMatrix<f64>, what: &'static str) -> Result<()> {
    ensure_symmetric(m)?;
    if lambda_min(m) <= 0.0 {
        return Err(Error::NotPositiveDefinite(what));
    }
    Ok(())
}

/// Numerical rank with the relative singular-value cutoff `rel_tol · σ_max`.
pub fn numerical_rank(m: &DMatrix<f64>, rel_tol: f64) -> usize {
    if m.is_empty() {
        return 0;
    }
    let sv = m.clone().svd(false, false).singular_values;
    let smax = sv.iter().fold(0.0_f64, |a, &b| a.max(b));
    if smax == 0.0 {
        return 0;
    }
    sv.iter().filter(|&&s| s > rel_tol * smax).count()
}

/// Largest real part over the eigenvalues of a real square matrix.
pub fn spectral_abscissa(m: &DMatrix<f64>) -> Result<f64> {
    if !m.is_square() || m.nrows() == 0 {
        return Err(Error::Dimension {
            context: "spectral_abscissa",
            expected: "non-empty square".into(),
            found: format!("{}×{}", m.nrows(), m.ncols()),
        });
    }
    let schur = Schur::try_new(m.clone(), f64::EPSILON, 10_000).ok_or(Error::EigenNoConvergence)?;
    let abscissa = schur
        .complex_eigenvalues()
        .iter()
        .map(|z| z.re)
        .fold(f64::NEG_INFINITY, f64::max);
    if abscissa.is_finite() {
        Ok(abscissa)
    } else {
        Err(Error::EigenNoConvergence)
    }
}

/// Block-diagonal/block assembly helper: writes `block` at (row, col) and its
/// transpose at (col, row) when off-diagonal.
pub(crate) fn set_sym_block(m: &mut DMatrix<f64>, row: usize, col: usize, block: &DMatrix<f64>) {
    m.view_mut((row, col), block.shape()).copy_from(block);
    if row != col {
        let bt = block.transpose();
        m.view_mut((col, row), bt.shape()).copy_from(&bt);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn abscissa_of_simple_matrices() {
        let m = -DMatrix::<f64>::identity(3, 3);
        assert!((spectral_abscissa(&m).unwrap() + 1.0).abs() < 1e-12);
        let d = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, -2.0]));
        assert!((spectral_abscissa(&d).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn asymmetric_is_rejected() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 0.0, 1.0]);
        assert!(matches!(ensure_symmetric(&m), Err(Error::NotSymmetric { .. })));
    }

    #[test]
    fn rank_of_identical_columns() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        assert_eq!(numerical_rank(&m, 1e-8), 1);
    }
}
