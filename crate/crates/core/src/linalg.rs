//! Small dense helpers on top of nalgebra.

use faer::{Mat, Side};
use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{invalid, Error, Result};

/// Eigen-decomposition of a symmetric matrix with eigenvalues sorted
/// ascending (columns of the eigenvector matrix permuted to match). Only the
/// lower triangle is read after symmetrising.
pub fn sym_eigen(m: &DMatrix<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let n = m.nrows();
    let sym = to_faer_symmetric(m);
    let eig = match sym.self_adjoint_eigen(Side::Lower) {
        Ok(e) => e,
        // Non-finite input; fall back to nalgebra, which propagates NaN.
        Err(_) => return nalgebra_eigen(m),
    };
    let s = eig.S();
    let u = eig.U();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| s[a].total_cmp(&s[b]));
    let values = DVector::from_iterator(n, order.iter().map(|&i| s[i]));
    let vectors = DMatrix::from_fn(n, n, |i, j| u[(i, order[j])]);
    (values, vectors)
}

pub fn sym_eigenvalues(m: &DMatrix<f64>) -> DVector<f64> {
    let sym = to_faer_symmetric(m);
    let mut v: Vec<f64> = match sym.self_adjoint_eigenvalues(Side::Lower) {
        Ok(v) => v,
        Err(_) => return nalgebra_eigen(m).0,
    };
    v.sort_by(f64::total_cmp);
    DVector::from_vec(v)
}

fn to_faer_symmetric(m: &DMatrix<f64>) -> Mat<f64> {
    Mat::from_fn(m.nrows(), m.ncols(), |i, j| 0.5 * (m[(i, j)] + m[(j, i)]))
}

fn nalgebra_eigen(m: &DMatrix<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let eig = SymmetricEigen::new((m + m.transpose()) * 0.5);
    (eig.eigenvalues, eig.eigenvectors)
}

/// Factor `L` with `L L^T = m` for a symmetric PSD matrix. Eigenvalues below
/// `floor * max_eigenvalue` are clipped to zero; anything more negative than
/// `-sqrt(floor) * max_eigenvalue` is rejected.
pub fn psd_factor(m: &DMatrix<f64>, floor: f64) -> Result<DMatrix<f64>> {
    let (values, vectors) = sym_eigen(m);
    let top = values.iter().fold(0.0_f64, |a, &b| a.max(b.abs()));
    let min = values.iter().fold(f64::INFINITY, |a, &b| a.min(b));
    if min < -floor.sqrt() * top.max(1.0) {
        return Err(Error::NotPositiveSemidefinite(min));
    }
    let mut factor = vectors;
    for (j, &ev) in values.iter().enumerate() {
        let s = if ev > floor * top { ev.sqrt() } else { 0.0 };
        factor.column_mut(j).scale_mut(s);
    }
    Ok(factor)
}

/// Solve a symmetric positive-definite system via Cholesky.
pub fn spd_solve(a: &DMatrix<f64>, b: &DVector<f64>) -> Result<DVector<f64>> {
    if a.nrows() != a.ncols() || a.nrows() != b.len() {
        return Err(invalid("spd_solve: shape mismatch"));
    }
    let sym = (a + a.transpose()) * 0.5;
    let chol = sym
        .cholesky()
        .ok_or_else(|| Error::Singular("matrix is not positive definite".into()))?;
    Ok(chol.solve(b))
}

pub fn is_symmetric(m: &DMatrix<f64>, tol: f64) -> bool {
    if m.nrows() != m.ncols() {
        return false;
    }
    let scale = m.amax().max(1.0);
    (0..m.nrows()).all(|i| (0..i).all(|j| (m[(i, j)] - m[(j, i)]).abs() <= tol * scale))
}

pub fn all_finite(values: &[f64]) -> bool {
    values.iter().all(|v| v.is_finite())
}
