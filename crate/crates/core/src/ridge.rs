//! Per-study ridge estimation and weighted aggregation.

use nalgebra::{DMatrix, DVector};

use crate::error::{invalid, mismatch, Result};
use crate::linalg::{all_finite, sym_eigen};
use crate::spectral::{spectral_summary, SpectralSummary};

/// One study's design matrix (`n_k x p`) and response vector.
#[derive(Debug, Clone, PartialEq)]
pub struct StudyData {
    pub x: DMatrix<f64>,
    pub y: DVector<f64>,
    /// 1-based; the largest id is the target study.
    pub study_id: usize,
}

impl StudyData {
    pub fn new(x: DMatrix<f64>, y: DVector<f64>, study_id: usize) -> Result<Self> {
        if x.nrows() == 0 || x.ncols() == 0 {
            return Err(invalid("study design must have at least one row and one column"));
        }
        if x.nrows() != y.len() {
            return Err(mismatch(format!("design has {} rows, response has {}", x.nrows(), y.len())));
        }
        if !all_finite(x.as_slice()) || !all_finite(y.as_slice()) {
            return Err(invalid("study data contains non-finite values"));
        }
        Ok(Self { x, y, study_id })
    }

    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn p(&self) -> usize {
        self.x.ncols()
    }

    /// Aspect ratio `p / n`.
    pub fn gamma(&self) -> f64 {
        self.p() as f64 / self.n() as f64
    }

    pub fn rows(&self, idx: &[usize]) -> StudyData {
        StudyData { x: self.x.select_rows(idx), y: self.y.select_rows(idx), study_id: self.study_id }
    }
}

/// Coefficient vectors as columns, one per study, with their penalties.
#[derive(Debug, Clone, PartialEq)]
pub struct CoefficientSet {
    pub betas: DMatrix<f64>,
    pub lambda: Vec<f64>,
}

impl CoefficientSet {
    pub fn new(betas: DMatrix<f64>, lambda: Vec<f64>) -> Result<Self> {
        if betas.ncols() != lambda.len() {
            return Err(mismatch(format!("{} coefficient columns, {} penalties", betas.ncols(), lambda.len())));
        }
        if !all_finite(betas.as_slice()) || lambda.iter().any(|&l| !(l > 0.0)) {
            return Err(invalid("coefficients must be finite and penalties positive"));
        }
        Ok(Self { betas, lambda })
    }

    pub fn k(&self) -> usize {
        self.betas.ncols()
    }
}

/// `X^T X / n`.
pub fn sample_covariance(x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if x.nrows() == 0 || x.ncols() == 0 {
        return Err(invalid("empty design matrix"));
    }
    let n = x.nrows() as f64;
    let mut s = x.transpose() * x / n;
    // Symmetrise away rounding so downstream eigensolvers see an exact
    // symmetric input.
    let p = s.nrows();
    for i in 0..p {
        for j in 0..i {
            let avg = 0.5 * (s[(i, j)] + s[(j, i)]);
            s[(i, j)] = avg;
            s[(j, i)] = avg;
        }
    }
    Ok(s)
}

/// Ridge estimate `(S + lambda I)^-1 X^T Y / n` via a Cholesky solve.
pub fn ridge_estimate(data: &StudyData, lambda: f64) -> Result<DVector<f64>> {
    if !(lambda > 0.0 && lambda.is_finite()) {
        return Err(invalid(format!("lambda must be positive, got {lambda}")));
    }
    let mut a = sample_covariance(&data.x)?;
    for i in 0..a.nrows() {
        a[(i, i)] += lambda;
    }
    let rhs = data.x.tr_mul(&data.y) / data.n() as f64;
    let chol = a
        .cholesky()
        .ok_or_else(|| crate::Error::Singular("ridge system is not positive definite".into()))?;
    Ok(chol.solve(&rhs))
}

/// `sum_k W_k beta_k`.
pub fn aggregate(coeffs: &CoefficientSet, w: &DVector<f64>) -> Result<DVector<f64>> {
    if w.len() != coeffs.k() {
        return Err(mismatch(format!("{} weights for {} studies", w.len(), coeffs.k())));
    }
    Ok(&coeffs.betas * w)
}

/// Eigen-decomposition of one study's sample covariance, reused across a
/// grid of penalties.
#[derive(Debug, Clone)]
pub struct StudyDecomposition {
    /// Ascending, clipped at zero.
    pub eigenvalues: DVector<f64>,
    pub eigenvectors: DMatrix<f64>,
    /// `U^T X^T Y / n`.
    rotated_xty: DVector<f64>,
    pub n: usize,
}

impl StudyDecomposition {
    pub fn new(data: &StudyData) -> Result<Self> {
        let s = sample_covariance(&data.x)?;
        let (mut values, vectors) = sym_eigen(&s);
        values.iter_mut().for_each(|v| *v = v.max(0.0));
        let xty = data.x.tr_mul(&data.y) / data.n() as f64;
        let rotated_xty = vectors.tr_mul(&xty);
        Ok(Self { eigenvalues: values, eigenvectors: vectors, rotated_xty, n: data.n() })
    }

    pub fn p(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn gamma(&self) -> f64 {
        self.p() as f64 / self.n as f64
    }

    pub fn summary(&self, lambda: f64) -> Result<SpectralSummary> {
        spectral_summary(self.eigenvalues.as_slice(), lambda, self.gamma())
    }

    pub fn ridge(&self, lambda: f64) -> Result<DVector<f64>> {
        if !(lambda > 0.0) {
            return Err(invalid(format!("lambda must be positive, got {lambda}")));
        }
        let scaled = self.rotated_xty.zip_map(&self.eigenvalues, |c, l| c / (l + lambda));
        Ok(&self.eigenvectors * scaled)
    }

    /// Applies `f(S)` for a spectral function `f` to a vector given in the
    /// rotated basis, returning the result in the original basis.
    pub fn apply_rotated(&self, rotated: &DVector<f64>, f: impl Fn(f64) -> f64) -> DVector<f64> {
        let scaled = rotated.zip_map(&self.eigenvalues, |c, l| c * f(l));
        &self.eigenvectors * scaled
    }

    pub fn rotate(&self, x: &DVector<f64>) -> DVector<f64> {
        self.eigenvectors.tr_mul(x)
    }
}
