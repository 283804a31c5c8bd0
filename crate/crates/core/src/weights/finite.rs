//! Finite-sample risk systems, conditional on the designs and the true
//! coefficients. Every study's sample covariance is decomposed once, so a
//! penalty sweep costs `O(p^2 K)` per penalty.

use nalgebra::{DMatrix, DVector};

use crate::error::{invalid, mismatch, Result};
use crate::ridge::{StudyData, StudyDecomposition};
use crate::weights::{PredictionSystem, QuadraticRiskSystem};

#[derive(Debug, Clone)]
pub struct FiniteSampleModel {
    decomps: Vec<StudyDecomposition>,
    betas: DMatrix<f64>,
    /// `U_k^T beta_k` per study.
    rotated_betas: Vec<DVector<f64>>,
    population: Option<Population>,
}

#[derive(Debug, Clone)]
struct Population {
    cov: DMatrix<f64>,
    /// `diag(U_k^T Sigma U_k)` per study.
    rotated_diag: Vec<DVector<f64>>,
}

impl FiniteSampleModel {
    pub fn new(studies: &[StudyData], true_betas: &DMatrix<f64>) -> Result<Self> {
        let decomps = studies.iter().map(StudyDecomposition::new).collect::<Result<Vec<_>>>()?;
        Self::from_decompositions(decomps, true_betas.clone())
    }

    pub fn from_decompositions(decomps: Vec<StudyDecomposition>, betas: DMatrix<f64>) -> Result<Self> {
        if decomps.is_empty() {
            return Err(invalid("no studies"));
        }
        if betas.ncols() != decomps.len() {
            return Err(mismatch(format!("{} coefficient columns for {} studies", betas.ncols(), decomps.len())));
        }
        let p = betas.nrows();
        if let Some(d) = decomps.iter().find(|d| d.p() != p) {
            return Err(mismatch(format!("study with {} predictors, coefficients have {p}", d.p())));
        }
        let rotated_betas =
            decomps.iter().enumerate().map(|(k, d)| d.rotate(&betas.column(k).clone_owned())).collect();
        Ok(Self { decomps, betas, rotated_betas, population: None })
    }

    /// Attaches the population covariance needed for prediction risks.
    pub fn with_population_covariance(mut self, cov: &DMatrix<f64>) -> Result<Self> {
        let p = self.betas.nrows();
        if cov.nrows() != p || cov.ncols() != p {
            return Err(mismatch(format!("population covariance is {}x{}, expected {p}x{p}", cov.nrows(), cov.ncols())));
        }
        let rotated_diag = self
            .decomps
            .iter()
            .map(|d| {
                let su = cov * &d.eigenvectors;
                DVector::from_fn(p, |i, _| d.eigenvectors.column(i).dot(&su.column(i)))
            })
            .collect();
        self.population = Some(Population { cov: cov.clone(), rotated_diag });
        Ok(self)
    }

    pub fn k(&self) -> usize {
        self.decomps.len()
    }

    pub fn decompositions(&self) -> &[StudyDecomposition] {
        &self.decomps
    }

    pub fn betas(&self) -> &DMatrix<f64> {
        &self.betas
    }

    fn check(&self, sigma: &[f64], lambda: &[f64]) -> Result<()> {
        let k = self.k();
        if sigma.len() != k || lambda.len() != k {
            return Err(mismatch(format!("expected {k} noise levels and penalties")));
        }
        if lambda.iter().any(|&l| !(l > 0.0 && l.is_finite())) {
            return Err(invalid("penalties must be positive"));
        }
        Ok(())
    }

    /// Columns `Q_k beta_k` with `Q_k = (S_k + lambda_k I)^-1 S_k`.
    pub fn signal_columns(&self, lambda: &[f64]) -> DMatrix<f64> {
        let p = self.betas.nrows();
        let mut b = DMatrix::zeros(p, self.k());
        for (k, d) in self.decomps.iter().enumerate() {
            let l = lambda[k];
            b.set_column(k, &d.apply_rotated(&self.rotated_betas[k], |ev| ev / (ev + l)));
        }
        b
    }

    pub fn estimation_system(&self, sigma: &[f64], lambda: &[f64]) -> Result<QuadraticRiskSystem> {
        self.check(sigma, lambda)?;
        let b = self.signal_columns(lambda);
        let target = self.betas.column(self.k() - 1);
        let linear = b.tr_mul(&target);
        let mut matrix = b.tr_mul(&b);
        for (k, d) in self.decomps.iter().enumerate() {
            // sigma_k^2 tr{(S + l I)^-2 S} / n_k
            let l = lambda[k];
            let tr: f64 = d.eigenvalues.iter().map(|&ev| ev / ((ev + l) * (ev + l))).sum();
            matrix[(k, k)] += sigma[k] * sigma[k] * tr / d.n as f64;
        }
        QuadraticRiskSystem::new(symmetrize(matrix), linear, target.norm_squared())
    }

    pub fn prediction_system(&self, sigma: &[f64], lambda: &[f64]) -> Result<PredictionSystem> {
        self.check(sigma, lambda)?;
        let pop = self
            .population
            .as_ref()
            .ok_or_else(|| invalid("prediction risk needs the population covariance"))?;
        let b = self.signal_columns(lambda);
        let target = self.betas.column(self.k() - 1).clone_owned();
        let sigma_b = &pop.cov * &b;
        let linear = sigma_b.tr_mul(&target);
        let mut matrix = b.tr_mul(&sigma_b);
        for (k, d) in self.decomps.iter().enumerate() {
            // sigma_k^2 tr{(S + l I)^-1 S (S + l I)^-1 Sigma} / n_k
            let l = lambda[k];
            let tr: f64 = d
                .eigenvalues
                .iter()
                .zip(pop.rotated_diag[k].iter())
                .map(|(&ev, &s)| ev * s / ((ev + l) * (ev + l)))
                .sum();
            matrix[(k, k)] += sigma[k] * sigma[k] * tr / d.n as f64;
        }
        let noise = sigma[self.k() - 1] * sigma[self.k() - 1];
        let base = noise + target.dot(&(&pop.cov * &target));
        PredictionSystem::new(QuadraticRiskSystem::new(symmetrize(matrix), linear, base)?, noise)
    }
}

fn symmetrize(m: DMatrix<f64>) -> DMatrix<f64> {
    (&m + m.transpose()) * 0.5
}
