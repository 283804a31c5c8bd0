//! Synthetic multi-study data with correlated random coefficients, exact
//! conditional risks, and the Monte Carlo experiment runners.
//!
//! Every replicate draws from its own ChaCha stream keyed by
//! `(master_seed, replicate_index)`, so results do not depend on the order
//! or the thread on which replicates run.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, mismatch, Error, Result};
use crate::linalg::{is_symmetric, psd_factor, sym_eigenvalues};
use crate::ridge::StudyData;
use crate::weights::{CovarianceAssumption, HyperParams, PredictionSystem, QuadraticRiskSystem};

mod experiments;

pub use experiments::{
    run_risk_curve_experiment, run_risk_ratio_experiment, run_weight_adaptivity_experiment, theory_summaries,
    theory_system, AdaptivityRow, AdaptivityScenario, AdaptivitySettings, ReplicateCurve, RiskCurve, RiskCurveRow,
    RiskRatioRow,
};

/// Largest condition number accepted for a custom covariance.
pub const MAX_CONDITION_NUMBER: f64 = 1e12;

/// Relative floor used when factoring the coefficient covariance.
const COEFFICIENT_CLIP: f64 = 1e-12;

/// Population covariance of the predictors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum CovSpec {
    Identity,
    /// `Sigma_ij = r^|i - j|`.
    Toeplitz(f64),
    Custom(DMatrix<f64>),
}

impl CovSpec {
    pub fn validate(&self, p: usize) -> Result<()> {
        match self {
            CovSpec::Identity => Ok(()),
            CovSpec::Toeplitz(r) => {
                if r.abs() < 1.0 {
                    Ok(())
                } else {
                    Err(invalid(format!("Toeplitz parameter {r} must lie in (-1, 1)")))
                }
            }
            CovSpec::Custom(m) => {
                if m.nrows() != p || m.ncols() != p {
                    return Err(mismatch(format!("custom covariance is {}x{}, expected {p}x{p}", m.nrows(), m.ncols())));
                }
                if !is_symmetric(m, 1e-10) {
                    return Err(invalid("custom covariance must be symmetric"));
                }
                let ev = sym_eigenvalues(m);
                let (lo, hi) = (ev[0], ev[p - 1]);
                if !(lo > 0.0) || hi / lo > MAX_CONDITION_NUMBER {
                    return Err(invalid(format!(
                        "custom covariance must be positive definite with condition number at most 1e12 \
                         (eigenvalues in [{lo:e}, {hi:e}])"
                    )));
                }
                Ok(())
            }
        }
    }

    pub fn matrix(&self, p: usize) -> DMatrix<f64> {
        match self {
            CovSpec::Identity => DMatrix::identity(p, p),
            CovSpec::Toeplitz(r) => DMatrix::from_fn(p, p, |i, j| r.powi(i.abs_diff(j) as i32)),
            CovSpec::Custom(m) => m.clone(),
        }
    }

    /// Eigenvalues of the population covariance, ascending.
    pub fn eigenvalues(&self, p: usize) -> Vec<f64> {
        match self {
            CovSpec::Identity => vec![1.0; p],
            _ => sym_eigenvalues(&self.matrix(p)).iter().map(|&v| v.max(0.0)).collect(),
        }
    }

    /// What the limiting theory may assume about this covariance.
    pub fn assumption(&self) -> CovarianceAssumption {
        match self {
            CovSpec::Identity => CovarianceAssumption::Identity,
            CovSpec::Toeplitz(_) => CovarianceAssumption::UnitDiagonal,
            CovSpec::Custom(m) => {
                if m.diagonal().iter().all(|&d| (d - 1.0).abs() <= 1e-12) {
                    CovarianceAssumption::UnitDiagonal
                } else {
                    CovarianceAssumption::General
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub hyper: HyperParams,
    pub p: usize,
    pub n: Vec<usize>,
    pub cov: CovSpec,
    pub replicates: usize,
    pub master_seed: u64,
}

impl SimConfig {
    pub const DEFAULT_REPLICATES: usize = 50;

    pub fn new(hyper: HyperParams, p: usize, n: Vec<usize>, cov: CovSpec, replicates: usize, master_seed: u64) -> Result<Self> {
        if p == 0 {
            return Err(invalid("p must be positive"));
        }
        if replicates == 0 {
            return Err(invalid("at least one replicate is required"));
        }
        if n.len() != hyper.k() {
            return Err(mismatch(format!("{} sample sizes for {} studies", n.len(), hyper.k())));
        }
        for (k, &nk) in n.iter().enumerate() {
            if nk == 0 {
                return Err(invalid("sample sizes must be positive"));
            }
            let gamma = p as f64 / nk as f64;
            if (hyper.gamma[k] - gamma).abs() > 1e-9 * gamma {
                return Err(invalid(format!(
                    "gamma_{} = {} does not match p / n = {gamma}",
                    k + 1,
                    hyper.gamma[k]
                )));
            }
        }
        cov.validate(p)?;
        Ok(Self { hyper, p, n, cov, replicates, master_seed })
    }

    /// Builds the hyperparameters from per-study SNRs and noise variances,
    /// with `gamma_k = p / n_k` and the given penalties (default
    /// `gamma_k / alpha_k^2`).
    #[allow(clippy::too_many_arguments)]
    pub fn from_design(
        alpha2: &[f64],
        sigma2: &[f64],
        rho: DMatrix<f64>,
        p: usize,
        n: Vec<usize>,
        cov: CovSpec,
        lambda: Option<Vec<f64>>,
        replicates: usize,
        master_seed: u64,
    ) -> Result<Self> {
        if n.contains(&0) {
            return Err(invalid("sample sizes must be positive"));
        }
        if alpha2.len() != n.len() {
            return Err(mismatch(format!("{} SNR values for {} studies", alpha2.len(), n.len())));
        }
        let gamma: Vec<f64> = n.iter().map(|&nk| p as f64 / nk as f64).collect();
        let lambda = lambda.unwrap_or_else(|| gamma.iter().zip(alpha2).map(|(g, a)| g / a).collect());
        let hyper = HyperParams::new(
            alpha2.iter().map(|a| a.sqrt()).collect(),
            sigma2.iter().map(|s| s.sqrt()).collect(),
            rho,
            gamma,
            lambda,
        )?;
        Self::new(hyper, p, n, cov, replicates, master_seed)
    }

    pub fn k(&self) -> usize {
        self.hyper.k()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticDataset {
    /// True coefficients, one column per study.
    pub betas: DMatrix<f64>,
    pub studies: Vec<StudyData>,
}

/// Reusable sampler holding the covariance factors of one configuration.
#[derive(Debug, Clone)]
pub struct Generator {
    p: usize,
    n: Vec<usize>,
    sigma: Vec<f64>,
    master_seed: u64,
    /// Lower Cholesky factor of the predictor covariance; `None` for identity.
    design_factor: Option<DMatrix<f64>>,
    coefficient_factor: DMatrix<f64>,
}

impl Generator {
    pub fn new(config: &SimConfig) -> Result<Self> {
        let design_factor = match &config.cov {
            CovSpec::Identity => None,
            cov => Some(
                cov.matrix(config.p)
                    .cholesky()
                    .ok_or_else(|| Error::Singular("predictor covariance is not positive definite".into()))?
                    .l(),
            ),
        };
        let coefficient_factor = psd_factor(&config.hyper.coefficient_covariance(), COEFFICIENT_CLIP)?;
        Ok(Self {
            p: config.p,
            n: config.n.clone(),
            sigma: config.hyper.sigma.clone(),
            master_seed: config.master_seed,
            design_factor,
            coefficient_factor,
        })
    }

    pub fn generate(&self, replicate_index: u64) -> Result<SyntheticDataset> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.master_seed);
        rng.set_stream(replicate_index);
        let k = self.n.len();
        let p = self.p;

        // Row j of beta is L z_j / sqrt(p), z_j ~ N(0, I_K).
        let z = gaussian_matrix(&mut rng, k, p);
        let betas = (&self.coefficient_factor * z).transpose() / (p as f64).sqrt();

        let mut studies = Vec::with_capacity(k);
        for (idx, &nk) in self.n.iter().enumerate() {
            let raw = gaussian_matrix(&mut rng, nk, p);
            let x = match &self.design_factor {
                Some(l) => raw * l.transpose(),
                None => raw,
            };
            let noise = DVector::from_fn(nk, |_, _| self.sigma[idx] * rng.sample::<f64, _>(StandardNormal));
            let y = &x * betas.column(idx) + noise;
            studies.push(StudyData::new(x, y, idx + 1)?);
        }
        Ok(SyntheticDataset { betas, studies })
    }
}

fn gaussian_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> DMatrix<f64> {
    // Filled row by row so the draw order is independent of storage layout.
    let mut m = DMatrix::zeros(rows, cols);
    for i in 0..rows {
        for j in 0..cols {
            m[(i, j)] = rng.sample(StandardNormal);
        }
    }
    m
}

/// Draws replicate `replicate_index` of `config`.
pub fn generate_multistudy(config: &SimConfig, replicate_index: u64) -> Result<SyntheticDataset> {
    Generator::new(config)?.generate(replicate_index)
}

/// Exact estimation risk of `w` conditional on the designs and coefficients.
pub fn conditional_estimation_risk(w: &DVector<f64>, system: &QuadraticRiskSystem) -> Result<f64> {
    system.risk(w)
}

/// Exact prediction risk of `w` conditional on the designs and coefficients,
/// including the irreducible noise.
pub fn conditional_prediction_risk(w: &DVector<f64>, system: &PredictionSystem) -> Result<f64> {
    system.system.risk(w)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::weights::{common_correlation, finite_sample_estimation_system, solve_optimal_weights, FiniteSampleModel};
    use approx::assert_relative_eq;

    fn config(k: usize, rho: f64, p: usize, n: usize, cov: CovSpec) -> SimConfig {
        SimConfig::from_design(
            &vec![1.0; k],
            &vec![1.0; k],
            common_correlation(k, rho),
            p,
            vec![n; k],
            cov,
            None,
            4,
            11,
        )
        .unwrap()
    }

    #[test]
    fn perfectly_correlated_columns_coincide() {
        let d = generate_multistudy(&config(3, 1.0, 20, 10, CovSpec::Identity), 0).unwrap();
        for k in 1..3 {
            assert!((d.betas.column(k) - d.betas.column(0)).amax() < 1e-12);
        }
    }

    #[test]
    fn same_seed_and_index_repeat_exactly() {
        let cfg = config(2, 0.4, 15, 12, CovSpec::Toeplitz(0.5));
        let a = generate_multistudy(&cfg, 3).unwrap();
        let b = generate_multistudy(&cfg, 3).unwrap();
        assert_eq!(a, b);
        let c = generate_multistudy(&cfg, 4).unwrap();
        assert_ne!(a.betas, c.betas);
    }

    #[test]
    fn coefficient_correlation_matches_rho() {
        let d = generate_multistudy(&config(2, 0.5, 2000, 5, CovSpec::Identity), 0).unwrap();
        let a = d.betas.column(0);
        let b = d.betas.column(1);
        let (ma, mb) = (a.mean(), b.mean());
        let cov: f64 = a.iter().zip(b.iter()).map(|(x, y)| (x - ma) * (y - mb)).sum();
        let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
        let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
        let r = cov / (va * vb).sqrt();
        assert!((r - 0.5).abs() < 0.05, "sample correlation {r}");
        // sqrt(p) beta has unit variance, so ||beta||^2 is close to one.
        assert!((va - 1.0).abs() < 0.1);
    }

    #[test]
    fn dimensions_and_ids() {
        let cfg = SimConfig::from_design(
            &[1.0, 2.0],
            &[1.0, 0.5],
            common_correlation(2, 0.3),
            8,
            vec![10, 4],
            CovSpec::Identity,
            None,
            1,
            0,
        )
        .unwrap();
        let d = generate_multistudy(&cfg, 0).unwrap();
        assert_eq!(d.betas.shape(), (8, 2));
        assert_eq!(d.studies[0].n(), 10);
        assert_eq!(d.studies[1].n(), 4);
        assert_eq!(d.studies[1].study_id, 2);
        assert_relative_eq!(cfg.hyper.lambda[1], 2.0 / 2.0);
    }

    #[test]
    fn config_validation() {
        let hyper = HyperParams::equal(2, 1.0, 1.0, 0.3, 1.0, 1.0).unwrap();
        assert!(SimConfig::new(hyper.clone(), 10, vec![10, 10], CovSpec::Identity, 1, 0).is_ok());
        assert!(SimConfig::new(hyper.clone(), 10, vec![10, 5], CovSpec::Identity, 1, 0).is_err());
        assert!(SimConfig::new(hyper.clone(), 10, vec![10, 10], CovSpec::Identity, 0, 0).is_err());
        assert!(SimConfig::new(hyper.clone(), 10, vec![10, 10], CovSpec::Toeplitz(1.0), 1, 0).is_err());
        let singular = DMatrix::from_fn(10, 10, |i, j| if i == j && i > 0 { 1.0 } else { 0.0 });
        assert!(SimConfig::new(hyper, 10, vec![10, 10], CovSpec::Custom(singular), 1, 0).is_err());
    }

    #[test]
    fn covariance_assumptions() {
        assert_eq!(CovSpec::Identity.assumption(), CovarianceAssumption::Identity);
        assert_eq!(CovSpec::Toeplitz(0.3).assumption(), CovarianceAssumption::UnitDiagonal);
        let scaled = DMatrix::from_diagonal_element(3, 3, 2.0);
        assert_eq!(CovSpec::Custom(scaled).assumption(), CovarianceAssumption::General);
        let t = CovSpec::Toeplitz(0.5).matrix(4);
        assert_relative_eq!(t[(0, 3)], 0.125);
        assert_relative_eq!(t[(2, 1)], 0.5);
    }

    #[test]
    fn conditional_risks_at_zero_and_optimum() {
        let cfg = config(3, 0.5, 12, 20, CovSpec::Toeplitz(0.5));
        let d = generate_multistudy(&cfg, 1).unwrap();
        let lambda = vec![0.7; 3];
        let est = finite_sample_estimation_system(&d.studies, &d.betas, &cfg.hyper.sigma, &lambda).unwrap();
        let zero = DVector::zeros(3);
        let target = d.betas.column(2);
        assert_relative_eq!(conditional_estimation_risk(&zero, &est).unwrap(), target.norm_squared(), epsilon = 1e-14);
        let sol = solve_optimal_weights(&est).unwrap();
        assert_relative_eq!(conditional_estimation_risk(&sol.weights, &est).unwrap(), sol.risk, epsilon = 1e-12);

        let cov = cfg.cov.matrix(12);
        let pred = FiniteSampleModel::new(&d.studies, &d.betas)
            .unwrap()
            .with_population_covariance(&cov)
            .unwrap()
            .prediction_system(&cfg.hyper.sigma, &lambda)
            .unwrap();
        let expected = 1.0 + target.dot(&(&cov * target));
        assert_relative_eq!(conditional_prediction_risk(&zero, &pred).unwrap(), expected, epsilon = 1e-12);
        let sol = pred.solve().unwrap();
        assert_relative_eq!(conditional_prediction_risk(&sol.weights, &pred).unwrap(), sol.risk, epsilon = 1e-12);
    }

    #[test]
    fn scalar_worked_examples() {
        let study = StudyData::new(DMatrix::from_element(1, 1, 1.0), DVector::from_element(1, 0.0), 1).unwrap();
        let beta = DMatrix::from_element(1, 1, 2.0);
        let w = DVector::from_element(1, 1.6);
        let est = finite_sample_estimation_system(std::slice::from_ref(&study), &beta, &[1.0], &[1.0]).unwrap();
        assert_relative_eq!(conditional_estimation_risk(&w, &est).unwrap(), 0.8, epsilon = 1e-12);
        let pred = FiniteSampleModel::new(&[study], &beta)
            .unwrap()
            .with_population_covariance(&DMatrix::identity(1, 1))
            .unwrap()
            .prediction_system(&[1.0], &[1.0])
            .unwrap();
        assert_relative_eq!(conditional_prediction_risk(&w, &pred).unwrap(), 1.8, epsilon = 1e-12);
    }
}
