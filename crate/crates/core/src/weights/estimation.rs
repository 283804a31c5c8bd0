//! Estimation-risk systems: `E ||sum_k W_k beta_hat_k - beta_K||^2` given
//! the designs.

use nalgebra::{DMatrix, DVector};

use crate::error::Result;
use crate::ridge::StudyData;
use crate::spectral::{cross_term_e, SpectralSummary};
use crate::weights::{check_summaries, select_cross_mode, CovarianceAssumption, FiniteSampleModel, HyperParams, QuadraticRiskSystem};

/// Finite-sample system from the true coefficients (oracle mode):
/// `v_k = beta_k^T Q_k beta_K`, `A = B^T B`,
/// `R_kk = sigma_k^2 tr{(S_k + l_k I)^-2 S_k} / n_k`, `base = ||beta_K||^2`.
pub fn finite_sample_estimation_system(
    studies: &[StudyData],
    true_betas: &DMatrix<f64>,
    sigma: &[f64],
    lambda: &[f64],
) -> Result<QuadraticRiskSystem> {
    FiniteSampleModel::new(studies, true_betas)?.estimation_system(sigma, lambda)
}

/// Limiting system as `p / n_k -> gamma_k`.
pub fn asymptotic_estimation_system(
    hyper: &HyperParams,
    summaries: &[SpectralSummary],
    cov: CovarianceAssumption,
) -> Result<QuadraticRiskSystem> {
    check_summaries(hyper, summaries)?;
    let k = hyper.k();
    let target = k - 1;
    let scale = |i: usize| hyper.alpha[i] * hyper.sigma[i];
    // 1 - lambda m: fraction of signal retained by each ridge fit.
    let keep: Vec<f64> = summaries.iter().map(|s| 1.0 - s.lambda * s.m).collect();

    let linear = DVector::from_fn(k, |i, _| hyper.rho[(i, target)] * scale(i) * scale(target) * keep[i]);

    let mut matrix = DMatrix::zeros(k, k);
    for i in 0..k {
        let s = &summaries[i];
        let signal = 1.0 - 2.0 * s.lambda * s.m + s.lambda * s.lambda * s.m_prime;
        let noise = s.gamma * (s.m - s.lambda * s.m_prime);
        matrix[(i, i)] = scale(i) * scale(i) * signal + hyper.sigma2(i) * noise;
        for j in 0..i {
            let t = &summaries[j];
            let e = cross_term_e(s, t, select_cross_mode(s, t, cov))?;
            let a = hyper.rho[(i, j)]
                * scale(i)
                * scale(j)
                * (1.0 - s.lambda * s.m - t.lambda * t.m + s.lambda * t.lambda * e);
            matrix[(i, j)] = a;
            matrix[(j, i)] = a;
        }
    }
    let base = hyper.alpha2(target) * hyper.sigma2(target);
    QuadraticRiskSystem::new(matrix, linear, base)
}
