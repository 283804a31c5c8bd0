//! Prediction-risk systems: `E (y_new - x_new^T sum_k W_k beta_hat_k)^2` for
//! a fresh observation from the target population.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::ridge::StudyData;
use crate::spectral::{cross_term_p, SpectralSummary};
use crate::weights::{
    check_summaries, select_cross_mode, CovarianceAssumption, FiniteSampleModel, HyperParams, PredictionForm,
    PredictionSystem, QuadraticRiskSystem,
};

/// Finite-sample system given the population covariance `sigma_pop`:
/// `D = B^T Sigma beta_K`, `C = B^T Sigma B`,
/// `F_kk = sigma_k^2 tr{(S_k + l_k)^-1 S_k (S_k + l_k)^-1 Sigma} / n_k`.
pub fn finite_sample_prediction_system(
    studies: &[StudyData],
    true_betas: &DMatrix<f64>,
    sigma_pop: &DMatrix<f64>,
    sigma: &[f64],
    lambda: &[f64],
) -> Result<PredictionSystem> {
    FiniteSampleModel::new(studies, true_betas)?
        .with_population_covariance(sigma_pop)?
        .prediction_system(sigma, lambda)
}

/// Limiting system for predictors scaled to `Sigma_ii = 1`. Refuses a
/// [`CovarianceAssumption::General`] covariance, since the limits rely on
/// the unit diagonal.
pub fn asymptotic_prediction_system(
    hyper: &HyperParams,
    summaries: &[SpectralSummary],
    cov: CovarianceAssumption,
    form: PredictionForm,
) -> Result<PredictionSystem> {
    check_summaries(hyper, summaries)?;
    if cov == CovarianceAssumption::General {
        return Err(Error::NotStandardized);
    }
    let k = hyper.k();
    let target = k - 1;
    let scale = |i: usize| hyper.alpha[i] * hyper.sigma[i];
    let t: Vec<f64> = summaries.iter().map(SpectralSummary::sigma_resolvent_trace).collect();
    let s: Vec<f64> = summaries.iter().map(SpectralSummary::sigma_resolvent_sq_trace).collect();
    // The literal variant keeps only 1/(gamma lambda v) in the signal terms.
    let t_signal: Vec<f64> = match form {
        PredictionForm::Corrected => t.clone(),
        PredictionForm::Literal => summaries.iter().map(|x| 1.0 / (x.gamma * x.effective_scale())).collect(),
    };
    let keep: Vec<f64> = summaries.iter().zip(&t_signal).map(|(x, &ti)| 1.0 - x.lambda * ti).collect();

    let linear = DVector::from_fn(k, |i, _| hyper.rho[(i, target)] * scale(i) * scale(target) * keep[i]);
    let mut matrix = DMatrix::zeros(k, k);
    for i in 0..k {
        let x = &summaries[i];
        let signal = 1.0 - 2.0 * x.lambda * t_signal[i] + x.lambda * x.lambda * s[i];
        let noise = x.gamma * (t[i] - x.lambda * s[i]);
        matrix[(i, i)] = scale(i) * scale(i) * signal + hyper.sigma2(i) * noise;
        for j in 0..i {
            let y = &summaries[j];
            let p = cross_term_p(x, y, select_cross_mode(x, y, cov))?;
            let c = hyper.rho[(i, j)] * scale(i) * scale(j) * (keep[i] + keep[j] - 1.0 + x.lambda * y.lambda * p);
            matrix[(i, j)] = c;
            matrix[(j, i)] = c;
        }
    }
    let noise_floor = hyper.sigma2(target);
    let base = noise_floor + hyper.alpha2(target) * hyper.sigma2(target);
    PredictionSystem::new(QuadraticRiskSystem::new(matrix, linear, base)?, noise_floor)
}
