//! Closed forms for the equal-parameter, identity-covariance regime: common
//! `rho`, `alpha`, `gamma`, unit noise and `lambda = gamma / alpha^2`.
//!
//! Writing `q = 1 - lambda m(-lambda)`, the limiting system is exchangeable
//! with diagonal `alpha^2 q`, off-diagonal `rho alpha^2 q^2` and linear term
//! `rho alpha^2 q` (target entry `alpha^2 q`), which inverts explicitly.

use serde::Serialize;

use crate::error::{invalid, Error, Result};
use crate::spectral::{mp_identity_stieltjes, SpectralSummary};
use crate::weights::HyperParams;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ClosedFormWeights {
    /// Weight on the target study.
    pub target: f64,
    /// Weight on each source study.
    pub source: f64,
    /// `target / source`.
    pub ratio: f64,
    /// Derivative of the ratio with respect to `rho`.
    pub ratio_derivative: f64,
}

fn check_regime(rho: f64, k: usize, gamma: f64, alpha2: f64) -> Result<()> {
    if k == 0 {
        return Err(invalid("need at least one study"));
    }
    if !(gamma > 0.0 && gamma.is_finite()) || !(alpha2 > 0.0 && alpha2.is_finite()) {
        return Err(invalid("gamma and alpha^2 must be positive"));
    }
    // Exchangeable correlation is PSD for rho in [-1/(K-1), 1].
    let lower = if k > 1 { -1.0 / (k as f64 - 1.0) } else { -1.0 };
    if !(rho >= lower && rho <= 1.0) {
        return Err(Error::OutsideRegime(format!("common correlation {rho} is not admissible for K = {k}")));
    }
    Ok(())
}

/// `q = 1 - lambda m(-lambda)` at `lambda = gamma / alpha^2`.
fn retained(gamma: f64, alpha2: f64) -> Result<f64> {
    let lambda = gamma / alpha2;
    let (m, _) = mp_identity_stieltjes(gamma, lambda)?;
    Ok(1.0 - lambda * m)
}

/// Optimal target and source weights. `rho = 0` is rejected because the
/// ratio is undefined there; the weight vector is then `e_K`.
pub fn closed_form_identity_weights(rho: f64, k: usize, gamma: f64, alpha2: f64) -> Result<ClosedFormWeights> {
    check_regime(rho, k, gamma, alpha2)?;
    if rho == 0.0 {
        return Err(invalid("the weight ratio is undefined at rho = 0"));
    }
    let q = retained(gamma, alpha2)?;
    let kf = k as f64;
    let d = (1.0 - rho * q) * (1.0 - rho * q + kf * rho * q);
    let source = rho * (1.0 - q) / d;
    let target = (1.0 - rho * q + (kf - 1.0) * rho * (1.0 - rho) * q) / d;
    let ratio = (1.0 - rho * q + (kf - 1.0) * rho * (1.0 - rho) * q) / (rho * (1.0 - q));
    let ratio_derivative = -(1.0 / (rho * rho) + (kf - 1.0) * q) / (1.0 - q);
    Ok(ClosedFormWeights { target, source, ratio, ratio_derivative })
}

/// Optimal limiting estimation risk with unit noise.
pub fn closed_form_identity_risk(rho: f64, k: usize, gamma: f64, alpha2: f64) -> Result<f64> {
    check_regime(rho, k, gamma, alpha2)?;
    let q = retained(gamma, alpha2)?;
    let kf = k as f64;
    let lead = (kf - 1.0) * rho * rho + 1.0;
    let spread = (kf - 1.0) * rho + 1.0;
    let inner = lead - rho * q * spread * spread / (1.0 - rho * q + kf * rho * q);
    Ok(alpha2 - alpha2 * q / (1.0 - rho * q) * inner)
}

/// Upper bound on the optimal estimation risk obtained by bounding the
/// off-diagonal mass of the system matrix by `a* = max_i sum_{k != i} |rho_ik|`.
/// Requires common `alpha`, `sigma`, `gamma` and `lambda`; `summary` must be
/// evaluated at that `(gamma, lambda)`.
pub fn estimation_risk_upper_bound(hyper: &HyperParams, summary: &SpectralSummary) -> Result<f64> {
    let k = hyper.k();
    let common = |v: &[f64]| v.iter().all(|&x| (x - v[0]).abs() <= 1e-12 * v[0].abs().max(1.0));
    if !common(&hyper.alpha) || !common(&hyper.sigma) || !common(&hyper.gamma) || !common(&hyper.lambda) {
        return Err(Error::OutsideRegime("the bound needs common alpha, sigma, gamma and lambda".into()));
    }
    let near = |a: f64, b: f64| (a - b).abs() <= 1e-9 * a.abs().max(b.abs());
    if !near(summary.gamma, hyper.gamma[0]) || !near(summary.lambda, hyper.lambda[0]) {
        return Err(Error::OutsideRegime("spectral summary does not match (gamma, lambda)".into()));
    }
    let alpha2 = hyper.alpha2(0);
    let (lambda, gamma, m, mp) = (summary.lambda, summary.gamma, summary.m, summary.m_prime);
    let q = 1.0 - lambda * m;
    let c1 = alpha2 * q * q;
    let c2 = lambda * lambda * alpha2 * (mp - m * m) + gamma * (m - lambda * mp);
    let a_star = (0..k)
        .map(|i| (0..k).filter(|&j| j != i).map(|j| hyper.rho[(i, j)].abs()).sum::<f64>())
        .fold(0.0, f64::max);
    let target = k - 1;
    let signal: f64 = (0..target).map(|i| hyper.rho[(i, target)].powi(2)).sum::<f64>() + 1.0;
    let bound = alpha2 - alpha2 * alpha2 / c1 * signal * q * q / (1.0 + a_star + c2 / c1);
    Ok(hyper.sigma2(0) * bound)
}

/// `alpha^2 = h^2 / (1 - h^2)`.
pub fn alpha2_from_heritability(h2: f64) -> Result<f64> {
    if !(0.0..1.0).contains(&h2) {
        return Err(invalid(format!("heritability {h2} must lie in [0, 1)")));
    }
    Ok(h2 / (1.0 - h2))
}

/// `h^2 = alpha^2 / (1 + alpha^2)`.
pub fn heritability_from_alpha2(alpha2: f64) -> Result<f64> {
    if !(alpha2 >= 0.0 && alpha2.is_finite()) {
        return Err(invalid(format!("alpha^2 {alpha2} must be non-negative")));
    }
    Ok(alpha2 / (1.0 + alpha2))
}
