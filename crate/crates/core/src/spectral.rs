//! Stieltjes transforms of sample covariance spectra evaluated on the negative
//! real axis, and the limits of the cross-study resolvent traces
//!
//! ```text
//! E_kk' = tr{(S_k + l_k I)^-1 (S_k' + l_k' I)^-1} / p
//! P_kk' = tr{Sigma (S_k + l_k I)^-1 (S_k' + l_k' I)^-1} / p
//! ```
//!
//! All quantities are evaluated at `z = -lambda`. `m` is the Stieltjes
//! transform of the `p x p` spectrum, `v` the companion transform of the
//! `n x n` Gram spectrum, primes denote derivatives in `z`.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// Relative gap below which the general cross-term formula is refused.
pub const DEFAULT_SEPARATION_TOL: f64 = 1e-6;

/// Relative tolerance under which two `(gamma, lambda)` pairs count as equal.
pub const EQUAL_DESIGN_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpectralSummary {
    pub lambda: f64,
    pub gamma: f64,
    pub m: f64,
    pub m_prime: f64,
    pub v: f64,
    pub v_prime: f64,
}

impl SpectralSummary {
    /// Builds a summary from `m(-lambda)` and `m'(-lambda)`, deriving the
    /// companion transform through `gamma (m + 1/z) = v + 1/z`.
    pub fn from_stieltjes(lambda: f64, gamma: f64, m: f64, m_prime: f64) -> Result<Self> {
        check_positive("lambda", lambda)?;
        check_positive("gamma", gamma)?;
        if !(m.is_finite() && m_prime.is_finite()) {
            return Err(invalid("non-finite Stieltjes transform"));
        }
        let v = gamma * m - (gamma - 1.0) / lambda;
        let v_prime = gamma * m_prime + (1.0 - gamma) / (lambda * lambda);
        Ok(Self { lambda, gamma, m, m_prime, v, v_prime })
    }

    /// `lambda * v`, the effective scale of the deterministic equivalent
    /// `(S + lambda I)^-1 ~ (lambda v Sigma + lambda I)^-1`.
    pub fn effective_scale(&self) -> f64 {
        self.lambda * self.v
    }

    /// Limit of `tr{Sigma (S + lambda I)^-1} / p` for a covariance with unit
    /// diagonal.
    pub fn sigma_resolvent_trace(&self) -> f64 {
        (1.0 / self.effective_scale() - 1.0) / self.gamma
    }

    /// Limit of `tr{Sigma (S + lambda I)^-2} / p` for a covariance with unit
    /// diagonal.
    pub fn sigma_resolvent_sq_trace(&self) -> f64 {
        let lv = self.effective_scale();
        (self.v - self.lambda * self.v_prime) / (self.gamma * lv * lv)
    }
}

/// Summary of an empirical spectrum: `m = mean 1/(l_i + lambda)` and
/// `m' = mean 1/(l_i + lambda)^2`.
pub fn spectral_summary(eigenvalues: &[f64], lambda: f64, gamma: f64) -> Result<SpectralSummary> {
    check_positive("lambda", lambda)?;
    check_positive("gamma", gamma)?;
    if eigenvalues.is_empty() {
        return Err(invalid("empty eigenvalue list"));
    }
    let mut m = 0.0;
    let mut m_prime = 0.0;
    for &ev in eigenvalues {
        if !(ev >= 0.0) {
            return Err(invalid(format!("eigenvalue {ev} is negative or NaN")));
        }
        let r = 1.0 / (ev + lambda);
        m += r;
        m_prime += r * r;
    }
    let p = eigenvalues.len() as f64;
    SpectralSummary::from_stieltjes(lambda, gamma, m / p, m_prime / p)
}

/// Marchenko-Pastur Stieltjes transform for identity population covariance,
/// `m(-lambda)` and its derivative `m'(-lambda)`.
///
/// `m` solves `gamma lambda m^2 + (1 - gamma + lambda) m - 1 = 0`; implicit
/// differentiation gives `m' = m (1 + gamma m) / sqrt(D)` with `D` the
/// discriminant.
pub fn mp_identity_stieltjes(gamma: f64, lambda: f64) -> Result<(f64, f64)> {
    check_positive("gamma", gamma)?;
    check_positive("lambda", lambda)?;
    let b = 1.0 - gamma + lambda;
    let disc = b * b + 4.0 * gamma * lambda;
    let root = disc.sqrt();
    // Rationalised branch avoids cancellation when b > 0.
    let m = if b > 0.0 { 2.0 / (b + root) } else { (root - b) / (2.0 * gamma * lambda) };
    let m_prime = m * (1.0 + gamma * m) / root;
    Ok((m, m_prime))
}

pub fn mp_identity_summary(gamma: f64, lambda: f64) -> Result<SpectralSummary> {
    let (m, m_prime) = mp_identity_stieltjes(gamma, lambda)?;
    SpectralSummary::from_stieltjes(lambda, gamma, m, m_prime)
}

/// Limiting summary for a population covariance with the given spectrum.
///
/// The companion transform solves `1/v = lambda + gamma mean(t / (1 + t v))`
/// over the population eigenvalues `t`; `v'` follows by implicit
/// differentiation and `m, m'` from the companion identity.
pub fn population_summary(population_eigenvalues: &[f64], gamma: f64, lambda: f64) -> Result<SpectralSummary> {
    check_positive("gamma", gamma)?;
    check_positive("lambda", lambda)?;
    if population_eigenvalues.is_empty() {
        return Err(invalid("empty population spectrum"));
    }
    if population_eigenvalues.iter().any(|&t| !(t >= 0.0 && t.is_finite())) {
        return Err(invalid("population eigenvalues must be non-negative and finite"));
    }
    let n = population_eigenvalues.len() as f64;
    let mean = |f: &dyn Fn(f64) -> f64| population_eigenvalues.iter().map(|&t| f(t)).sum::<f64>() / n;
    // v (lambda + gamma mean(t/(1+tv))) - 1 is increasing in v, negative at 0
    // and non-negative at 1/lambda.
    let excess = |v: f64| v * (lambda + gamma * mean(&|t| t / (1.0 + t * v))) - 1.0;
    let (mut lo, mut hi) = (0.0_f64, 1.0 / lambda);
    while hi - lo > 4.0 * f64::EPSILON * hi {
        let mid = 0.5 * (lo + hi);
        if excess(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let v = 0.5 * (lo + hi);
    let v_prime = 1.0 / (1.0 / (v * v) - gamma * mean(&|t| (t / (1.0 + t * v)).powi(2)));
    let m = (v - 1.0 / lambda) / gamma + 1.0 / lambda;
    let m_prime = (v_prime - (1.0 - gamma) / (lambda * lambda)) / gamma;
    SpectralSummary::from_stieltjes(lambda, gamma, m, m_prime)
}

/// Regime used to evaluate the cross-study trace limits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CrossTermMode {
    /// Both studies share `n` and `lambda` (hence `gamma`).
    EqualDesign,
    /// Population covariance is the identity.
    IdentityCov,
    /// General covariance, distinct effective scales.
    GeneralAnisotropic,
}

/// Limit of `tr{(S_a + l_a I)^-1 (S_b + l_b I)^-1} / p`.
pub fn cross_term_e(a: &SpectralSummary, b: &SpectralSummary, mode: CrossTermMode) -> Result<f64> {
    cross_term_e_with_tol(a, b, mode, DEFAULT_SEPARATION_TOL)
}

pub fn cross_term_e_with_tol(
    a: &SpectralSummary,
    b: &SpectralSummary,
    mode: CrossTermMode,
    separation_tol: f64,
) -> Result<f64> {
    match mode {
        CrossTermMode::IdentityCov => Ok(a.m * b.m),
        CrossTermMode::EqualDesign => {
            check_equal_design(a, b)?;
            Ok(0.5 * (equal_design_e(a) + equal_design_e(b)))
        }
        CrossTermMode::GeneralAnisotropic => {
            check_separated(a, b, separation_tol)?;
            // Partial fractions of 1/((1 + v_a t)(1 + v_b t)) integrated
            // against the population spectrum, using lambda m = int 1/(1 + v t).
            let num = a.v * a.lambda * a.m - b.v * b.lambda * b.m;
            Ok(num / (a.lambda * b.lambda * (a.v - b.v)))
        }
    }
}

/// Limit of `tr{Sigma (S_a + l_a I)^-1 (S_b + l_b I)^-1} / p`.
pub fn cross_term_p(a: &SpectralSummary, b: &SpectralSummary, mode: CrossTermMode) -> Result<f64> {
    cross_term_p_with_tol(a, b, mode, DEFAULT_SEPARATION_TOL)
}

pub fn cross_term_p_with_tol(
    a: &SpectralSummary,
    b: &SpectralSummary,
    mode: CrossTermMode,
    separation_tol: f64,
) -> Result<f64> {
    match mode {
        CrossTermMode::IdentityCov => Ok(a.m * b.m),
        CrossTermMode::EqualDesign => {
            check_equal_design(a, b)?;
            Ok(0.5 * (equal_design_p(a) + equal_design_p(b)))
        }
        CrossTermMode::GeneralAnisotropic => {
            check_separated(a, b, separation_tol)?;
            let num = a.lambda * a.m - b.lambda * b.m;
            Ok(num / (a.lambda * b.lambda * (b.v - a.v)))
        }
    }
}

/// General-covariance cross terms with the Stieltjes transform `m` written in
/// place of the companion transform `v`. Kept for diagnostics only: these
/// agree with the trace limits when `gamma = 1` (where `v = m`) and drift
/// away otherwise.
pub mod literal {
    use super::SpectralSummary;

    pub fn cross_term_e(a: &SpectralSummary, b: &SpectralSummary) -> f64 {
        let mm = a.m * b.m;
        let dm = a.m - b.m;
        (a.lambda * a.m + b.lambda * b.m + a.lambda * mm / dm - b.lambda * mm / dm) / (a.lambda * b.lambda)
    }

    pub fn cross_term_p(a: &SpectralSummary, b: &SpectralSummary) -> f64 {
        (a.lambda * a.m - b.lambda * b.m) / (a.lambda * b.lambda * (b.m - a.m))
    }
}

fn equal_design_e(s: &SpectralSummary) -> f64 {
    let (g, l, m, mp) = (s.gamma, s.lambda, s.m, s.m_prime);
    ((1.0 - g) * mp + 2.0 * g * l * m * mp - g * m * m) / equal_design_denominator(s)
}

fn equal_design_p(s: &SpectralSummary) -> f64 {
    (s.m - s.lambda * s.m_prime) / equal_design_denominator(s)
}

fn equal_design_denominator(s: &SpectralSummary) -> f64 {
    1.0 - s.gamma + s.gamma * s.lambda * s.lambda * s.m_prime
}

pub(crate) fn same_design(a: &SpectralSummary, b: &SpectralSummary) -> bool {
    rel_close(a.gamma, b.gamma, EQUAL_DESIGN_TOL) && rel_close(a.lambda, b.lambda, EQUAL_DESIGN_TOL)
}

fn check_equal_design(a: &SpectralSummary, b: &SpectralSummary) -> Result<()> {
    if same_design(a, b) {
        Ok(())
    } else {
        Err(invalid(format!(
            "equal-design cross term needs matching (gamma, lambda), got ({}, {}) and ({}, {})",
            a.gamma, a.lambda, b.gamma, b.lambda
        )))
    }
}

fn check_separated(a: &SpectralSummary, b: &SpectralSummary, tol: f64) -> Result<()> {
    let scale = a.v.abs().max(b.v.abs());
    if (a.v - b.v).abs() < tol * scale || scale == 0.0 {
        Err(Error::SingularCrossTerm { a: a.v, b: b.v })
    } else {
        Ok(())
    }
}

fn rel_close(x: f64, y: f64, tol: f64) -> bool {
    (x - y).abs() <= tol * x.abs().max(y.abs())
}

fn check_positive(name: &str, value: f64) -> Result<()> {
    if value > 0.0 && value.is_finite() {
        Ok(())
    } else {
        Err(invalid(format!("{name} must be positive and finite, got {value}")))
    }
}
