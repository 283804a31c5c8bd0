//! Optimal aggregation weights.
//!
//! Both objectives reduce to a quadratic risk in the weight vector `W`,
//!
//! ```text
//! risk(W) = base - 2 linear^T W + W^T matrix W,
//! ```
//!
//! minimised by `matrix W = linear` with optimum `base - linear^T W`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, mismatch, Error, Result};
use crate::linalg::{is_symmetric, sym_eigenvalues};
use crate::spectral::{same_design, CrossTermMode, SpectralSummary};

pub mod closed_form;
pub mod finite;
pub mod estimation;
pub mod prediction;

pub use closed_form::{
    alpha2_from_heritability, closed_form_identity_risk, closed_form_identity_weights,
    estimation_risk_upper_bound, heritability_from_alpha2, ClosedFormWeights,
};
pub use finite::FiniteSampleModel;
pub use estimation::{asymptotic_estimation_system, finite_sample_estimation_system};
pub use prediction::{asymptotic_prediction_system, finite_sample_prediction_system};

/// Relative floor on the smallest eigenvalue before the solve adds a ridge.
pub const REGULARIZATION_FLOOR: f64 = 1e-10;

/// Model hyperparameters for `K` studies; the last study is the target.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HyperParams {
    /// Signal-to-noise amplitudes `alpha_k` (so `alpha_k^2` is the SNR).
    pub alpha: Vec<f64>,
    /// Noise standard deviations `sigma_k`.
    pub sigma: Vec<f64>,
    /// Coefficient correlations, symmetric with unit diagonal.
    pub rho: DMatrix<f64>,
    pub gamma: Vec<f64>,
    pub lambda: Vec<f64>,
}

impl HyperParams {
    pub fn new(
        alpha: Vec<f64>,
        sigma: Vec<f64>,
        rho: DMatrix<f64>,
        gamma: Vec<f64>,
        lambda: Vec<f64>,
    ) -> Result<Self> {
        let k = alpha.len();
        if k == 0 {
            return Err(invalid("at least one study is required"));
        }
        if sigma.len() != k || gamma.len() != k || lambda.len() != k || rho.nrows() != k || rho.ncols() != k {
            return Err(mismatch(format!(
                "hyperparameter lengths disagree: alpha {k}, sigma {}, gamma {}, lambda {}, rho {}x{}",
                sigma.len(),
                gamma.len(),
                lambda.len(),
                rho.nrows(),
                rho.ncols()
            )));
        }
        for (name, vals) in [("alpha", &alpha), ("sigma", &sigma), ("gamma", &gamma), ("lambda", &lambda)] {
            if let Some(bad) = vals.iter().find(|&&v| !(v > 0.0 && v.is_finite())) {
                return Err(invalid(format!("{name} entries must be positive, got {bad}")));
            }
        }
        validate_correlation(&rho)?;
        Ok(Self { alpha, sigma, rho, gamma, lambda })
    }

    /// Equal-parameter configuration with a common off-diagonal correlation.
    pub fn equal(k: usize, alpha2: f64, sigma2: f64, rho: f64, gamma: f64, lambda: f64) -> Result<Self> {
        Self::new(
            vec![alpha2.sqrt(); k],
            vec![sigma2.sqrt(); k],
            common_correlation(k, rho),
            vec![gamma; k],
            vec![lambda; k],
        )
    }

    pub fn k(&self) -> usize {
        self.alpha.len()
    }

    pub fn alpha2(&self, k: usize) -> f64 {
        self.alpha[k] * self.alpha[k]
    }

    pub fn sigma2(&self, k: usize) -> f64 {
        self.sigma[k] * self.sigma[k]
    }

    /// Per-study `gamma_k / alpha_k^2`, the optimal penalty of a single
    /// study's ridge under this model.
    pub fn optimal_naive_lambda(&self) -> Vec<f64> {
        (0..self.k()).map(|k| self.gamma[k] / self.alpha2(k)).collect()
    }

    pub fn with_lambda(&self, lambda: Vec<f64>) -> Result<Self> {
        Self::new(self.alpha.clone(), self.sigma.clone(), self.rho.clone(), self.gamma.clone(), lambda)
    }

    /// Covariance of `sqrt(p) beta` across studies:
    /// `rho_kk' alpha_k alpha_k' sigma_k sigma_k'`.
    pub fn coefficient_covariance(&self) -> DMatrix<f64> {
        let k = self.k();
        DMatrix::from_fn(k, k, |i, j| {
            self.rho[(i, j)] * self.alpha[i] * self.alpha[j] * self.sigma[i] * self.sigma[j]
        })
    }
}

/// `K x K` matrix with unit diagonal and `rho` elsewhere.
pub fn common_correlation(k: usize, rho: f64) -> DMatrix<f64> {
    DMatrix::from_fn(k, k, |i, j| if i == j { 1.0 } else { rho })
}

fn validate_correlation(rho: &DMatrix<f64>) -> Result<()> {
    if !is_symmetric(rho, 1e-12) {
        return Err(invalid("rho must be symmetric"));
    }
    for i in 0..rho.nrows() {
        if (rho[(i, i)] - 1.0).abs() > 1e-12 {
            return Err(invalid("rho must have a unit diagonal"));
        }
    }
    if rho.iter().any(|&r| !(-1.0..=1.0).contains(&r)) {
        return Err(invalid("rho entries must lie in [-1, 1]"));
    }
    let min = sym_eigenvalues(rho)[0];
    if min < -1e-10 {
        return Err(Error::NotPositiveSemidefinite(min));
    }
    Ok(())
}

/// What the caller asserts about the population covariance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum CovarianceAssumption {
    /// `Sigma = I`.
    Identity,
    /// General `Sigma` with predictors scaled to `Sigma_ii = 1`.
    UnitDiagonal,
    /// No assumption beyond the random-matrix conditions.
    #[default]
    General,
}

/// Chooses the cross-term regime for a pair of studies: identity when
/// asserted, equal design when `(gamma, lambda)` agree, general otherwise.
pub fn select_cross_mode(a: &SpectralSummary, b: &SpectralSummary, cov: CovarianceAssumption) -> CrossTermMode {
    if cov == CovarianceAssumption::Identity {
        CrossTermMode::IdentityCov
    } else if same_design(a, b) {
        CrossTermMode::EqualDesign
    } else {
        CrossTermMode::GeneralAnisotropic
    }
}

/// Which algebraic form of the limiting prediction quantities to use.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum PredictionForm {
    /// `tr{Sigma R}/p -> (1/gamma)(1/(lambda v) - 1)` in every term.
    #[default]
    Corrected,
    /// The cross-study and signal terms drop the `- 1`; diagnostics only.
    Literal,
}

/// Which risk the weights minimise.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Objective {
    #[default]
    Estimation,
    Prediction,
}

impl Objective {
    pub fn as_str(self) -> &'static str {
        match self {
            Objective::Estimation => "estimation",
            Objective::Prediction => "prediction",
        }
    }
}

impl std::fmt::Display for Objective {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Objective {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "estimation" => Ok(Objective::Estimation),
            "prediction" => Ok(Objective::Prediction),
            other => Err(invalid(format!("unknown objective '{other}' (expected estimation or prediction)"))),
        }
    }
}

/// Quadratic risk `base - 2 linear^T W + W^T matrix W`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticRiskSystem {
    pub matrix: DMatrix<f64>,
    pub linear: DVector<f64>,
    pub base: f64,
}

impl QuadraticRiskSystem {
    pub fn new(matrix: DMatrix<f64>, linear: DVector<f64>, base: f64) -> Result<Self> {
        if matrix.nrows() != matrix.ncols() || matrix.nrows() != linear.len() {
            return Err(mismatch(format!(
                "system matrix {}x{} with linear term of length {}",
                matrix.nrows(),
                matrix.ncols(),
                linear.len()
            )));
        }
        if !is_symmetric(&matrix, 1e-9) {
            return Err(invalid("system matrix must be symmetric"));
        }
        Ok(Self { matrix, linear, base })
    }

    pub fn k(&self) -> usize {
        self.linear.len()
    }

    /// Risk at an arbitrary weight vector.
    pub fn risk(&self, w: &DVector<f64>) -> Result<f64> {
        if w.len() != self.k() {
            return Err(mismatch(format!("{} weights for a {}-study system", w.len(), self.k())));
        }
        Ok(self.base - 2.0 * self.linear.dot(w) + w.dot(&(&self.matrix * w)))
    }
}

/// Prediction risk system; `noise_floor` is the irreducible `sigma_K^2`.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionSystem {
    pub system: QuadraticRiskSystem,
    pub noise_floor: f64,
}

impl PredictionSystem {
    pub fn new(system: QuadraticRiskSystem, noise_floor: f64) -> Result<Self> {
        if !(noise_floor >= 0.0) || system.base < noise_floor {
            return Err(invalid(format!(
                "prediction base {} must be at least the noise floor {noise_floor}",
                system.base
            )));
        }
        Ok(Self { system, noise_floor })
    }

    pub fn solve(&self) -> Result<WeightSolution> {
        solve_optimal_weights(&self.system)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WeightSolution {
    pub weights: DVector<f64>,
    pub risk: f64,
    /// Set when the solve had to add a small ridge to the system matrix.
    pub regularized: bool,
}

/// Minimises the quadratic risk. If the smallest eigenvalue of the matrix is
/// below `1e-10 * trace / K`, that amount is added to the diagonal first and
/// the solution is flagged.
pub fn solve_optimal_weights(system: &QuadraticRiskSystem) -> Result<WeightSolution> {
    let k = system.k();
    let sym = (&system.matrix + system.matrix.transpose()) * 0.5;
    if !sym.iter().all(|v| v.is_finite()) || !system.linear.iter().all(|v| v.is_finite()) {
        return Err(Error::Singular("system contains non-finite entries".into()));
    }
    let floor = REGULARIZATION_FLOOR * sym.trace() / k as f64;
    if !(floor > 0.0) {
        return Err(Error::Singular(format!("system matrix has non-positive trace {}", sym.trace())));
    }
    let min = sym_eigenvalues(&sym)[0];
    let mut matrix = sym;
    let regularized = min < floor;
    if regularized {
        if min < -floor * 1e6 {
            return Err(Error::Singular(format!("system matrix is indefinite (eigenvalue {min:e})")));
        }
        for i in 0..k {
            matrix[(i, i)] += floor;
        }
    }
    let chol = matrix
        .cholesky()
        .ok_or_else(|| Error::Singular("system matrix is not positive definite".into()))?;
    let weights = chol.solve(&system.linear);
    let risk = system.base - system.linear.dot(&weights);
    Ok(WeightSolution { weights, risk, regularized })
}

/// Target weight 1, every source weight `1/K`.
pub fn equal_weights(k: usize) -> DVector<f64> {
    DVector::from_fn(k, |i, _| if i + 1 == k { 1.0 } else { 1.0 / k as f64 })
}

pub(crate) fn check_summaries(hyper: &HyperParams, summaries: &[SpectralSummary]) -> Result<()> {
    if summaries.len() != hyper.k() {
        return Err(mismatch(format!("{} spectral summaries for {} studies", summaries.len(), hyper.k())));
    }
    Ok(())
}
