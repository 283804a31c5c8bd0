//! Transfer-learning ridge regression with correlated random coefficients.
//!
//! The target coefficients are estimated as a weighted sum of per-study ridge
//! estimators. Weights minimise either the estimation risk or the prediction
//! risk, in finite samples (given the true coefficients) or in the
//! proportional limit `p / n_k -> gamma_k`, where the risks are expressed
//! through Stieltjes transforms of the sample covariance spectra.
//!
//! Layout:
//! - [`spectral`]: Stieltjes/companion transforms and the cross-study
//!   resolvent trace limits.
//! - [`ridge`]: study data, sample covariance, ridge fits and aggregation.
//! - [`weights`]: quadratic risk systems for estimation and prediction, the
//!   optimal-weight solve and the equal-parameter closed forms.
//! - [`sim`]: synthetic multi-study data and the Monte Carlo experiments.

// `!(x > 0.0)` is used on purpose so that NaN fails the positivity checks.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod linalg;
pub mod ridge;
pub mod sim;
pub mod spectral;
pub mod weights;

pub use error::{Error, Result};
pub use ridge::{aggregate, ridge_estimate, sample_covariance, CoefficientSet, StudyData, StudyDecomposition};
pub use spectral::{
    cross_term_e, cross_term_p, mp_identity_stieltjes, population_summary, spectral_summary, CrossTermMode, SpectralSummary,
};
pub use weights::{
    solve_optimal_weights, CovarianceAssumption, HyperParams, Objective, PredictionForm, PredictionSystem,
    QuadraticRiskSystem, WeightSolution,
};
