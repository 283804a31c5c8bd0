//! Monte Carlo experiment runners: theory-versus-simulation risk curves,
//! weight adaptivity and single-study/transfer risk ratios.

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{invalid, Result};
use crate::sim::{CovSpec, Generator, SimConfig};
use crate::spectral::{mp_identity_summary, population_summary, SpectralSummary};
use crate::weights::{
    asymptotic_estimation_system, asymptotic_prediction_system, common_correlation, equal_weights,
    solve_optimal_weights, CovarianceAssumption, FiniteSampleModel, HyperParams, Objective, PredictionForm,
    QuadraticRiskSystem,
};

/// Population spectrum evaluated once and reused across penalties.
enum Spectrum {
    Identity,
    Population(Vec<f64>),
}

impl Spectrum {
    fn new(cov: &CovSpec, p: usize) -> Self {
        match cov {
            CovSpec::Identity => Spectrum::Identity,
            other => Spectrum::Population(other.eigenvalues(p)),
        }
    }

    fn summaries(&self, gamma: &[f64], lambda: &[f64]) -> Result<Vec<SpectralSummary>> {
        gamma
            .iter()
            .zip(lambda)
            .map(|(&g, &l)| match self {
                Spectrum::Identity => mp_identity_summary(g, l),
                Spectrum::Population(ev) => population_summary(ev, g, l),
            })
            .collect()
    }
}

/// Limiting spectral summaries of each study under the population
/// covariance `cov` of dimension `p`.
pub fn theory_summaries(cov: &CovSpec, p: usize, gamma: &[f64], lambda: &[f64]) -> Result<Vec<SpectralSummary>> {
    Spectrum::new(cov, p).summaries(gamma, lambda)
}

/// Limiting risk system of `hyper` under `cov`.
pub fn theory_system(
    hyper: &HyperParams,
    cov: &CovSpec,
    p: usize,
    objective: Objective,
    form: PredictionForm,
) -> Result<QuadraticRiskSystem> {
    let summaries = theory_summaries(cov, p, &hyper.gamma, &hyper.lambda)?;
    limiting_system(hyper, &summaries, cov.assumption(), objective, form)
}

fn limiting_system(
    hyper: &HyperParams,
    summaries: &[SpectralSummary],
    assumption: CovarianceAssumption,
    objective: Objective,
    form: PredictionForm,
) -> Result<QuadraticRiskSystem> {
    match objective {
        Objective::Estimation => asymptotic_estimation_system(hyper, summaries, assumption),
        Objective::Prediction => Ok(asymptotic_prediction_system(hyper, summaries, assumption, form)?.system),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RiskCurveRow {
    pub lambda: f64,
    pub theory_risk: f64,
    pub emp_risk_mean: f64,
    pub emp_risk_se: f64,
    pub baseline_risk_mean: f64,
    pub objective: Objective,
}

/// Conditional risks of one replicate along the penalty grid.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReplicateCurve {
    pub index: u64,
    /// At the finite-sample optimal weights.
    pub optimal: Vec<f64>,
    /// At the weights solved from the limiting system.
    pub asymptotic: Vec<f64>,
    /// At the equal-weight baseline.
    pub baseline: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RiskCurve {
    pub objective: Objective,
    pub rows: Vec<RiskCurveRow>,
    /// Limiting optimal weights per penalty.
    pub theory_weights: Vec<Vec<f64>>,
    pub replicates: Vec<ReplicateCurve>,
}

impl RiskCurve {
    /// Penalty and mean risk of the equal-weight baseline tuned over the grid.
    pub fn best_baseline(&self) -> (f64, f64) {
        self.rows
            .iter()
            .map(|r| (r.lambda, r.baseline_risk_mean))
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .expect("risk curves are never empty")
    }

    /// Mean conditional risk at the limiting weights, per penalty.
    pub fn asymptotic_risk_mean(&self) -> Vec<f64> {
        (0..self.rows.len())
            .map(|i| self.replicates.iter().map(|r| r.asymptotic[i]).sum::<f64>() / self.replicates.len() as f64)
            .collect()
    }
}

/// Sweeps a common penalty over `lambda_grid`, comparing the limiting risk
/// with the mean exact conditional risk over `config.replicates` replicates.
pub fn run_risk_curve_experiment(
    config: &SimConfig,
    lambda_grid: &[f64],
    objective: Objective,
    form: PredictionForm,
) -> Result<RiskCurve> {
    if lambda_grid.is_empty() {
        return Err(invalid("empty penalty grid"));
    }
    if lambda_grid.iter().any(|&l| !(l > 0.0 && l.is_finite())) {
        return Err(invalid("penalties must be positive"));
    }
    let k = config.k();
    let spectrum = Spectrum::new(&config.cov, config.p);
    let assumption = config.cov.assumption();
    let mut theory_risk = Vec::with_capacity(lambda_grid.len());
    let mut theory_weights = Vec::with_capacity(lambda_grid.len());
    for &l in lambda_grid {
        let hyper = config.hyper.with_lambda(vec![l; k])?;
        let summaries = spectrum.summaries(&hyper.gamma, &hyper.lambda)?;
        let sol = solve_optimal_weights(&limiting_system(&hyper, &summaries, assumption, objective, form)?)?;
        theory_risk.push(sol.risk);
        theory_weights.push(sol.weights);
    }

    let generator = Generator::new(config)?;
    let population = (objective == Objective::Prediction).then(|| config.cov.matrix(config.p));
    let baseline = equal_weights(k);
    let replicates = (0..config.replicates as u64)
        .into_par_iter()
        .map(|index| {
            let data = generator.generate(index)?;
            let mut model = FiniteSampleModel::new(&data.studies, &data.betas)?;
            if let Some(cov) = &population {
                model = model.with_population_covariance(cov)?;
            }
            let mut curve = ReplicateCurve {
                index,
                optimal: Vec::with_capacity(lambda_grid.len()),
                asymptotic: Vec::with_capacity(lambda_grid.len()),
                baseline: Vec::with_capacity(lambda_grid.len()),
            };
            for (i, &l) in lambda_grid.iter().enumerate() {
                let lambda = vec![l; k];
                let system = match objective {
                    Objective::Estimation => model.estimation_system(&config.hyper.sigma, &lambda)?,
                    Objective::Prediction => model.prediction_system(&config.hyper.sigma, &lambda)?.system,
                };
                let sol = solve_optimal_weights(&system)?;
                curve.optimal.push(system.risk(&sol.weights)?);
                curve.asymptotic.push(system.risk(&theory_weights[i])?);
                curve.baseline.push(system.risk(&baseline)?);
            }
            Ok(curve)
        })
        .collect::<Result<Vec<_>>>()?;

    let r = replicates.len() as f64;
    let rows = lambda_grid
        .iter()
        .enumerate()
        .map(|(i, &lambda)| {
            let mean = replicates.iter().map(|c| c.optimal[i]).sum::<f64>() / r;
            let var = if replicates.len() > 1 {
                replicates.iter().map(|c| (c.optimal[i] - mean).powi(2)).sum::<f64>() / (r - 1.0)
            } else {
                0.0
            };
            RiskCurveRow {
                lambda,
                theory_risk: theory_risk[i],
                emp_risk_mean: mean,
                emp_risk_se: (var / r).sqrt(),
                baseline_risk_mean: replicates.iter().map(|c| c.baseline[i]).sum::<f64>() / r,
                objective,
            }
        })
        .collect();
    Ok(RiskCurve {
        objective,
        rows,
        theory_weights: theory_weights.into_iter().map(|w| w.iter().copied().collect()).collect(),
        replicates,
    })
}

/// Equal-parameter identity-covariance setting of the adaptivity study.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AdaptivitySettings {
    pub k: usize,
    pub gamma: f64,
    pub alpha2: f64,
    pub sigma2: f64,
    pub objective: Objective,
}

impl Default for AdaptivitySettings {
    fn default() -> Self {
        Self { k: 6, gamma: 1.0, alpha2: 1.0, sigma2: 1.0, objective: Objective::Estimation }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum AdaptivityScenario {
    /// One row per common correlation.
    Common(Vec<f64>),
    /// Source-to-target correlations `rho_kK`, one per source; sources are
    /// linked through a single factor, `rho_kk' = rho_kK rho_k'K`.
    Heterogeneous(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AdaptivityRow {
    /// Correlation of each source with the target.
    pub rho_to_target: Vec<f64>,
    pub weights: Vec<f64>,
    pub risk: f64,
}

/// Limiting optimal weights as the correlation structure varies, with
/// `lambda = gamma / alpha^2`.
pub fn run_weight_adaptivity_experiment(
    settings: &AdaptivitySettings,
    scenario: &AdaptivityScenario,
) -> Result<Vec<AdaptivityRow>> {
    let k = settings.k;
    if k < 2 {
        return Err(invalid("the adaptivity study needs at least one source"));
    }
    let matrices: Vec<DMatrix<f64>> = match scenario {
        AdaptivityScenario::Common(grid) => grid.iter().map(|&r| common_correlation(k, r)).collect(),
        AdaptivityScenario::Heterogeneous(loadings) => {
            if loadings.len() != k - 1 {
                return Err(invalid(format!("{} source correlations for {} sources", loadings.len(), k - 1)));
            }
            let mut u = loadings.clone();
            u.push(1.0);
            vec![DMatrix::from_fn(k, k, |i, j| if i == j { 1.0 } else { u[i] * u[j] })]
        }
    };
    let lambda = settings.gamma / settings.alpha2;
    let summary = mp_identity_summary(settings.gamma, lambda)?;
    matrices
        .into_iter()
        .map(|rho| {
            let rho_to_target = (0..k - 1).map(|i| rho[(i, k - 1)]).collect();
            let hyper = HyperParams::new(
                vec![settings.alpha2.sqrt(); k],
                vec![settings.sigma2.sqrt(); k],
                rho,
                vec![settings.gamma; k],
                vec![lambda; k],
            )?;
            let system = limiting_system(
                &hyper,
                &vec![summary; k],
                CovarianceAssumption::Identity,
                settings.objective,
                PredictionForm::Corrected,
            )?;
            let sol = solve_optimal_weights(&system)?;
            Ok(AdaptivityRow { rho_to_target, weights: sol.weights.iter().copied().collect(), risk: sol.risk })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RiskRatioRow {
    pub gamma: f64,
    pub rho: f64,
    pub alpha2: f64,
    pub single_risk: f64,
    pub trans_risk: f64,
    /// `single_risk / trans_risk`.
    pub ratio: f64,
}

/// Ratio of the single-study limiting risk to the `k`-study transfer risk
/// over a grid, in the identity-covariance equal-parameter regime with unit
/// noise and `lambda = gamma / alpha^2`.
pub fn run_risk_ratio_experiment(
    gamma_grid: &[f64],
    rho_grid: &[f64],
    alpha2_grid: &[f64],
    k: usize,
    objective: Objective,
) -> Result<Vec<RiskRatioRow>> {
    let solve = |k: usize, rho: f64, gamma: f64, alpha2: f64| -> Result<f64> {
        let lambda = gamma / alpha2;
        let hyper = HyperParams::equal(k, alpha2, 1.0, rho, gamma, lambda)?;
        let summaries = vec![mp_identity_summary(gamma, lambda)?; k];
        let system =
            limiting_system(&hyper, &summaries, CovarianceAssumption::Identity, objective, PredictionForm::Corrected)?;
        Ok(solve_optimal_weights(&system)?.risk)
    };
    let mut rows = Vec::with_capacity(gamma_grid.len() * rho_grid.len() * alpha2_grid.len());
    for &alpha2 in alpha2_grid {
        for &gamma in gamma_grid {
            let single_risk = solve(1, 0.0, gamma, alpha2)?;
            for &rho in rho_grid {
                let trans_risk = solve(k, rho, gamma, alpha2)?;
                rows.push(RiskRatioRow { gamma, rho, alpha2, single_risk, trans_risk, ratio: single_risk / trans_risk });
            }
        }
    }
    Ok(rows)
}

