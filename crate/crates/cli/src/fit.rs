//! Fitting transfer ridge on observed studies: standardisation, univariate
//! screening, cross-validated penalties, the weighted fit and prediction.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use transridge_core::linalg::sym_eigen;
use transridge_core::weights::{
    asymptotic_estimation_system, asymptotic_prediction_system, solve_optimal_weights, QuadraticRiskSystem,
};
use transridge_core::{
    CovarianceAssumption, Error, HyperParams, Objective, PredictionForm, Result, StudyData, StudyDecomposition,
};

/// Column centring and scaling of one study, plus the response mean.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardization {
    pub x_mean: Vec<f64>,
    pub x_scale: Vec<f64>,
    pub y_mean: f64,
}

impl Standardization {
    pub fn identity(p: usize) -> Self {
        Self { x_mean: vec![0.0; p], x_scale: vec![1.0; p], y_mean: 0.0 }
    }

    /// Means and unit-variance scales (population convention, divisor `n`).
    /// Constant columns keep scale one and become zero after centring.
    pub fn estimate(data: &StudyData) -> Self {
        let n = data.n() as f64;
        let x_mean: Vec<f64> = data.x.column_iter().map(|c| c.sum() / n).collect();
        let x_scale = data
            .x
            .column_iter()
            .zip(&x_mean)
            .map(|(c, &m)| {
                let sd = (c.iter().map(|v| (v - m).powi(2)).sum::<f64>() / n).sqrt();
                if sd > 0.0 {
                    sd
                } else {
                    1.0
                }
            })
            .collect();
        Self { x_mean, x_scale, y_mean: data.y.mean() }
    }

    pub fn apply_x(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        DMatrix::from_fn(x.nrows(), x.ncols(), |i, j| (x[(i, j)] - self.x_mean[j]) / self.x_scale[j])
    }

    pub fn apply(&self, data: &StudyData) -> Result<StudyData> {
        StudyData::new(self.apply_x(&data.x), data.y.add_scalar(-self.y_mean), data.study_id)
    }
}

/// Standardises every study with its own statistics.
pub fn standardize_studies(studies: &[StudyData]) -> Result<(Vec<StudyData>, Vec<Standardization>)> {
    let stats: Vec<Standardization> = studies.iter().map(Standardization::estimate).collect();
    let data = studies.iter().zip(&stats).map(|(s, st)| st.apply(s)).collect::<Result<Vec<_>>>()?;
    Ok((data, stats))
}

/// Indices of the `m` predictors most correlated (in absolute value) with
/// the response of `target`, strongest first; ties go to the lower index and
/// constant columns count as uncorrelated.
pub fn screen_predictors(target: &StudyData, m: usize) -> Result<Vec<usize>> {
    if m == 0 {
        return Err(Error::InvalidArgument("screen size must be at least 1".into()));
    }
    let y = target.y.add_scalar(-target.y.mean());
    let y_norm = y.norm();
    let score: Vec<f64> = target
        .x
        .column_iter()
        .map(|c| {
            let centred = c.add_scalar(-c.mean());
            let denom = centred.norm() * y_norm;
            if denom > 0.0 {
                (centred.dot(&y) / denom).abs()
            } else {
                0.0
            }
        })
        .collect();
    let mut order: Vec<usize> = (0..score.len()).collect();
    order.sort_by(|&a, &b| score[b].total_cmp(&score[a]).then(a.cmp(&b)));
    order.truncate(m.min(score.len()));
    Ok(order)
}

pub fn select_columns(data: &StudyData, columns: &[usize]) -> Result<StudyData> {
    StudyData::new(data.x.select_columns(columns), data.y.clone(), data.study_id)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub weights: Vec<f64>,
    pub combined_beta: Vec<f64>,
    /// One coefficient vector per study.
    pub per_study_beta: Vec<Vec<f64>>,
    pub lambda_used: Vec<f64>,
    pub mode: Objective,
    /// Per study; the last entry (target) is reused at prediction time.
    pub standardization: Vec<Standardization>,
    /// Predictor columns of the input files used by the fit, in fit order.
    pub selected_columns: Vec<usize>,
    pub column_names: Vec<String>,
    /// Limiting risk of the solved weights.
    pub limiting_risk: f64,
    /// Target-only ridge at `gamma_K / alpha_K^2`, for comparison.
    pub naive_beta: Vec<f64>,
    pub naive_lambda: f64,
}

impl FitResult {
    fn target_standardization(&self) -> &Standardization {
        self.standardization.last().expect("a fit has at least one study")
    }

    fn prepare(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        let needed = self.selected_columns.iter().max().map_or(0, |m| m + 1);
        if x.ncols() < needed {
            return Err(Error::DimensionMismatch(format!("{} predictor columns, the fit needs {needed}", x.ncols())));
        }
        Ok(self.target_standardization().apply_x(&x.select_columns(&self.selected_columns)))
    }

    /// Predictions on the original scale for raw predictor rows.
    pub fn predict(&self, x: &DMatrix<f64>) -> Result<DVector<f64>> {
        self.predict_with(x, &self.combined_beta)
    }

    pub fn predict_naive(&self, x: &DMatrix<f64>) -> Result<DVector<f64>> {
        self.predict_with(x, &self.naive_beta)
    }

    fn predict_with(&self, x: &DMatrix<f64>, beta: &[f64]) -> Result<DVector<f64>> {
        let z = self.prepare(x)?;
        Ok((z * DVector::from_column_slice(beta)).add_scalar(self.target_standardization().y_mean))
    }
}

/// Hyperparameters with `gamma_k = p / n_k` taken from the data and the
/// given penalties; `alpha`, `sigma` and `rho` come from `hyper`.
fn data_hyper(decomps: &[StudyDecomposition], hyper: &HyperParams, lambda: &[f64]) -> Result<HyperParams> {
    HyperParams::new(
        hyper.alpha.clone(),
        hyper.sigma.clone(),
        hyper.rho.clone(),
        decomps.iter().map(StudyDecomposition::gamma).collect(),
        lambda.to_vec(),
    )
}

struct WeightedFit {
    weights: DVector<f64>,
    betas: DMatrix<f64>,
    combined: DVector<f64>,
    risk: f64,
}

fn fit_decomposed(
    decomps: &[StudyDecomposition],
    hyper: &HyperParams,
    mode: Objective,
    lambda: &[f64],
) -> Result<WeightedFit> {
    let hyper = data_hyper(decomps, hyper, lambda)?;
    let summaries = decomps.iter().zip(lambda).map(|(d, &l)| d.summary(l)).collect::<Result<Vec<_>>>()?;
    let system = match mode {
        Objective::Estimation => asymptotic_estimation_system(&hyper, &summaries, CovarianceAssumption::General)?,
        Objective::Prediction => {
            asymptotic_prediction_system(&hyper, &summaries, CovarianceAssumption::UnitDiagonal, PredictionForm::Corrected)?
                .system
        }
    };
    let sol = solve_optimal_weights(&nearest_psd(system))?;
    let p = decomps[0].p();
    let mut betas = DMatrix::zeros(p, decomps.len());
    for (k, (d, &l)) in decomps.iter().zip(lambda).enumerate() {
        betas.set_column(k, &d.ridge(l)?);
    }
    let combined = &betas * &sol.weights;
    Ok(WeightedFit { weights: sol.weights, betas, combined, risk: sol.risk })
}

/// Small or very unequal studies give noisy plug-in spectra, and the
/// divided-difference cross terms can then leave the system slightly
/// indefinite. Negative eigenvalues are raised to zero; the solver's own
/// floor then applies as usual.
fn nearest_psd(mut system: QuadraticRiskSystem) -> QuadraticRiskSystem {
    let sym = (&system.matrix + system.matrix.transpose()) * 0.5;
    let (values, vectors) = sym_eigen(&sym);
    if values.iter().all(|&v| v >= 0.0) {
        system.matrix = sym;
        return system;
    }
    let clipped = DMatrix::from_diagonal(&values.map(|v| v.max(0.0)));
    system.matrix = &vectors * clipped * vectors.transpose();
    system
}

fn check_studies(studies: &[StudyData], hyper: &HyperParams) -> Result<usize> {
    if studies.len() != hyper.k() {
        return Err(Error::DimensionMismatch(format!("{} studies but {} in the hyperparameters", studies.len(), hyper.k())));
    }
    let p = studies[0].p();
    if studies.iter().any(|s| s.p() != p) {
        return Err(Error::DimensionMismatch("studies have different numbers of predictors".into()));
    }
    Ok(p)
}

/// Weighted transfer ridge. The aspect ratios are taken from the data;
/// the penalties of `hyper` are replaced by `lambda`. Prediction mode needs
/// the standardisation that produced `studies`.
pub fn transfer_ridge_fit(
    studies: &[StudyData],
    hyper: &HyperParams,
    mode: Objective,
    lambda: &[f64],
    standardization: Option<Vec<Standardization>>,
) -> Result<FitResult> {
    let p = check_studies(studies, hyper)?;
    if lambda.len() != studies.len() {
        return Err(Error::DimensionMismatch(format!("{} penalties for {} studies", lambda.len(), studies.len())));
    }
    let standardization = match standardization {
        Some(s) if s.len() == studies.len() => s,
        Some(_) => return Err(Error::DimensionMismatch("one standardisation per study is required".into())),
        None if mode == Objective::Prediction => return Err(Error::NotStandardized),
        None => vec![Standardization::identity(p); studies.len()],
    };
    let decomps = studies.iter().map(StudyDecomposition::new).collect::<Result<Vec<_>>>()?;
    let fit = fit_decomposed(&decomps, hyper, mode, lambda)?;
    let target = decomps.last().expect("at least one study");
    let naive_lambda = target.gamma() / hyper.alpha2(hyper.k() - 1);
    let naive = target.ridge(naive_lambda)?;
    Ok(FitResult {
        weights: fit.weights.iter().copied().collect(),
        combined_beta: fit.combined.iter().copied().collect(),
        per_study_beta: fit.betas.column_iter().map(|c| c.iter().copied().collect()).collect(),
        lambda_used: lambda.to_vec(),
        mode,
        standardization,
        selected_columns: (0..p).collect(),
        column_names: (1..=p).map(|j| format!("x{j}")).collect(),
        limiting_risk: fit.risk,
        naive_beta: naive.iter().copied().collect(),
        naive_lambda,
    })
}

/// Chooses one common multiplier `c` for the penalties
/// `lambda_k = c gamma_k / alpha_k^2` by `folds`-fold cross-validation on
/// the target study (row `i` in fold `i mod folds`); source studies are
/// always used in full. Returns the penalties for the full data.
pub fn cross_validate_lambda(
    studies: &[StudyData],
    hyper: &HyperParams,
    mode: Objective,
    folds: usize,
    multipliers: &[f64],
) -> Result<Vec<f64>> {
    check_studies(studies, hyper)?;
    if multipliers.is_empty() {
        return Err(Error::InvalidArgument("no penalty multipliers".into()));
    }
    if multipliers.iter().any(|&m| !(m > 0.0 && m.is_finite())) {
        return Err(Error::InvalidArgument("penalty multipliers must be positive".into()));
    }
    if folds < 2 {
        return Err(Error::InvalidArgument("at least two folds are required".into()));
    }
    let k = studies.len();
    let target = &studies[k - 1];
    if target.n() < folds {
        return Err(Error::InvalidArgument(format!("{folds} folds but the target study has {} rows", target.n())));
    }
    let base: Vec<f64> = studies.iter().enumerate().map(|(i, s)| s.gamma() / hyper.alpha2(i)).collect();
    let penalties = |c: f64| base.iter().map(|b| c * b).collect::<Vec<_>>();
    if multipliers.len() == 1 {
        return Ok(penalties(multipliers[0]));
    }

    let mut decomps = studies[..k - 1].iter().map(StudyDecomposition::new).collect::<Result<Vec<_>>>()?;
    let mut errors = vec![0.0; multipliers.len()];
    for fold in 0..folds {
        let (train, held): (Vec<usize>, Vec<usize>) = (0..target.n()).partition(|i| i % folds != fold);
        let train = target.rows(&train);
        let held = target.rows(&held);
        decomps.push(StudyDecomposition::new(&train)?);
        for (c, err) in multipliers.iter().zip(errors.iter_mut()) {
            let fit = fit_decomposed(&decomps, hyper, mode, &penalties(*c))?;
            let resid = &held.y - &held.x * &fit.combined;
            *err += resid.norm_squared();
        }
        decomps.pop();
    }
    let best = errors
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1).then(a.0.cmp(&b.0)))
        .map(|(i, _)| i)
        .expect("non-empty multipliers");
    Ok(penalties(multipliers[best]))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use transridge_core::weights::common_correlation;
    use transridge_core::ridge_estimate;

    fn study(rows: usize, cols: usize, seed: usize, id: usize) -> StudyData {
        let x = DMatrix::from_fn(rows, cols, |i, j| (((i + 1) * (j + 3) * (seed + 7)) as f64 * 0.37).sin());
        let y = DVector::from_fn(rows, |i, _| x[(i, 0)] - 0.5 * x[(i, 1)] + 0.1 * ((i * seed) as f64).cos());
        StudyData::new(x, y, id).unwrap()
    }

    fn hyper(k: usize, rho: f64) -> HyperParams {
        HyperParams::new(vec![1.0; k], vec![1.0; k], common_correlation(k, rho), vec![1.0; k], vec![1.0; k]).unwrap()
    }

    #[test]
    fn screening_examples() {
        let mut s = study(30, 5, 1, 1);
        s.y = s.x.column(3).clone_owned();
        let all = screen_predictors(&s, 10).unwrap();
        assert_eq!(all.len(), 5);
        assert_eq!(all[0], 3);

        let mut dup = study(30, 4, 2, 1);
        let c = dup.x.column(1).clone_owned();
        dup.x.set_column(2, &c);
        dup.y = c;
        assert_eq!(&screen_predictors(&dup, 2).unwrap(), &[1, 2]);

        let mut constant = study(20, 3, 3, 1);
        constant.x.column_mut(0).fill(2.0);
        let order = screen_predictors(&constant, 3).unwrap();
        assert_eq!(order[2], 0);
        assert!(screen_predictors(&constant, 0).is_err());
    }

    #[test]
    fn standardization_properties() {
        let s = study(25, 3, 4, 1);
        let st = Standardization::estimate(&s);
        let z = st.apply(&s).unwrap();
        for c in z.x.column_iter() {
            assert!(c.mean().abs() < 1e-12);
            assert_relative_eq!(c.norm_squared() / 25.0, 1.0, epsilon = 1e-12);
        }
        assert!(z.y.mean().abs() < 1e-12);
    }

    #[test]
    fn single_study_is_scaled_plain_ridge() {
        let s = study(40, 6, 5, 1);
        let fit = transfer_ridge_fit(std::slice::from_ref(&s), &hyper(1, 0.0), Objective::Estimation, &[0.8], None).unwrap();
        let plain = ridge_estimate(&s, 0.8).unwrap();
        let w = fit.weights[0];
        for j in 0..6 {
            assert_relative_eq!(fit.combined_beta[j], w * plain[j], epsilon = 1e-10);
            assert_relative_eq!(fit.per_study_beta[0][j], plain[j], epsilon = 1e-10);
        }
    }

    #[test]
    fn uncorrelated_sources_leave_target_fit() {
        let studies: Vec<_> = (0..3).map(|i| study(30, 5, i + 1, i + 1)).collect();
        let (z, st) = standardize_studies(&studies).unwrap();
        let fit = transfer_ridge_fit(&z, &hyper(3, 0.0), Objective::Prediction, &[0.5, 0.5, 0.5], Some(st)).unwrap();
        assert!(fit.weights[0].abs() < 1e-12 && fit.weights[1].abs() < 1e-12);
        let target = ridge_estimate(&z[2], 0.5).unwrap();
        for j in 0..5 {
            assert_relative_eq!(fit.combined_beta[j], fit.weights[2] * target[j], epsilon = 1e-10);
        }
    }

    #[test]
    fn combined_is_weighted_sum_and_roundtrip() {
        let studies: Vec<_> = (0..3).map(|i| study(30 + 5 * i, 5, i + 1, i + 1)).collect();
        let (z, st) = standardize_studies(&studies).unwrap();
        let fit = transfer_ridge_fit(&z, &hyper(3, 0.6), Objective::Prediction, &[0.5, 0.7, 0.9], Some(st)).unwrap();
        for j in 0..5 {
            let sum: f64 = (0..3).map(|k| fit.per_study_beta[k][j] * fit.weights[k]).sum();
            assert_relative_eq!(fit.combined_beta[j], sum, epsilon = 1e-12);
        }
        let json = serde_json::to_string(&fit).unwrap();
        let back: FitResult = serde_json::from_str(&json).unwrap();
        assert_eq!(back, fit);
        // Raw target features reproduce the standardized fitted values.
        let pred = back.predict(&studies[2].x).unwrap();
        let direct = (&z[2].x * DVector::from_vec(fit.combined_beta.clone())).add_scalar(fit.standardization[2].y_mean);
        assert!((pred - direct).amax() < 1e-12);
    }

    #[test]
    fn prediction_needs_standardization() {
        let s = study(20, 3, 1, 1);
        let err = transfer_ridge_fit(&[s], &hyper(1, 0.0), Objective::Prediction, &[1.0], None);
        assert_eq!(err.unwrap_err(), Error::NotStandardized);
    }

    #[test]
    fn study_count_must_match() {
        let s = study(20, 3, 1, 1);
        assert!(transfer_ridge_fit(&[s], &hyper(2, 0.1), Objective::Estimation, &[1.0], None).is_err());
    }

    #[test]
    fn cross_validation_edge_cases() {
        let studies: Vec<_> = (0..2).map(|i| study(10, 4, i + 1, i + 1)).collect();
        let h = hyper(2, 0.5);
        let single = cross_validate_lambda(&studies, &h, Objective::Estimation, 5, &[2.0]).unwrap();
        assert_relative_eq!(single[0], 2.0 * 0.4);
        assert_relative_eq!(single[1], 2.0 * 0.4);
        let loo = cross_validate_lambda(&studies, &h, Objective::Estimation, 10, &[0.5, 1.0, 2.0]).unwrap();
        assert!([0.5, 1.0, 2.0].iter().any(|c| (loo[1] - c * 0.4).abs() < 1e-12));
        assert!(cross_validate_lambda(&studies, &h, Objective::Estimation, 11, &[1.0, 2.0]).is_err());
        assert!(cross_validate_lambda(&studies, &h, Objective::Estimation, 5, &[]).is_err());
        assert!(cross_validate_lambda(&studies, &h, Objective::Estimation, 1, &[1.0]).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn fit_invariants_hold(
            k in 1usize..4,
            p in 2usize..7,
            extra in 0usize..20,
            seed in 0usize..500,
            rho in 0.0f64..0.95,
            lambda in 0.05f64..5.0,
            shift in -3.0f64..3.0,
            scale in 0.2f64..5.0,
        ) {
            let studies: Vec<_> = (0..k)
                .map(|i| {
                    let mut s = study(p + 3 + extra + 2 * i, p, seed + i, i + 1);
                    s.x = s.x.map(|v| v * scale + shift);
                    s
                })
                .collect();
            let (z, st) = standardize_studies(&studies).unwrap();
            for mode in [Objective::Estimation, Objective::Prediction] {
                let fit = transfer_ridge_fit(&z, &hyper(k, rho), mode, &vec![lambda; k], Some(st.clone())).unwrap();
                for j in 0..p {
                    let sum: f64 = (0..k).map(|i| fit.per_study_beta[i][j] * fit.weights[i]).sum();
                    prop_assert!((fit.combined_beta[j] - sum).abs() <= 1e-10 * (1.0 + sum.abs()));
                }
                let back: FitResult = serde_json::from_str(&serde_json::to_string(&fit).unwrap()).unwrap();
                prop_assert_eq!(&back, &fit);
                let pred = back.predict(&studies[k - 1].x).unwrap();
                let direct = (&z[k - 1].x * DVector::from_vec(fit.combined_beta.clone()))
                    .add_scalar(fit.standardization[k - 1].y_mean);
                prop_assert!((pred - direct).amax() < 1e-9);
            }
        }
    }
}
