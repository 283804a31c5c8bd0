use nalgebra::DMatrix;
use transridge_core::linalg::sym_eigenvalues;
use transridge_core::sample_covariance;
use transridge_core::sim::{
    generate_multistudy, run_risk_curve_experiment, run_risk_ratio_experiment, run_weight_adaptivity_experiment,
    AdaptivityScenario, AdaptivitySettings, CovSpec, SimConfig,
};
use transridge_core::weights::common_correlation;
use transridge_core::{Objective, PredictionForm};

fn config(p: usize, n: Vec<usize>, cov: CovSpec, replicates: usize, seed: u64) -> SimConfig {
    let k = n.len();
    SimConfig::from_design(&vec![1.0; k], &vec![1.0; k], common_correlation(k, 0.5), p, n, cov, None, replicates, seed)
        .unwrap()
}

fn grid(lo: f64, hi: f64, points: usize) -> Vec<f64> {
    (0..points).map(|i| lo * (hi / lo).powf(i as f64 / (points - 1) as f64)).collect()
}

#[test]
fn results_do_not_depend_on_thread_count() {
    let cfg = config(30, vec![40, 30, 20], CovSpec::Toeplitz(0.5), 8, 99);
    let lambdas = grid(0.1, 3.0, 4);
    let run = |threads: usize| {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        pool.install(|| run_risk_curve_experiment(&cfg, &lambdas, Objective::Prediction, PredictionForm::Corrected))
            .unwrap()
    };
    let one = run(1);
    let four = run(4);
    assert_eq!(one, four);
    for (a, b) in one.rows.iter().zip(&four.rows) {
        assert_eq!(a.emp_risk_mean.to_bits(), b.emp_risk_mean.to_bits());
    }
}

#[test]
fn risk_sandwich() {
    for objective in [Objective::Estimation, Objective::Prediction] {
        let cfg = config(100, vec![150, 130, 110, 90, 70, 50], CovSpec::Toeplitz(0.5), 20, 5);
        let curve = run_risk_curve_experiment(&cfg, &grid(0.05, 5.0, 8), objective, PredictionForm::Corrected).unwrap();
        // The finite-sample optimum beats the limiting weights on every
        // replicate; the limiting weights beat the equal-weight baseline on
        // average (individual replicates can go either way).
        for rep in &curve.replicates {
            for i in 0..curve.rows.len() {
                assert!(rep.optimal[i] <= rep.asymptotic[i] + 1e-12, "replicate {} lambda {}", rep.index, i);
            }
        }
        let asymptotic = curve.asymptotic_risk_mean();
        for (row, asym) in curve.rows.iter().zip(&asymptotic) {
            assert!(row.emp_risk_mean <= *asym);
            assert!(*asym <= row.baseline_risk_mean);
            assert!(row.emp_risk_se > 0.0);
        }
        let (_, best) = curve.best_baseline();
        assert!(curve.rows.iter().all(|r| r.baseline_risk_mean >= best));
    }
}

#[test]
fn theory_gap_shrinks_with_dimension() {
    let gap = |p: usize| {
        let cfg = config(p, vec![p; 6], CovSpec::Toeplitz(0.5), 50, 2024);
        let curve =
            run_risk_curve_experiment(&cfg, &[0.2, 1.0, 3.0], Objective::Estimation, PredictionForm::Corrected).unwrap();
        curve.rows.iter().map(|r| ((r.emp_risk_mean - r.theory_risk) / r.theory_risk).abs()).sum::<f64>() / 3.0
    };
    let small = gap(100);
    let large = gap(500);
    assert!(large <= small, "gap at p = 500 ({large}) exceeds gap at p = 100 ({small})");
}

#[test]
fn sample_covariance_concentrates_with_n() {
    let p = 60;
    let mean_error = |n: usize| {
        let cfg = config(p, vec![n], CovSpec::Toeplitz(0.5), 1, 3);
        let sigma = CovSpec::Toeplitz(0.5).matrix(p);
        (0..5)
            .map(|r| {
                let d = generate_multistudy(&cfg, r).unwrap();
                let diff: DMatrix<f64> = sample_covariance(&d.studies[0].x).unwrap() - &sigma;
                sym_eigenvalues(&diff).iter().fold(0.0_f64, |a, &b| a.max(b.abs()))
            })
            .sum::<f64>()
            / 5.0
    };
    assert!(mean_error(10 * p) < mean_error(p));
}

#[test]
fn adaptivity_common_correlation() {
    let grid: Vec<f64> = (0..=10).map(|i| i as f64 / 10.0).collect();
    let rows =
        run_weight_adaptivity_experiment(&AdaptivitySettings::default(), &AdaptivityScenario::Common(grid)).unwrap();
    assert_eq!(rows.len(), 11);
    let first = &rows[0];
    for (i, w) in first.weights.iter().enumerate() {
        let expected = if i == 5 { 1.0 } else { 0.0 };
        assert!((w - expected).abs() < 1e-6);
    }
    for row in &rows {
        let target = row.weights[5];
        assert!(row.weights[..5].iter().all(|&w| target - w >= -1e-10));
    }
    let last = &rows[10].weights;
    assert!(last.iter().all(|&w| (w - last[0]).abs() < 1e-8));
    assert!(last.iter().sum::<f64>() > 1.0);
}

#[test]
fn adaptivity_heterogeneous_correlation() {
    for objective in [Objective::Estimation, Objective::Prediction] {
        let settings = AdaptivitySettings { objective, ..AdaptivitySettings::default() };
        let rho = vec![0.1, 0.3, 0.5, 0.65, 0.8];
        let rows = run_weight_adaptivity_experiment(&settings, &AdaptivityScenario::Heterogeneous(rho)).unwrap();
        let w = &rows[0].weights;
        assert!(w[..5].windows(2).all(|p| p[0] < p[1]), "weights {w:?}");
        assert!(w[5] > w[4]);
    }
}

#[test]
fn risk_ratio_surface() {
    let gammas = [0.25, 0.5, 0.75, 1.0, 1.25, 1.5, 1.75, 2.0];
    let rhos: Vec<f64> = (0..10).map(|i| i as f64 / 10.0).collect();
    for objective in [Objective::Estimation, Objective::Prediction] {
        let rows = run_risk_ratio_experiment(&gammas, &rhos, &[0.5, 1.0, 2.0], 6, objective).unwrap();
        for r in rows.iter().filter(|r| r.rho == 0.0) {
            assert!((r.ratio - 1.0).abs() < 1e-10);
        }
        assert!(rows.iter().all(|r| r.ratio >= 1.0 - 1e-12));
        for chunk in rows.chunks(rhos.len()) {
            assert!(chunk.windows(2).all(|w| w[1].ratio >= w[0].ratio - 1e-12));
        }
        if objective == Objective::Prediction {
            let top = rows.iter().filter(|r| r.rho == 0.9 && r.alpha2 == 1.0).map(|r| r.ratio).fold(0.0, f64::max);
            assert!(top <= 1.35, "largest prediction improvement ratio {top}");
        }
    }
}
