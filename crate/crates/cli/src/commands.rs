//! Subcommand implementations. Each returns a short human-readable summary
//! for standard output; results go to CSV/JSON files under `out_dir`.

use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use transridge_core::sim::{
    run_risk_curve_experiment, run_risk_ratio_experiment, run_weight_adaptivity_experiment, theory_system,
    AdaptivityScenario, AdaptivitySettings, Generator, SimConfig,
};
use transridge_core::weights::solve_optimal_weights;
use transridge_core::StudyData;

use crate::config::{lin_grid, Config};
use crate::data::{create_writer, fmt, read_study, read_table, write_study};
use crate::error::{CliError, CliResult};
use crate::fit::{cross_validate_lambda, screen_predictors, select_columns, standardize_studies, transfer_ridge_fit, FitResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Simulate,
    Theory,
    Curve,
    Adaptivity,
    Ratio,
    Fit,
    Predict,
}

pub fn run(command: Command, config: &Config) -> CliResult<String> {
    match command {
        Command::Simulate => simulate(config),
        Command::Theory => theory(config),
        Command::Curve => curve(config),
        Command::Adaptivity => adaptivity(config),
        Command::Ratio => ratio(config),
        Command::Fit => fit(config),
        Command::Predict => predict(config),
    }
}

fn sim_config(config: &Config, extra_target_rows: usize) -> CliResult<SimConfig> {
    let p = config.require_p()?;
    let mut n = config.sample_sizes()?;
    let hyper = config.design_hyper()?;
    *n.last_mut().expect("at least one study") += extra_target_rows;
    let gamma: Vec<f64> = n.iter().map(|&nk| p as f64 / nk as f64).collect();
    let hyper = transridge_core::HyperParams { gamma, ..hyper };
    Ok(SimConfig::new(hyper, p, n, config.cov_spec(p)?, config.replicates, config.seed)?)
}

fn predictor_names(p: usize) -> Vec<String> {
    (1..=p).map(|j| format!("x{j}")).collect()
}

/// One synthetic replicate: `study_k.csv` for every study, a held-out
/// `test.csv` of `n_test` target rows and the true coefficients.
fn simulate(config: &Config) -> CliResult<String> {
    let n = config.sample_sizes()?;
    let sim = sim_config(config, config.n_test)?;
    let data = Generator::new(&sim)?.generate(0)?;
    let names = predictor_names(sim.p);
    let out = &config.out_dir;
    let k = n.len();
    for (i, study) in data.studies.iter().enumerate() {
        let rows = n[i];
        let x = study.x.rows(0, rows).clone_owned();
        let y = study.y.rows(0, rows).clone_owned();
        write_study(&out.join(format!("study_{}.csv", i + 1)), &names, &x, &y)?;
    }
    let target = &data.studies[k - 1];
    let train = n[k - 1];
    let test_x = target.x.rows(train, config.n_test).clone_owned();
    let test_y = target.y.rows(train, config.n_test).clone_owned();
    write_study(&out.join("test.csv"), &names, &test_x, &test_y)?;

    let mut w = create_writer(&out.join("true_beta.csv"))?;
    let mut header = vec!["coef_index".to_string()];
    header.extend((1..=k).map(|i| format!("beta_study_{i}")));
    w.write_record(&header)?;
    for j in 0..sim.p {
        let mut row = vec![(j + 1).to_string()];
        row.extend(data.betas.row(j).iter().map(|&v| fmt(v)));
        w.write_record(&row)?;
    }
    w.flush().map_err(|e| CliError::io(out, e))?;
    Ok(format!("wrote {k} studies, test.csv ({} rows) and true_beta.csv to {}", config.n_test, out.display()))
}

fn write_weights(path: &Path, weights: &[f64]) -> CliResult<()> {
    let mut w = create_writer(path)?;
    w.write_record(["study_id", "weight"])?;
    for (i, v) in weights.iter().enumerate() {
        w.write_record([(i + 1).to_string(), fmt(*v)])?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

/// Limiting optimal weights and risk for the configured design.
fn theory(config: &Config) -> CliResult<String> {
    let p = config.require_p()?;
    let hyper = config.design_hyper()?;
    let system = theory_system(&hyper, &config.cov_spec(p)?, p, config.mode, config.form)?;
    let sol = solve_optimal_weights(&system)?;
    let weights: Vec<f64> = sol.weights.iter().copied().collect();
    write_weights(&config.out_dir.join("weights.csv"), &weights)?;
    let mut w = create_writer(&config.out_dir.join("theory.csv"))?;
    w.write_record(["objective", "risk", "base", "regularized"])?;
    w.write_record([config.mode.to_string(), fmt(sol.risk), fmt(system.base), sol.regularized.to_string()])?;
    w.flush().map_err(|e| CliError::io(&config.out_dir, e))?;
    Ok(format!("{} limiting risk {:.6} (null risk {:.6})", config.mode, sol.risk, system.base))
}

fn curve(config: &Config) -> CliResult<String> {
    let sim = sim_config(config, 0)?;
    let result = run_risk_curve_experiment(&sim, &config.lambda_grid, config.mode, config.form)?;
    let path = config.out_dir.join("risk_curve.csv");
    let mut w = create_writer(&path)?;
    for row in &result.rows {
        w.serialize(row)?;
    }
    w.flush().map_err(|e| CliError::io(&path, e))?;
    let (best_lambda, best_risk) = result.best_baseline();
    Ok(format!(
        "{} risk curve over {} penalties and {} replicates; equal-weight baseline best {:.6} at lambda {:.4}",
        config.mode,
        result.rows.len(),
        sim.replicates,
        best_risk,
        best_lambda
    ))
}

fn adaptivity(config: &Config) -> CliResult<String> {
    let k = config.k.unwrap_or(6);
    let p = config.p.unwrap_or(100);
    let n = config.n.as_ref().map_or(100, |n| n[0]);
    let alpha2 = config.alpha2.as_ref().map_or(1.0, |a| a[0]);
    let sigma2 = config.sigma2.as_ref().map_or(1.0, |s| s[0]);
    let settings = AdaptivitySettings { k, gamma: p as f64 / n as f64, alpha2, sigma2, objective: config.mode };
    let common = config.rho_grid.clone().unwrap_or_else(|| lin_grid(0.0, 1.0, 11));
    let hetero = config.rho_target.clone().unwrap_or_else(|| lin_grid(0.1, 0.8, k - 1));
    let mut rows: Vec<(&str, _)> = run_weight_adaptivity_experiment(&settings, &AdaptivityScenario::Common(common))?
        .into_iter()
        .map(|r| ("common", r))
        .collect();
    rows.extend(
        run_weight_adaptivity_experiment(&settings, &AdaptivityScenario::Heterogeneous(hetero))?
            .into_iter()
            .map(|r| ("heterogeneous", r)),
    );
    let path = config.out_dir.join("adaptivity.csv");
    let mut w = create_writer(&path)?;
    let mut header = vec!["scenario".to_string()];
    header.extend((1..k).map(|i| format!("rho_{i}")));
    header.extend((1..=k).map(|i| format!("weight_{i}")));
    header.push("risk".into());
    w.write_record(&header)?;
    for (label, row) in &rows {
        let mut rec = vec![label.to_string()];
        rec.extend(row.rho_to_target.iter().map(|&v| fmt(v)));
        rec.extend(row.weights.iter().map(|&v| fmt(v)));
        rec.push(fmt(row.risk));
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| CliError::io(&path, e))?;
    Ok(format!("wrote {} weight configurations to {}", rows.len(), path.display()))
}

fn ratio(config: &Config) -> CliResult<String> {
    let gammas = config.gamma_grid.clone().unwrap_or_else(|| lin_grid(0.25, 2.0, 8));
    let rhos = config.rho_grid.clone().unwrap_or_else(|| lin_grid(0.0, 0.9, 10));
    let alphas = config.alpha2_grid.clone().unwrap_or_else(|| vec![1.0]);
    let k = config.k.unwrap_or(6);
    let rows = run_risk_ratio_experiment(&gammas, &rhos, &alphas, k, config.mode)?;
    let path = config.out_dir.join("risk_ratio.csv");
    let mut w = create_writer(&path)?;
    for row in &rows {
        w.serialize(row)?;
    }
    w.flush().map_err(|e| CliError::io(&path, e))?;
    let top = rows.iter().map(|r| r.ratio).fold(f64::NEG_INFINITY, f64::max);
    Ok(format!("{} risk ratios on {} grid points, largest {top:.4}", config.mode, rows.len()))
}

fn load_studies(config: &Config) -> CliResult<(Vec<StudyData>, Vec<String>)> {
    if config.studies.is_empty() {
        return Err(CliError::config("missing key 'studies'"));
    }
    let mut names: Option<Vec<String>> = None;
    let mut studies = Vec::with_capacity(config.studies.len());
    for (i, path) in config.studies.iter().enumerate() {
        let (study, cols) = read_study(path, i + 1)?;
        match &names {
            None => names = Some(cols),
            Some(n) if *n != cols => {
                return Err(CliError::data(path, "predictor columns differ from the first study"));
            }
            Some(_) => {}
        }
        studies.push(study);
    }
    Ok((studies, names.unwrap_or_default()))
}

fn fit_path(config: &Config) -> PathBuf {
    config.fit.clone().unwrap_or_else(|| config.out_dir.join("fit.json"))
}

fn fit(config: &Config) -> CliResult<String> {
    let (studies, names) = load_studies(config)?;
    if config.k.is_some_and(|k| k != studies.len()) {
        return Err(CliError::config(format!("K = {} but {} study files", config.k.unwrap(), studies.len())));
    }
    let k = studies.len();
    let p_all = studies[0].p();
    let selected: Vec<usize> = match config.screen {
        Some(m) => {
            let mut s = screen_predictors(&studies[k - 1], m)?;
            s.sort_unstable();
            s
        }
        None => (0..p_all).collect(),
    };
    let studies = studies.iter().map(|s| select_columns(s, &selected)).collect::<Result<Vec<_>, _>>()?;
    let (standardized, stats) = standardize_studies(&studies)?;
    let p = selected.len() as f64;
    let hyper = config.hyper_with_gamma(studies.iter().map(|s| p / s.n() as f64).collect())?;
    let lambda = match config.lambda_values(k)? {
        Some(l) => l,
        None => cross_validate_lambda(&standardized, &hyper, config.mode, config.folds, &config.multipliers)?,
    };
    let mut result = transfer_ridge_fit(&standardized, &hyper, config.mode, &lambda, Some(stats))?;
    result.column_names = selected.iter().map(|&j| names[j].clone()).collect();
    result.selected_columns = selected;

    let out = &config.out_dir;
    std::fs::create_dir_all(out).map_err(|e| CliError::io(out, e))?;
    let json_path = fit_path(config);
    let json = serde_json::to_string_pretty(&result).map_err(|e| CliError::config(e.to_string()))?;
    std::fs::write(&json_path, json).map_err(|e| CliError::io(&json_path, e))?;
    write_weights(&out.join("weights.csv"), &result.weights)?;

    let path = out.join("fit.csv");
    let mut w = create_writer(&path)?;
    let mut header = vec!["coef_index".to_string(), "combined_beta".to_string()];
    header.extend((1..=k).map(|i| format!("beta_study_{i}")));
    w.write_record(&header)?;
    for (j, &col) in result.selected_columns.iter().enumerate() {
        let mut row = vec![(col + 1).to_string(), fmt(result.combined_beta[j])];
        row.extend(result.per_study_beta.iter().map(|b| fmt(b[j])));
        w.write_record(&row)?;
    }
    w.flush().map_err(|e| CliError::io(&path, e))?;
    Ok(format!(
        "{} fit on {k} studies and {} predictors; target weight {:.4}, limiting risk {:.6}",
        config.mode,
        result.selected_columns.len(),
        result.weights[k - 1],
        result.limiting_risk
    ))
}

fn predict(config: &Config) -> CliResult<String> {
    let fit_file = fit_path(config);
    let text = std::fs::read_to_string(&fit_file).map_err(|e| CliError::io(&fit_file, e))?;
    let fit: FitResult = serde_json::from_str(&text).map_err(|e| CliError::data(&fit_file, e.to_string()))?;
    let test_path = config.test.as_ref().ok_or_else(|| CliError::config("missing key 'test'"))?;
    let table = read_table(test_path)?;
    let x: DMatrix<f64> = table.x;
    let pred = fit.predict(&x)?;
    let naive = fit.predict_naive(&x)?;

    let out = &config.out_dir;
    let path = out.join("predictions.csv");
    let mut w = create_writer(&path)?;
    let mut header = vec!["row", "prediction", "naive_prediction"];
    if table.y.is_some() {
        header.push("y");
    }
    w.write_record(&header)?;
    for i in 0..x.nrows() {
        let mut row = vec![(i + 1).to_string(), fmt(pred[i]), fmt(naive[i])];
        if let Some(y) = &table.y {
            row.push(fmt(y[i]));
        }
        w.write_record(&row)?;
    }
    w.flush().map_err(|e| CliError::io(&path, e))?;

    let Some(y) = table.y else {
        return Ok(format!("wrote {} predictions", x.nrows()));
    };
    let n = y.len() as f64;
    let mse = (&y - &pred).norm_squared() / n;
    let naive_mse = (&y - &naive).norm_squared() / n;
    let path = out.join("metrics.csv");
    let mut w = create_writer(&path)?;
    w.write_record(["metric", "value"])?;
    w.write_record(["mse_transfer", &fmt(mse)])?;
    w.write_record(["mse_naive", &fmt(naive_mse)])?;
    w.write_record(["n_test", &y.len().to_string()])?;
    w.flush().map_err(|e| CliError::io(&path, e))?;
    Ok(format!("test MSE {mse:.6} (target-only ridge {naive_mse:.6}) on {} rows", y.len()))
}
