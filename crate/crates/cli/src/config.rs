//! Flat `key = value` configuration files.
//!
//! One entry per line, `#` starts a comment. Lists are comma separated.
//! Per-study keys (`n_k`, `alpha2_k`, `sigma2_k`, `h2_k`, `lambda`) accept a
//! single value, which is broadcast to every study. The correlation matrix is
//! either a common `rho` or one `rho_row_i` line per study (1-based).
//! Relative paths are resolved against the directory holding the file.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use transridge_core::sim::CovSpec;
use transridge_core::weights::{alpha2_from_heritability, common_correlation};
use transridge_core::{HyperParams, Objective, PredictionForm};

use crate::error::{CliError, CliResult};

const KNOWN_KEYS: &[&str] = &[
    "mode", "K", "p", "n_k", "alpha2_k", "sigma2_k", "h2_k", "rho", "cov", "cov_r", "cov_file", "lambda",
    "multipliers", "folds", "seed", "out_dir", "replicates", "lambda_grid", "studies", "test", "fit", "screen",
    "n_test", "threads", "form", "rho_grid", "gamma_grid", "alpha2_grid", "rho_target",
];

pub const DEFAULT_MULTIPLIERS: [f64; 5] = [0.25, 0.5, 1.0, 2.0, 4.0];

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum CovKind {
    Identity,
    Toeplitz,
    Custom,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Config {
    pub mode: Objective,
    pub k: Option<usize>,
    pub p: Option<usize>,
    pub n: Option<Vec<usize>>,
    pub alpha2: Option<Vec<f64>>,
    pub sigma2: Option<Vec<f64>>,
    pub rho_common: Option<f64>,
    pub rho_rows: BTreeMap<usize, Vec<f64>>,
    pub cov: CovKind,
    pub cov_r: Option<f64>,
    pub cov_file: Option<PathBuf>,
    pub lambda: Option<Vec<f64>>,
    pub multipliers: Vec<f64>,
    pub folds: usize,
    pub seed: u64,
    pub out_dir: PathBuf,
    pub replicates: usize,
    pub lambda_grid: Vec<f64>,
    pub studies: Vec<PathBuf>,
    pub test: Option<PathBuf>,
    pub fit: Option<PathBuf>,
    pub screen: Option<usize>,
    pub n_test: usize,
    pub threads: usize,
    pub form: PredictionForm,
    pub rho_grid: Option<Vec<f64>>,
    pub gamma_grid: Option<Vec<f64>>,
    pub alpha2_grid: Option<Vec<f64>>,
    pub rho_target: Option<Vec<f64>>,
}

impl Config {
    pub fn from_file(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::parse(&text, &base)
    }

    pub fn parse(text: &str, base_dir: &Path) -> CliResult<Self> {
        let entries = parse_entries(text)?;
        let get = |key: &str| entries.get(key).map(String::as_str);
        let resolve = |p: &str| {
            let p = PathBuf::from(p);
            if p.is_absolute() {
                p
            } else {
                base_dir.join(p)
            }
        };

        let mut rho_rows = BTreeMap::new();
        for (key, value) in &entries {
            if let Some(idx) = key.strip_prefix("rho_row_") {
                let i: usize = idx
                    .parse()
                    .ok()
                    .filter(|&i| i >= 1)
                    .ok_or_else(|| CliError::config(format!("bad correlation row key '{key}'")))?;
                rho_rows.insert(i, parse_list::<f64>(key, value)?);
            }
        }
        let cov = match get("cov").unwrap_or("identity").to_ascii_lowercase().as_str() {
            "identity" => CovKind::Identity,
            "toeplitz" => CovKind::Toeplitz,
            "custom" => CovKind::Custom,
            other => return Err(CliError::config(format!("cov must be identity, toeplitz or custom, got '{other}'"))),
        };

        let h2: Option<Vec<f64>> = get("h2_k").map(|v| parse_list("h2_k", v)).transpose()?;
        let alpha2_direct: Option<Vec<f64>> = get("alpha2_k").map(|v| parse_list("alpha2_k", v)).transpose()?;
        let alpha2 = match (alpha2_direct, h2) {
            (Some(_), Some(_)) => return Err(CliError::config("give either alpha2_k or h2_k, not both")),
            (Some(a), None) => Some(a),
            (None, Some(h)) => Some(
                h.iter()
                    .map(|&x| alpha2_from_heritability(x).map_err(|e| CliError::config(format!("h2_k: {e}"))))
                    .collect::<CliResult<Vec<_>>>()?,
            ),
            (None, None) => None,
        };

        let config = Config {
            mode: get("mode").map(|m| m.parse().map_err(|e| CliError::config(format!("mode: {e}")))).transpose()?.unwrap_or_default(),
            k: get("K").map(|v| parse_one("K", v)).transpose()?,
            p: get("p").map(|v| parse_one("p", v)).transpose()?,
            n: get("n_k").map(|v| parse_list("n_k", v)).transpose()?,
            alpha2,
            sigma2: get("sigma2_k").map(|v| parse_list("sigma2_k", v)).transpose()?,
            rho_common: get("rho").map(|v| parse_one("rho", v)).transpose()?,
            rho_rows,
            cov,
            cov_r: get("cov_r").map(|v| parse_one("cov_r", v)).transpose()?,
            cov_file: get("cov_file").map(resolve),
            lambda: match get("lambda") {
                None => None,
                Some(v) if v.eq_ignore_ascii_case("auto") => None,
                Some(v) => Some(parse_list("lambda", v)?),
            },
            multipliers: get("multipliers")
                .map(|v| parse_list("multipliers", v))
                .transpose()?
                .unwrap_or_else(|| DEFAULT_MULTIPLIERS.to_vec()),
            folds: get("folds").map(|v| parse_one("folds", v)).transpose()?.unwrap_or(5),
            seed: get("seed").map(|v| parse_one("seed", v)).transpose()?.unwrap_or(0),
            out_dir: resolve(get("out_dir").unwrap_or(".")),
            replicates: get("replicates").map(|v| parse_one("replicates", v)).transpose()?.unwrap_or(50),
            lambda_grid: get("lambda_grid").map(|v| parse_grid("lambda_grid", v)).transpose()?.unwrap_or_else(|| log_grid(0.05, 5.0, 20)),
            studies: get("studies")
                .map(|v| v.split(',').map(str::trim).filter(|s| !s.is_empty()).map(resolve).collect())
                .unwrap_or_default(),
            test: get("test").map(resolve),
            fit: get("fit").map(resolve),
            screen: get("screen").map(|v| parse_one("screen", v)).transpose()?,
            n_test: get("n_test").map(|v| parse_one("n_test", v)).transpose()?.unwrap_or(1000),
            threads: get("threads").map(|v| parse_one("threads", v)).transpose()?.unwrap_or(0),
            form: match get("form").unwrap_or("corrected").to_ascii_lowercase().as_str() {
                "corrected" => PredictionForm::Corrected,
                "literal" => PredictionForm::Literal,
                other => return Err(CliError::config(format!("form must be corrected or literal, got '{other}'"))),
            },
            rho_grid: get("rho_grid").map(|v| parse_grid("rho_grid", v)).transpose()?,
            gamma_grid: get("gamma_grid").map(|v| parse_grid("gamma_grid", v)).transpose()?,
            alpha2_grid: get("alpha2_grid").map(|v| parse_grid("alpha2_grid", v)).transpose()?,
            rho_target: get("rho_target").map(|v| parse_list("rho_target", v)).transpose()?,
        };
        config.check()?;
        Ok(config)
    }

    fn check(&self) -> CliResult<()> {
        if self.rho_common.is_some() && !self.rho_rows.is_empty() {
            return Err(CliError::config("give either rho or rho_row_i lines, not both"));
        }
        if self.folds < 2 {
            return Err(CliError::config("folds must be at least 2"));
        }
        if self.multipliers.is_empty() || self.multipliers.iter().any(|&m| !(m > 0.0 && m.is_finite())) {
            return Err(CliError::config("multipliers must be a non-empty list of positive numbers"));
        }
        if self.replicates == 0 {
            return Err(CliError::config("replicates must be at least 1"));
        }
        if self.screen == Some(0) {
            return Err(CliError::config("screen must be at least 1"));
        }
        if self.lambda_grid.is_empty() || self.lambda_grid.iter().any(|&l| !(l > 0.0 && l.is_finite())) {
            return Err(CliError::config("lambda_grid must hold positive values"));
        }
        Ok(())
    }

    /// Number of studies: `K`, else the length of `n_k`, else the number of
    /// study files.
    pub fn study_count(&self) -> CliResult<usize> {
        let k = self
            .k
            .or_else(|| self.n.as_ref().filter(|n| n.len() > 1).map(Vec::len))
            .or_else(|| (!self.studies.is_empty()).then_some(self.studies.len()))
            .or_else(|| self.alpha2.as_ref().filter(|a| a.len() > 1).map(Vec::len))
            .ok_or_else(|| CliError::config("cannot determine the number of studies (set K)"))?;
        if k == 0 {
            return Err(CliError::config("K must be at least 1"));
        }
        Ok(k)
    }

    pub fn require_p(&self) -> CliResult<usize> {
        match self.p {
            Some(p) if p > 0 => Ok(p),
            Some(_) => Err(CliError::config("p must be positive")),
            None => Err(CliError::config("missing key 'p'")),
        }
    }

    pub fn sample_sizes(&self) -> CliResult<Vec<usize>> {
        let k = self.study_count()?;
        let n = broadcast("n_k", self.n.as_deref(), k)?;
        if n.contains(&0) {
            return Err(CliError::config("n_k entries must be positive"));
        }
        Ok(n)
    }

    pub fn alpha2_values(&self) -> CliResult<Vec<f64>> {
        positive("alpha2_k", broadcast("alpha2_k", self.alpha2.as_deref(), self.study_count()?)?)
    }

    /// Noise variances, default one.
    pub fn sigma2_values(&self) -> CliResult<Vec<f64>> {
        let k = self.study_count()?;
        match &self.sigma2 {
            None => Ok(vec![1.0; k]),
            Some(v) => positive("sigma2_k", broadcast("sigma2_k", Some(v), k)?),
        }
    }

    pub fn rho_matrix(&self) -> CliResult<DMatrix<f64>> {
        let k = self.study_count()?;
        if let Some(r) = self.rho_common {
            return Ok(common_correlation(k, r));
        }
        if self.rho_rows.is_empty() {
            if k == 1 {
                return Ok(DMatrix::identity(1, 1));
            }
            return Err(CliError::config("missing correlation: set rho or rho_row_1..rho_row_K"));
        }
        if self.rho_rows.len() != k || self.rho_rows.keys().last() != Some(&k) {
            return Err(CliError::config(format!("expected rho_row_1..rho_row_{k}")));
        }
        let mut m = DMatrix::zeros(k, k);
        for (&i, row) in &self.rho_rows {
            if row.len() != k {
                return Err(CliError::config(format!("rho_row_{i} has {} entries, expected {k}", row.len())));
            }
            for (j, &v) in row.iter().enumerate() {
                m[(i - 1, j)] = v;
            }
        }
        Ok(m)
    }

    /// Explicit penalties, broadcast to `k` studies.
    pub fn lambda_values(&self, k: usize) -> CliResult<Option<Vec<f64>>> {
        self.lambda.as_deref().map(|l| positive("lambda", broadcast("lambda", Some(l), k)?)).transpose()
    }

    pub fn cov_spec(&self, p: usize) -> CliResult<CovSpec> {
        let spec = match self.cov {
            CovKind::Identity => CovSpec::Identity,
            CovKind::Toeplitz => CovSpec::Toeplitz(
                self.cov_r.ok_or_else(|| CliError::config("cov = toeplitz needs cov_r"))?,
            ),
            CovKind::Custom => {
                let path = self.cov_file.as_ref().ok_or_else(|| CliError::config("cov = custom needs cov_file"))?;
                CovSpec::Custom(crate::data::read_matrix(path)?)
            }
        };
        spec.validate(p).map_err(|e| CliError::config(format!("cov: {e}")))?;
        Ok(spec)
    }

    /// Hyperparameters for a simulated design with `gamma_k = p / n_k` and
    /// penalties from `lambda` (default `gamma_k / alpha2_k`).
    pub fn design_hyper(&self) -> CliResult<HyperParams> {
        let p = self.require_p()? as f64;
        let n = self.sample_sizes()?;
        let gamma: Vec<f64> = n.iter().map(|&nk| p / nk as f64).collect();
        self.hyper_with_gamma(gamma)
    }

    pub fn hyper_with_gamma(&self, gamma: Vec<f64>) -> CliResult<HyperParams> {
        let alpha2 = self.alpha2_values()?;
        let k = alpha2.len();
        if gamma.len() != k {
            return Err(CliError::config(format!("{} studies but {} SNR values", gamma.len(), k)));
        }
        let lambda = match self.lambda_values(k)? {
            Some(l) => l,
            None => gamma.iter().zip(&alpha2).map(|(g, a)| g / a).collect(),
        };
        HyperParams::new(
            alpha2.iter().map(|a| a.sqrt()).collect(),
            self.sigma2_values()?.iter().map(|s| s.sqrt()).collect(),
            self.rho_matrix()?,
            gamma,
            lambda,
        )
        .map_err(|e| CliError::config(e.to_string()))
    }
}

fn parse_entries(text: &str) -> CliResult<BTreeMap<String, String>> {
    let mut entries = BTreeMap::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| CliError::config(format!("line {}: expected key = value", lineno + 1)))?;
        let key = key.trim();
        if !KNOWN_KEYS.contains(&key) && !key.starts_with("rho_row_") {
            return Err(CliError::config(format!("line {}: unknown key '{key}'", lineno + 1)));
        }
        if entries.insert(key.to_string(), value.trim().to_string()).is_some() {
            return Err(CliError::config(format!("line {}: duplicate key '{key}'", lineno + 1)));
        }
    }
    Ok(entries)
}

fn parse_one<T: std::str::FromStr>(key: &str, value: &str) -> CliResult<T> {
    value.trim().parse().map_err(|_| CliError::config(format!("{key}: cannot parse '{value}'")))
}

fn parse_list<T: std::str::FromStr>(key: &str, value: &str) -> CliResult<Vec<T>> {
    let items: Vec<T> = value.split(',').map(|v| parse_one(key, v)).collect::<CliResult<_>>()?;
    if items.is_empty() {
        return Err(CliError::config(format!("{key}: empty list")));
    }
    Ok(items)
}

/// Either a plain list or `log:lo:hi:count` / `lin:lo:hi:count`.
fn parse_grid(key: &str, value: &str) -> CliResult<Vec<f64>> {
    let parts: Vec<&str> = value.split(':').map(str::trim).collect();
    match parts.as_slice() {
        [kind @ ("log" | "lin"), lo, hi, count] => {
            let lo: f64 = parse_one(key, lo)?;
            let hi: f64 = parse_one(key, hi)?;
            let count: usize = parse_one(key, count)?;
            if count == 0 || !(lo.is_finite() && hi.is_finite()) {
                return Err(CliError::config(format!("{key}: invalid grid '{value}'")));
            }
            if *kind == "log" {
                if !(lo > 0.0 && hi > 0.0) {
                    return Err(CliError::config(format!("{key}: log grid needs positive bounds")));
                }
                Ok(log_grid(lo, hi, count))
            } else {
                Ok(lin_grid(lo, hi, count))
            }
        }
        [_] => parse_list(key, value),
        _ => Err(CliError::config(format!("{key}: invalid grid '{value}'"))),
    }
}

pub fn log_grid(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    if count == 1 {
        return vec![lo];
    }
    (0..count).map(|i| lo * (hi / lo).powf(i as f64 / (count - 1) as f64)).collect()
}

pub fn lin_grid(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    if count == 1 {
        return vec![lo];
    }
    (0..count).map(|i| lo + (hi - lo) * i as f64 / (count - 1) as f64).collect()
}

fn broadcast<T: Clone>(key: &str, values: Option<&[T]>, k: usize) -> CliResult<Vec<T>> {
    match values {
        None => Err(CliError::config(format!("missing key '{key}'"))),
        Some([single]) => Ok(vec![single.clone(); k]),
        Some(v) if v.len() == k => Ok(v.to_vec()),
        Some(v) => Err(CliError::config(format!("{key} has {} entries for {k} studies", v.len()))),
    }
}

fn positive(key: &str, values: Vec<f64>) -> CliResult<Vec<f64>> {
    if values.iter().any(|&v| !(v > 0.0 && v.is_finite())) {
        return Err(CliError::config(format!("{key} entries must be positive")));
    }
    Ok(values)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> CliResult<Config> {
        Config::parse(text, Path::new("/base"))
    }

    #[test]
    fn full_example() {
        let c = parse(
            "# simulation\nmode = prediction\nK = 3\np = 50\nn_k = 100, 80, 60\nalpha2_k = 1\n\
             sigma2_k = 1, 2, 1\nrho = 0.4\ncov = toeplitz\ncov_r = 0.5 # inline comment\n\
             lambda_grid = log:0.1:10:3\nstudies = a.csv, /abs/b.csv\nseed = 7\n",
        )
        .unwrap();
        assert_eq!(c.mode, Objective::Prediction);
        assert_eq!(c.study_count().unwrap(), 3);
        assert_eq!(c.alpha2_values().unwrap(), vec![1.0; 3]);
        assert_eq!(c.sigma2_values().unwrap(), vec![1.0, 2.0, 1.0]);
        assert_eq!(c.studies, vec![PathBuf::from("/base/a.csv"), PathBuf::from("/abs/b.csv")]);
        assert_eq!(c.lambda_grid.len(), 3);
        assert!((c.lambda_grid[1] - 1.0).abs() < 1e-12);
        assert_eq!(c.cov_spec(50).unwrap(), CovSpec::Toeplitz(0.5));
        let h = c.design_hyper().unwrap();
        assert!((h.gamma[2] - 50.0 / 60.0).abs() < 1e-15);
        assert!((h.lambda[0] - 0.5).abs() < 1e-15);
        assert_eq!(c.seed, 7);
        assert_eq!(c.folds, 5);
        assert_eq!(c.multipliers, DEFAULT_MULTIPLIERS.to_vec());
    }

    #[test]
    fn correlation_rows() {
        let c = parse("K = 2\nalpha2_k = 1\nrho_row_1 = 1, 0.3\nrho_row_2 = 0.3, 1\n").unwrap();
        let m = c.rho_matrix().unwrap();
        assert_eq!(m[(0, 1)], 0.3);
        assert!(parse("K = 2\nrho = 0.1\nrho_row_1 = 1, 0\nrho_row_2 = 0, 1\n").is_err());
        let missing = parse("K = 3\nrho_row_1 = 1, 0, 0\nrho_row_2 = 0, 1, 0\n").unwrap();
        assert!(missing.rho_matrix().is_err());
    }

    #[test]
    fn heritability_input() {
        let c = parse("K = 2\nh2_k = 0.5, 0.75\n").unwrap();
        let a = c.alpha2_values().unwrap();
        assert!((a[0] - 1.0).abs() < 1e-12 && (a[1] - 3.0).abs() < 1e-12);
        assert!(parse("h2_k = 1.0\n").is_err());
        assert!(parse("h2_k = 0.5\nalpha2_k = 1\n").is_err());
    }

    #[test]
    fn rejects_bad_input() {
        assert!(parse("bogus = 1\n").is_err());
        assert!(parse("p = 1\np = 2\n").is_err());
        assert!(parse("p = abc\n").is_err());
        assert!(parse("no equals sign\n").is_err());
        assert!(parse("folds = 1\n").is_err());
        assert!(parse("multipliers = 1, -2\n").is_err());
        assert!(parse("mode = both\n").is_err());
        assert!(parse("cov = banded\n").is_err());
        let c = parse("K = 3\nn_k = 10, 20\n").unwrap();
        assert!(c.sample_sizes().is_err());
        let t = parse("cov = toeplitz\n").unwrap();
        assert!(t.cov_spec(10).is_err());
    }

    #[test]
    fn grids() {
        assert_eq!(parse_grid("g", "lin:0:1:3").unwrap(), vec![0.0, 0.5, 1.0]);
        assert_eq!(parse_grid("g", "0.1, 0.2").unwrap(), vec![0.1, 0.2]);
        assert!(parse_grid("g", "log:0:1:3").is_err());
        assert!(parse_grid("g", "log:1:2").is_err());
    }
}
