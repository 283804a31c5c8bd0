//! Library behind the `transridge` command-line tool.

pub mod commands;
pub mod config;
pub mod data;
pub mod error;
pub mod fit;

pub use commands::{run, Command};
pub use config::Config;
pub use error::{CliError, CliResult};
pub use fit::{cross_validate_lambda, screen_predictors, transfer_ridge_fit, FitResult, Standardization};
