//! Synthetic data sets for the count-data and logistic experiments, and
//! readers for the files written here.

use std::path::Path;

use mivi_core::models::{read_numeric_csv, LogisticModel, NegBinModel};
use mivi_core::{Matrix, RngStream, Vector};

use crate::error::{CliError, Context, Result};
use crate::output::{format_f64, write_table};

pub const NB_ROWS: usize = 1000;
pub const NB_TRUE_R: f64 = 2.0;
pub const NB_TRUE_P: f64 = 0.7;
pub const LOGISTIC_ROWS: usize = 1000;

const TAG_NB: u64 = 0x6e62;
const TAG_LOGISTIC: u64 = 0x6c67;

/// 1000 negative binomial counts with `r = 2`, `p = 0.7`.
pub fn nb_counts(seed: u64) -> Result<Vec<u64>> {
    let mut rng = RngStream::derive(seed, &[TAG_NB]);
    NegBinModel::simulate(NB_TRUE_R, NB_TRUE_P, NB_ROWS, &mut rng).context("simulating counts")
}

/// 1000 rows of correlated covariates with Bernoulli responses.
pub fn logistic_data(seed: u64) -> Result<LogisticModel> {
    let mut rng = RngStream::derive(seed, &[TAG_LOGISTIC]);
    LogisticModel::simulate(LOGISTIC_ROWS, &mut rng).context("simulating logistic data")
}

fn io_error(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Output {
        path: path.to_path_buf(),
        source: std::io::Error::other(e.to_string()),
    }
}

pub fn write_nb(path: &Path, counts: &[u64]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| io_error(path, e))?;
    w.write_record(["x"]).map_err(|e| io_error(path, e))?;
    for c in counts {
        w.write_record([c.to_string()]).map_err(|e| io_error(path, e))?;
    }
    w.flush().map_err(|e| io_error(path, e))
}

pub fn write_logistic(path: &Path, model: &LogisticModel) -> Result<()> {
    let p = model.n_features();
    let mut header: Vec<String> = (1..=p).map(|i| format!("x{i}")).collect();
    header.push("y".into());
    let rows = (0..model.x.nrows()).map(|i| {
        let mut row: Vec<f64> = model.x.row(i).iter().copied().collect();
        row.push(model.y[i]);
        row
    });
    write_table(path, &header, rows)
}

/// Generates the named data set and writes it to `path`.
pub fn generate(kind: &str, seed: u64, path: &Path) -> Result<()> {
    match kind {
        "nb" => write_nb(path, &nb_counts(seed)?),
        "logistic" => write_logistic(path, &logistic_data(seed)?),
        other => Err(CliError::config(
            "experiment",
            format!("no synthetic data for '{other}' (expected nb or logistic)"),
        )),
    }
}

/// Reads a single-column file of non-negative integer counts.
pub fn read_nb(path: &Path, key: &str) -> Result<Vec<u64>> {
    let (header, rows) = read_numeric_csv(path).map_err(|e| CliError::config(key, e.to_string()))?;
    if header.len() != 1 {
        return Err(CliError::config(key, format!("expected one column of counts, found {}", header.len())));
    }
    rows.iter()
        .enumerate()
        .map(|(i, r)| {
            let x = r[0];
            if x >= 0.0 && x.fract() == 0.0 && x < 1e15 {
                Ok(x as u64)
            } else {
                Err(CliError::config(key, format!("row {}: '{}' is not a count", i + 1, format_f64(x))))
            }
        })
        .collect()
}

/// Reads covariate columns followed by a final 0/1 response column.
pub fn read_logistic(path: &Path, key: &str) -> Result<LogisticModel> {
    let (header, rows) = read_numeric_csv(path).map_err(|e| CliError::config(key, e.to_string()))?;
    if header.len() < 2 {
        return Err(CliError::config(key, "expected covariate columns and a response column"));
    }
    let p = header.len() - 1;
    let x = Matrix::from_fn(rows.len(), p, |i, j| rows[i][j]);
    let y = Vector::from_fn(rows.len(), |i, _| rows[i][p]);
    LogisticModel::new(x, y).map_err(|e| CliError::config(key, e.to_string()))
}
