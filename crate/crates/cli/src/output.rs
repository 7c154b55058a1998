//! Artifact writers. Numbers in CSV files carry 17 significant digits so
//! they read back to the identical `f64`.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use mivi_core::evaluation::PosteriorSummary;
use mivi_core::trainer::TrainLog;
use mivi_core::Vector;
use serde::Serialize;
use serde_json::{json, Value};

use crate::error::{CliError, Result};

pub fn format_f64(x: f64) -> String {
    format!("{x:.16e}")
}

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> CliError + '_ {
    move |source| CliError::Output {
        path: path.to_path_buf(),
        source,
    }
}

fn csv_err(path: &Path) -> impl Fn(csv::Error) -> CliError + '_ {
    move |e| CliError::Output {
        path: path.to_path_buf(),
        source: std::io::Error::other(e),
    }
}

/// Writes a header row followed by one row per item of `rows`.
pub fn write_table<I, R>(path: &Path, header: &[String], rows: I) -> Result<()>
where
    I: IntoIterator<Item = R>,
    R: AsRef<[f64]>,
{
    let mut w = csv::Writer::from_path(path).map_err(csv_err(path))?;
    w.write_record(header).map_err(csv_err(path))?;
    for row in rows {
        let row = row.as_ref();
        if row.len() != header.len() {
            return Err(CliError::Output {
                path: path.to_path_buf(),
                source: std::io::Error::other(format!("row has {} fields, header has {}", row.len(), header.len())),
            });
        }
        w.write_record(row.iter().map(|&x| format_f64(x))).map_err(csv_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

pub fn write_samples(path: &Path, names: &[String], samples: &[Vector]) -> Result<()> {
    write_table(path, names, samples.iter().map(|z| z.as_slice().to_vec()))
}

pub fn write_train_log(path: &Path, log: &TrainLog) -> Result<()> {
    let header: Vec<String> = ["epoch", "surrogate", "surrogate_se", "disc_objective", "disc_mean_qtilde"]
        .map(String::from)
        .to_vec();
    write_table(
        path,
        &header,
        log.rows.iter().map(|r| {
            [
                r.epoch as f64,
                r.surrogate,
                r.surrogate_se,
                r.disc_objective,
                r.disc_mean_qtilde,
            ]
        }),
    )
}

/// Pretty-printed JSON with a trailing newline.
pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let file = File::create(path).map_err(io_err(path))?;
    let mut w = BufWriter::new(file);
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n").map_err(io_err(path))?;
    w.flush().map_err(io_err(path))
}

/// `{"variables": {name: {mean, sd, q025, q975}}, "names": [...],
/// "correlation": [...]}` with the correlation matrix flattened row-major.
pub fn summary_json(summary: &PosteriorSummary) -> Value {
    let mut vars = BTreeMap::new();
    for (i, name) in summary.names.iter().enumerate() {
        vars.insert(
            name.clone(),
            json!({
                "mean": summary.mean[i],
                "sd": summary.sd[i],
                "q025": summary.q025[i],
                "q975": summary.q975[i],
            }),
        );
    }
    let d = summary.names.len();
    let corr: Vec<f64> = (0..d).flat_map(|i| (0..d).map(move |j| (i, j))).map(|(i, j)| summary.corr[(i, j)]).collect();
    json!({
        "variables": vars,
        "names": summary.names,
        "correlation": corr,
    })
}
