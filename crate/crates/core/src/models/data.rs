use std::path::Path;

use crate::error::{Error, Result};
use crate::numerics::{Matrix, Vector};

/// Regression data: design matrix, response and column names.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub x: Matrix,
    pub y: Vector,
    pub names: Vec<String>,
}

/// Reads a headered CSV of numbers. Returns the header and the rows.
pub fn read_numeric_csv(path: &Path) -> Result<(Vec<String>, Vec<Vec<f64>>)> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
    let header: Vec<String> = reader
        .headers()
        .map_err(|e| Error::Data(format!("{}: {e}", path.display())))?
        .iter()
        .map(str::to_string)
        .collect();
    let mut rows = Vec::new();
    for (line, record) in reader.records().enumerate() {
        let record = record.map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
        if record.len() != header.len() {
            return Err(Error::Data(format!(
                "{}: row {} has {} fields, header has {}",
                path.display(),
                line + 1,
                record.len(),
                header.len()
            )));
        }
        let row = record
            .iter()
            .map(|f| {
                f.parse::<f64>().map_err(|_| {
                    Error::Data(format!("{}: row {}: '{f}' is not a number", path.display(), line + 1))
                })
            })
            .collect::<Result<Vec<f64>>>()?;
        rows.push(row);
    }
    Ok((header, rows))
}

/// Centers each column and scales it to unit Euclidean norm.
pub fn standardize_design(x: &Matrix) -> Result<Matrix> {
    let mut out = x.clone();
    for j in 0..x.ncols() {
        let mean = x.column(j).mean();
        let mut col = out.column_mut(j);
        col.add_scalar_mut(-mean);
        let norm = col.norm();
        if !(norm > 0.0) {
            return Err(Error::Data(format!("column {j} is constant")));
        }
        col /= norm;
    }
    Ok(out)
}

/// Loads the diabetes data: 442 rows, ten predictors followed by the
/// response. Predictors are centered and scaled to unit norm and the
/// response is centered.
pub fn load_diabetes(path: &Path) -> Result<Dataset> {
    let (header, rows) = read_numeric_csv(path)?;
    if header.len() != 11 {
        return Err(Error::Data(format!(
            "expected 10 predictors and a response, found {} columns",
            header.len()
        )));
    }
    if rows.len() != 442 {
        return Err(Error::Data(format!("expected 442 rows, found {}", rows.len())));
    }
    let n = rows.len();
    let raw = Matrix::from_fn(n, 10, |i, j| rows[i][j]);
    let x = standardize_design(&raw)?;
    let y_raw = Vector::from_fn(n, |i, _| rows[i][10]);
    let y = y_raw.add_scalar(-y_raw.mean());
    Ok(Dataset {
        x,
        y,
        names: header[..10].to_vec(),
    })
}
