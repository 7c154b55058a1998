use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{cholesky, Matrix, Vector};

pub const MIN_SUMMARY_ROWS: usize = 100;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PosteriorSummary {
    pub names: Vec<String>,
    pub mean: Vec<f64>,
    pub sd: Vec<f64>,
    pub q025: Vec<f64>,
    pub q975: Vec<f64>,
    pub corr: Matrix,
}

/// Linear-interpolation quantile of sorted data (the "type 7" rule).
fn quantile_sorted(sorted: &[f64], prob: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * prob;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Sample mean and covariance (divisor `n - 1`).
pub fn sample_moments(samples: &[Vector]) -> Result<(Vector, Matrix)> {
    let n = samples.len();
    if n < 2 {
        return Err(Error::Empty("moments need at least two samples".into()));
    }
    let d = samples[0].len();
    if samples.iter().any(|s| s.len() != d) {
        return Err(Error::DimensionMismatch("samples have different lengths".into()));
    }
    let mut mean = Vector::zeros(d);
    for s in samples {
        mean += s;
    }
    mean /= n as f64;
    let mut cov = Matrix::zeros(d, d);
    for s in samples {
        let r = s - &mean;
        cov += &r * r.transpose();
    }
    cov /= (n - 1) as f64;
    Ok((mean, cov))
}

/// Per-variable mean, standard deviation, 95% interval and pairwise correlations.
pub fn summarize(names: &[String], samples: &[Vector]) -> Result<PosteriorSummary> {
    if samples.len() < MIN_SUMMARY_ROWS {
        return Err(Error::Empty(format!(
            "summaries need at least {MIN_SUMMARY_ROWS} rows, got {}",
            samples.len()
        )));
    }
    let d = names.len();
    if samples.iter().any(|s| s.len() != d) {
        return Err(Error::DimensionMismatch(format!("expected {d} columns")));
    }
    if samples.iter().any(|s| s.iter().any(|v| !v.is_finite())) {
        return Err(Error::NonFinite("sample table".into()));
    }
    let (mean, cov) = sample_moments(samples)?;
    let sd: Vec<f64> = (0..d).map(|j| cov[(j, j)].max(0.0).sqrt()).collect();
    let mut q025 = Vec::with_capacity(d);
    let mut q975 = Vec::with_capacity(d);
    for j in 0..d {
        let mut col: Vec<f64> = samples.iter().map(|s| s[j]).collect();
        col.sort_by(f64::total_cmp);
        q025.push(quantile_sorted(&col, 0.025));
        q975.push(quantile_sorted(&col, 0.975));
    }
    let corr = Matrix::from_fn(d, d, |i, j| {
        if i == j {
            1.0
        } else if sd[i] > 0.0 && sd[j] > 0.0 {
            (cov[(i, j)] / (sd[i] * sd[j])).clamp(-1.0, 1.0)
        } else {
            0.0
        }
    });
    Ok(PosteriorSummary {
        names: names.to_vec(),
        mean: mean.iter().copied().collect(),
        sd,
        q025,
        q975,
        corr,
    })
}

/// Standard error of the mean of a correlated series from `batches`
/// non-overlapping batch means. Trailing values that do not fill a batch
/// are dropped.
pub fn batch_means_se(series: &[f64], batches: usize) -> Result<f64> {
    if batches < 2 || series.len() < 2 * batches {
        return Err(Error::Empty("batch means need at least two batches of two values".into()));
    }
    let size = series.len() / batches;
    let means: Vec<f64> = (0..batches)
        .map(|b| series[b * size..(b + 1) * size].iter().sum::<f64>() / size as f64)
        .collect();
    let grand = means.iter().sum::<f64>() / batches as f64;
    let var = means.iter().map(|m| (m - grand).powi(2)).sum::<f64>() / (batches - 1) as f64;
    Ok((var / batches as f64).sqrt())
}

/// `sqrt((a - b)^T cov^{-1} (a - b))`.
pub fn mahalanobis(a: &Vector, b: &Vector, cov: &Matrix) -> Result<f64> {
    if a.len() != b.len() || cov.nrows() != a.len() {
        return Err(Error::DimensionMismatch("Mahalanobis distance operands".into()));
    }
    let l = cholesky(cov)?;
    let w = l
        .solve_lower_triangular(&(a - b))
        .ok_or_else(|| Error::NotPositiveDefinite { index: 0, pivot: 0.0 })?;
    Ok(w.norm())
}

/// Length of the intersection of two intervals relative to the longer one.
pub fn ci_overlap(a: (f64, f64), b: (f64, f64)) -> f64 {
    let inter = (a.1.min(b.1) - a.0.max(b.0)).max(0.0);
    let longest = (a.1 - a.0).max(b.1 - b.0);
    if longest <= 0.0 {
        return if a == b { 1.0 } else { 0.0 };
    }
    inter / longest
}
