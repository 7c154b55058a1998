use crate::error::{ensure_finite, Error, Result};

/// Central-difference gradient of a scalar function with per-coordinate step
/// `h_rel * (|x_i| + 1)`.
pub fn finite_diff_grad<F>(f: F, x: &[f64], h_rel: f64) -> Result<Vec<f64>>
where
    F: Fn(&[f64]) -> Result<f64>,
{
    if !(h_rel > 0.0) {
        return Err(Error::InvalidParameter(format!("step must be positive, got {h_rel}")));
    }
    ensure_finite("finite-difference point", x)?;
    let mut point = x.to_vec();
    let mut grad = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        let h = h_rel * (x[i].abs() + 1.0);
        point[i] = x[i] + h;
        let up = f(&point)?;
        point[i] = x[i] - h;
        let down = f(&point)?;
        point[i] = x[i];
        let g = (up - down) / (2.0 * h);
        if !g.is_finite() {
            return Err(Error::NonFinite(format!("finite difference in coordinate {i}")));
        }
        grad.push(g);
    }
    Ok(grad)
}

/// Central-difference directional derivative of a vector-valued function.
pub fn fd_directional<F>(f: F, x: &[f64], dir: &[f64], h: f64) -> Result<Vec<f64>>
where
    F: Fn(&[f64]) -> Result<Vec<f64>>,
{
    if x.len() != dir.len() {
        return Err(Error::DimensionMismatch("direction length".into()));
    }
    let up: Vec<f64> = x.iter().zip(dir).map(|(a, d)| a + h * d).collect();
    let down: Vec<f64> = x.iter().zip(dir).map(|(a, d)| a - h * d).collect();
    let (fu, fd) = (f(&up)?, f(&down)?);
    Ok(fu.iter().zip(&fd).map(|(a, b)| (a - b) / (2.0 * h)).collect())
}

/// Normwise relative error `|a - b| / max(|a|, |b|)` in the Euclidean norm.
/// Two zero vectors have error zero.
pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    let diff = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    let scale = na.max(nb);
    if scale == 0.0 {
        0.0
    } else {
        diff / scale
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_gradient() {
        let g = finite_diff_grad(|x| Ok(x[0] * x[0] + 3.0 * x[0] * x[1]), &[1.0, 2.0], 1e-5).unwrap();
        assert!((g[0] - 8.0).abs() < 1e-6);
        assert!((g[1] - 3.0).abs() < 1e-6);
    }

    #[test]
    fn reports_non_finite() {
        let r = finite_diff_grad(|x| Ok(if x[0] > 0.0 { f64::INFINITY } else { 0.0 }), &[0.0], 1e-5);
        assert!(matches!(r, Err(Error::NonFinite(_))));
    }

    #[test]
    fn relative_error_basics() {
        assert_eq!(relative_error(&[0.0], &[0.0]), 0.0);
        assert!((relative_error(&[1.0, 0.0], &[1.1, 0.0]) - 0.1 / 1.1).abs() < 1e-15);
    }
}
