//! Diagonal Gaussian proposal `q_phi`.

use serde::{Deserialize, Serialize};

use crate::error::{ensure_finite, Error, Result};
use crate::numerics::{RngStream, Vector, LN_2PI};
use crate::trainer::Adam;

/// Log-variances are clipped to this range before use.
pub const LOG_VAR_BOUND: f64 = 60.0;

/// Mean and log-variance of a diagonal Gaussian.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VariationalParams {
    pub mean: Vector,
    pub log_var: Vector,
}

impl VariationalParams {
    pub fn new(mean: Vector, log_var: Vector) -> Result<Self> {
        if mean.len() != log_var.len() {
            return Err(Error::DimensionMismatch(format!(
                "mean has {} entries, log-variance has {}",
                mean.len(),
                log_var.len()
            )));
        }
        if mean.is_empty() {
            return Err(Error::Empty("variational parameters".into()));
        }
        ensure_finite("variational mean", mean.as_slice())?;
        ensure_finite("variational log-variance", log_var.as_slice())?;
        let log_var = log_var.map(|v| v.clamp(-LOG_VAR_BOUND, LOG_VAR_BOUND));
        Ok(Self { mean, log_var })
    }

    /// Zero mean and unit variance.
    pub fn standard(dim: usize) -> Self {
        Self {
            mean: Vector::zeros(dim),
            log_var: Vector::zeros(dim),
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn sd(&self) -> Vector {
        self.log_var.map(|v| (0.5 * v).exp())
    }

    pub fn variance(&self) -> Vector {
        self.log_var.map(f64::exp)
    }

    /// Flattened `[mean, log_var]`.
    pub fn to_flat(&self) -> Vec<f64> {
        self.mean.iter().chain(self.log_var.iter()).copied().collect()
    }

    pub fn from_flat(flat: &[f64]) -> Result<Self> {
        if flat.len() % 2 != 0 {
            return Err(Error::DimensionMismatch("flat parameter length must be even".into()));
        }
        let d = flat.len() / 2;
        Self::new(
            Vector::from_column_slice(&flat[..d]),
            Vector::from_column_slice(&flat[d..]),
        )
    }

    /// `z = mean + sd * eps` for a given standard normal vector.
    pub fn reparam(&self, eps: &Vector) -> Vector {
        &self.mean + self.sd().component_mul(eps)
    }

    pub fn entropy(&self) -> f64 {
        0.5 * self.dim() as f64 * (1.0 + LN_2PI) + 0.5 * self.log_var.sum()
    }
}

/// A draw from `q_phi` together with the standard normal noise behind it.
#[derive(Clone, Debug)]
pub struct ProposalDraw {
    pub z: Vector,
    pub eps: Vector,
}

pub fn q_sample_one(phi: &VariationalParams, rng: &mut RngStream) -> ProposalDraw {
    let eps = Vector::from_vec(rng.normals(phi.dim()));
    ProposalDraw { z: phi.reparam(&eps), eps }
}

/// `count` independent draws from a single stream.
pub fn q_sample(phi: &VariationalParams, count: usize, rng: &mut RngStream) -> Vec<ProposalDraw> {
    (0..count).map(|_| q_sample_one(phi, rng)).collect()
}

fn check_dim(phi: &VariationalParams, z: &Vector) -> Result<()> {
    if z.len() != phi.dim() {
        return Err(Error::DimensionMismatch(format!(
            "point has {} coordinates, proposal has {}",
            z.len(),
            phi.dim()
        )));
    }
    Ok(())
}

pub fn q_logpdf(phi: &VariationalParams, z: &Vector) -> Result<f64> {
    check_dim(phi, z)?;
    let mut acc = -0.5 * phi.dim() as f64 * LN_2PI;
    for i in 0..phi.dim() {
        let lv = phi.log_var[i];
        let r = z[i] - phi.mean[i];
        acc -= 0.5 * (lv + r * r * (-lv).exp());
    }
    Ok(acc)
}

/// Gradient of `log q_phi(z)` with respect to `z`.
pub fn q_grad_z(phi: &VariationalParams, z: &Vector) -> Vector {
    Vector::from_fn(phi.dim(), |i, _| -(z[i] - phi.mean[i]) * (-phi.log_var[i]).exp())
}

/// Gradient of `log q_phi(z)` with respect to the flattened parameters.
pub fn q_grad_params(phi: &VariationalParams, z: &Vector) -> Vec<f64> {
    let d = phi.dim();
    let mut g = vec![0.0; 2 * d];
    for i in 0..d {
        let prec = (-phi.log_var[i]).exp();
        let r = z[i] - phi.mean[i];
        g[i] = r * prec;
        g[d + i] = -0.5 + 0.5 * r * r * prec;
    }
    g
}

/// Average cross-entropy `-mean log q_phi(z)` over `samples` and its
/// gradient in flattened parameter order.
pub fn cross_entropy(phi: &VariationalParams, samples: &[Vector]) -> Result<(f64, Vec<f64>)> {
    if samples.is_empty() {
        return Err(Error::Empty("cross-entropy samples".into()));
    }
    let mut value = 0.0;
    let mut grad = vec![0.0; 2 * phi.dim()];
    for z in samples {
        value -= q_logpdf(phi, z)?;
        for (g, gi) in grad.iter_mut().zip(q_grad_params(phi, z)) {
            *g -= gi;
        }
    }
    let n = samples.len() as f64;
    grad.iter_mut().for_each(|g| *g /= n);
    Ok((value / n, grad))
}

/// One Adam step on the cross-entropy of `q_phi` to `samples`.
pub fn cross_entropy_step(
    phi: &VariationalParams,
    opt: &mut Adam,
    samples: &[Vector],
) -> Result<VariationalParams> {
    let (_, grad) = cross_entropy(phi, samples)?;
    let mut flat = phi.to_flat();
    opt.step(&mut flat, &grad)?;
    VariationalParams::from_flat(&flat)
}

/// Moment-matched diagonal Gaussian, the exact minimizer of the cross-entropy.
pub fn moment_match(samples: &[Vector]) -> Result<VariationalParams> {
    if samples.len() < 2 {
        return Err(Error::Empty("moment matching needs at least two samples".into()));
    }
    let d = samples[0].len();
    let n = samples.len() as f64;
    let mut mean = Vector::zeros(d);
    for z in samples {
        mean += z;
    }
    mean /= n;
    let mut var = Vector::zeros(d);
    for z in samples {
        var += (z - &mean).map(|v| v * v);
    }
    var /= n;
    VariationalParams::new(mean, var.map(|v| v.max(1e-300).ln()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::finite_diff_grad;
    use crate::trainer::AdamConfig;

    #[test]
    fn standard_normal_logpdf_at_origin() {
        let phi = VariationalParams::standard(2);
        let v = q_logpdf(&phi, &Vector::zeros(2)).unwrap();
        assert!((v - (-1.837_877_066_409_345_5)).abs() < 1e-12);
    }

    #[test]
    fn logpdf_rejects_wrong_dimension() {
        let phi = VariationalParams::standard(2);
        assert!(q_logpdf(&phi, &Vector::zeros(3)).is_err());
    }

    #[test]
    fn log_variance_is_clipped() {
        let phi = VariationalParams::new(Vector::zeros(1), Vector::from_element(1, 1e4)).unwrap();
        assert_eq!(phi.log_var[0], LOG_VAR_BOUND);
    }

    #[test]
    fn sample_moments() {
        let phi = VariationalParams::new(
            Vector::from_vec(vec![1.0, -2.0]),
            Vector::from_vec(vec![0.0, (0.25f64).ln()]),
        )
        .unwrap();
        let mut rng = RngStream::new(5, 0);
        let draws = q_sample(&phi, 100_000, &mut rng);
        let zs: Vec<Vector> = draws.into_iter().map(|d| d.z).collect();
        let fit = moment_match(&zs).unwrap();
        assert!((fit.mean[0] - 1.0).abs() < 0.02);
        assert!((fit.mean[1] + 2.0).abs() < 0.01);
        assert!((fit.variance()[1] - 0.25).abs() < 0.01);
    }

    #[test]
    fn parameter_gradient_matches_finite_differences() {
        let phi = VariationalParams::new(
            Vector::from_vec(vec![0.3, -0.4]),
            Vector::from_vec(vec![0.2, -0.7]),
        )
        .unwrap();
        let z = Vector::from_vec(vec![1.1, 0.5]);
        let fd = finite_diff_grad(
            |p| q_logpdf(&VariationalParams::from_flat(p)?, &z),
            &phi.to_flat(),
            1e-6,
        )
        .unwrap();
        let an = q_grad_params(&phi, &z);
        for (a, b) in an.iter().zip(&fd) {
            assert!((a - b).abs() < 1e-8);
        }
    }

    #[test]
    fn cross_entropy_steps_move_toward_target() {
        let mut phi = VariationalParams::standard(1);
        let samples: Vec<Vector> = (0..50).map(|i| Vector::from_element(1, 3.0 + 0.01 * i as f64)).collect();
        let mut opt = Adam::new(AdamConfig { lr: 0.05, ..AdamConfig::default() }, 2);
        let before = cross_entropy(&phi, &samples).unwrap().0;
        for _ in 0..100 {
            phi = cross_entropy_step(&phi, &mut opt, &samples).unwrap();
        }
        let after = cross_entropy(&phi, &samples).unwrap().0;
        assert!(after < before);
        assert!(phi.mean[0] > 2.0);
    }
}
