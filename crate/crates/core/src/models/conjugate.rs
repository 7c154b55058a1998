use super::{check_point, resolve_batch, Batch, TargetModel};
use crate::error::{Error, Result};
use crate::numerics::{Matrix, Vector, LN_2PI};

/// Gaussian location model with a Gaussian prior:
/// `x_i ~ N(z, s^2 I)`, `z ~ N(0, tau^2 I)`.
///
/// The likelihood scale enters as the learnable hyperparameter
/// `theta = log s`, which makes this the reference model for
/// hyperparameter gradients. Its evidence is available in closed form.
#[derive(Clone, Debug)]
pub struct ConjugateGaussian {
    /// Observations as rows.
    pub data: Matrix,
    pub prior_sd: f64,
    log_noise_sd: f64,
}

impl ConjugateGaussian {
    pub fn new(data: Matrix, noise_sd: f64, prior_sd: f64) -> Result<Self> {
        if !(noise_sd > 0.0 && prior_sd > 0.0) {
            return Err(Error::InvalidParameter("scales must be positive".into()));
        }
        if data.ncols() == 0 {
            return Err(Error::Empty("observations have no coordinates".into()));
        }
        Ok(Self {
            data,
            prior_sd,
            log_noise_sd: noise_sd.ln(),
        })
    }

    pub fn noise_sd(&self) -> f64 {
        self.log_noise_sd.exp()
    }

    /// Exact `log p(x)`.
    pub fn log_evidence(&self) -> f64 {
        let n = self.data.nrows() as f64;
        let s2 = self.noise_sd().powi(2);
        let t2 = self.prior_sd.powi(2);
        let mut total = 0.0;
        for k in 0..self.data.ncols() {
            let col = self.data.column(k);
            let sum: f64 = col.sum();
            let sq: f64 = col.norm_squared();
            // Covariance s^2 I + t^2 11^T.
            let log_det = (n - 1.0) * s2.ln() + (s2 + n * t2).ln();
            let quad = (sq - t2 * sum * sum / (s2 + n * t2)) / s2;
            total += -0.5 * (n * LN_2PI + log_det + quad);
        }
        total
    }

    /// Exact posterior mean and (isotropic) variance of `z`.
    pub fn posterior(&self) -> (Vector, f64) {
        let n = self.data.nrows() as f64;
        let s2 = self.noise_sd().powi(2);
        let prec = 1.0 / self.prior_sd.powi(2) + n / s2;
        let mean = Vector::from_fn(self.data.ncols(), |k, _| self.data.column(k).sum() / s2 / prec);
        (mean, 1.0 / prec)
    }

    fn batch(&self, batch: Batch) -> Result<(Vec<usize>, f64)> {
        resolve_batch(self.data.nrows(), batch)
    }
}

impl TargetModel for ConjugateGaussian {
    fn dim(&self) -> usize {
        self.data.ncols()
    }

    fn n_data(&self) -> usize {
        self.data.nrows()
    }

    fn log_joint(&self, z: &Vector, batch: Batch) -> Result<f64> {
        check_point(self.dim(), z)?;
        let (idx, scale) = self.batch(batch)?;
        let d = self.dim() as f64;
        let s2 = self.noise_sd().powi(2);
        let t2 = self.prior_sd.powi(2);
        let mut lik = 0.0;
        for &i in &idx {
            let r = self.data.row(i).transpose() - z;
            lik += -0.5 * d * (LN_2PI + s2.ln()) - 0.5 * r.norm_squared() / s2;
        }
        let prior = -0.5 * d * (LN_2PI + t2.ln()) - 0.5 * z.norm_squared() / t2;
        Ok(scale * lik + prior)
    }

    fn grad_z(&self, z: &Vector, batch: Batch) -> Result<Vector> {
        check_point(self.dim(), z)?;
        let (idx, scale) = self.batch(batch)?;
        let s2 = self.noise_sd().powi(2);
        let mut g = -z / self.prior_sd.powi(2);
        for &i in &idx {
            g += (self.data.row(i).transpose() - z) * (scale / s2);
        }
        Ok(g)
    }

    fn hvp(&self, z: &Vector, v: &Vector, batch: Batch) -> Result<Vector> {
        check_point(self.dim(), z)?;
        check_point(self.dim(), v)?;
        let (idx, scale) = self.batch(batch)?;
        let s2 = self.noise_sd().powi(2);
        let c = 1.0 / self.prior_sd.powi(2) + scale * idx.len() as f64 / s2;
        Ok(-v * c)
    }

    fn theta(&self) -> Vec<f64> {
        vec![self.log_noise_sd]
    }

    fn set_theta(&mut self, theta: &[f64]) -> Result<()> {
        match theta {
            [t] if t.is_finite() => {
                self.log_noise_sd = *t;
                Ok(())
            }
            _ => Err(Error::InvalidParameter("expected one finite hyperparameter".into())),
        }
    }

    fn grad_theta(&self, z: &Vector, batch: Batch) -> Result<Vec<f64>> {
        check_point(self.dim(), z)?;
        let (idx, scale) = self.batch(batch)?;
        let d = self.dim() as f64;
        let s2 = self.noise_sd().powi(2);
        let mut g = 0.0;
        for &i in &idx {
            let r = self.data.row(i).transpose() - z;
            g += -d + r.norm_squared() / s2;
        }
        Ok(vec![scale * g])
    }

    fn grad_z_theta_vjp(&self, z: &Vector, w: &Vector, batch: Batch) -> Result<Vec<f64>> {
        check_point(self.dim(), z)?;
        let (idx, scale) = self.batch(batch)?;
        let s2 = self.noise_sd().powi(2);
        let mut acc = 0.0;
        for &i in &idx {
            acc += w.dot(&(self.data.row(i).transpose() - z));
        }
        Ok(vec![-2.0 * scale * acc / s2])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::testing::check_derivatives;
    use crate::numerics::finite_diff_grad;

    fn model() -> ConjugateGaussian {
        let data = Matrix::from_row_slice(5, 2, &[0.3, 1.0, -0.2, 0.8, 0.9, 1.4, 0.1, 0.5, 0.4, 1.1]);
        ConjugateGaussian::new(data, 0.8, 2.0).unwrap()
    }

    #[test]
    fn derivatives_match_finite_differences() {
        let m = model();
        check_derivatives(&m, &Vector::from_vec(vec![0.2, 0.7]), None, 1e-6);
        check_derivatives(&m, &Vector::from_vec(vec![0.2, 0.7]), Some(&[1, 3]), 1e-6);
    }

    #[test]
    fn evidence_matches_bayes_rule_identity() {
        // log p(x) = log p(x, z) - log p(z | x) at any z.
        let m = model();
        let (mean, var) = m.posterior();
        let z = Vector::from_vec(vec![0.1, -0.4]);
        let d = 2.0;
        let log_post = -0.5 * d * (LN_2PI + var.ln()) - 0.5 * (&z - &mean).norm_squared() / var;
        let identity = m.log_joint(&z, None).unwrap() - log_post;
        assert!((identity - m.log_evidence()).abs() < 1e-10);
    }

    #[test]
    fn hyperparameter_gradients_match_finite_differences() {
        let m = model();
        let z = Vector::from_vec(vec![0.2, 0.7]);
        let w = Vector::from_vec(vec![0.5, -1.5]);
        let fd = finite_diff_grad(
            |t| {
                let mut mm = m.clone();
                mm.set_theta(t)?;
                mm.log_joint(&z, None)
            },
            &m.theta(),
            1e-6,
        )
        .unwrap();
        assert!((m.grad_theta(&z, None).unwrap()[0] - fd[0]).abs() < 1e-7);
        let fd = finite_diff_grad(
            |t| {
                let mut mm = m.clone();
                mm.set_theta(t)?;
                Ok(w.dot(&mm.grad_z(&z, None)?))
            },
            &m.theta(),
            1e-6,
        )
        .unwrap();
        assert!((m.grad_z_theta_vjp(&z, &w, None).unwrap()[0] - fd[0]).abs() < 1e-6);
    }
}
