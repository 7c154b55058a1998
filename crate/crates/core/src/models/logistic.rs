use super::{check_point, resolve_batch, Batch, TargetModel};
use crate::error::{Error, Result};
use crate::numerics::{cholesky, sigmoid, softplus, Matrix, RngStream, Vector, LN_2PI};

/// Bayesian logistic regression with a standard normal prior on the
/// coefficients.
#[derive(Clone, Debug)]
pub struct LogisticModel {
    pub x: Matrix,
    pub y: Vector,
}

impl LogisticModel {
    pub fn new(x: Matrix, y: Vector) -> Result<Self> {
        if x.nrows() != y.len() {
            return Err(Error::DimensionMismatch(format!(
                "design has {} rows, response has {} entries",
                x.nrows(),
                y.len()
            )));
        }
        if x.ncols() == 0 {
            return Err(Error::Empty("design has no columns".into()));
        }
        if y.iter().any(|&v| v != 0.0 && v != 1.0) {
            return Err(Error::Data("logistic responses must be 0 or 1".into()));
        }
        Ok(Self { x, y })
    }

    /// Correlated Gaussian covariates (unit variances, corr(x1, x2) = -0.8,
    /// corr(x3, x4) = 0.9) and Bernoulli responses with coefficients
    /// (-2, -1, 1, 2).
    pub fn simulate(n: usize, rng: &mut RngStream) -> Result<Self> {
        let mut cov = Matrix::identity(4, 4);
        cov[(0, 1)] = -0.8;
        cov[(1, 0)] = -0.8;
        cov[(2, 3)] = 0.9;
        cov[(3, 2)] = 0.9;
        let l = cholesky(&cov)?;
        let beta = Vector::from_vec(vec![-2.0, -1.0, 1.0, 2.0]);
        let mut x = Matrix::zeros(n, 4);
        let mut y = Vector::zeros(n);
        for i in 0..n {
            let xi = &l * Vector::from_vec(rng.normals(4));
            x.set_row(i, &xi.transpose());
            y[i] = if rng.uniform() < sigmoid(xi.dot(&beta)) { 1.0 } else { 0.0 };
        }
        Self::new(x, y)
    }

    pub fn n_features(&self) -> usize {
        self.x.ncols()
    }

    /// `y - 1/2`, the linear coefficient in the Polya-Gamma augmentation.
    pub fn kappa(&self) -> Vector {
        self.y.map(|v| v - 0.5)
    }

    fn prior_terms(&self, z: &Vector) -> f64 {
        -0.5 * z.norm_squared() - 0.5 * z.len() as f64 * LN_2PI
    }
}

impl TargetModel for LogisticModel {
    fn dim(&self) -> usize {
        self.x.ncols()
    }

    fn n_data(&self) -> usize {
        self.x.nrows()
    }

    fn variable_names(&self) -> Vec<String> {
        (1..=self.dim()).map(|i| format!("beta{i}")).collect()
    }

    fn log_joint(&self, z: &Vector, batch: Batch) -> Result<f64> {
        check_point(self.dim(), z)?;
        let mut lik = 0.0;
        let scale = match batch {
            None => {
                let psi = &self.x * z;
                for (p, y) in psi.iter().zip(self.y.iter()) {
                    lik += y * p - softplus(*p);
                }
                1.0
            }
            Some(_) => {
                let (idx, scale) = resolve_batch(self.n_data(), batch)?;
                for i in idx {
                    let p = self.x.row(i).transpose().dot(z);
                    lik += self.y[i] * p - softplus(p);
                }
                scale
            }
        };
        Ok(scale * lik + self.prior_terms(z))
    }

    fn grad_z(&self, z: &Vector, batch: Batch) -> Result<Vector> {
        check_point(self.dim(), z)?;
        match batch {
            None => {
                let psi = &self.x * z;
                let resid = Vector::from_fn(psi.len(), |i, _| self.y[i] - sigmoid(psi[i]));
                Ok(self.x.tr_mul(&resid) - z)
            }
            Some(_) => {
                let (idx, scale) = resolve_batch(self.n_data(), batch)?;
                let mut g = -z.clone();
                for i in idx {
                    let row = self.x.row(i).transpose();
                    g += &row * (scale * (self.y[i] - sigmoid(row.dot(z))));
                }
                Ok(g)
            }
        }
    }

    fn hvp(&self, z: &Vector, v: &Vector, batch: Batch) -> Result<Vector> {
        check_point(self.dim(), z)?;
        check_point(self.dim(), v)?;
        match batch {
            None => {
                let psi = &self.x * z;
                let xv = &self.x * v;
                let w = Vector::from_fn(psi.len(), |i, _| {
                    let s = sigmoid(psi[i]);
                    s * (1.0 - s) * xv[i]
                });
                Ok(-self.x.tr_mul(&w) - v)
            }
            Some(_) => {
                let (idx, scale) = resolve_batch(self.n_data(), batch)?;
                let mut h = -v.clone();
                for i in idx {
                    let row = self.x.row(i).transpose();
                    let s = sigmoid(row.dot(z));
                    h -= &row * (scale * s * (1.0 - s) * row.dot(v));
                }
                Ok(h)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::testing::check_derivatives;
    use crate::numerics::Dist;

    fn model() -> LogisticModel {
        let mut rng = RngStream::new(9, 0);
        LogisticModel::simulate(60, &mut rng).unwrap()
    }

    #[test]
    fn zero_coefficients_give_half_likelihoods() {
        let m = model();
        let v = m.log_joint(&Vector::zeros(4), None).unwrap();
        let expected = 60.0 * 0.5f64.ln() - 2.0 * LN_2PI;
        assert!((v - expected).abs() < 1e-10);
    }

    #[test]
    fn derivatives_match_finite_differences() {
        let m = model();
        for z in [[0.1, -0.3, 0.2, 0.5], [-2.0, -1.0, 1.0, 2.0]] {
            let z = Vector::from_vec(z.to_vec());
            check_derivatives(&m, &z, None, 1e-6);
            check_derivatives(&m, &z, Some(&[0, 5, 7, 30, 59]), 1e-6);
        }
    }

    #[test]
    fn rejects_non_binary_response() {
        let x = Matrix::zeros(2, 1);
        assert!(LogisticModel::new(x, Vector::from_vec(vec![0.0, 0.5])).is_err());
    }

    #[test]
    fn polya_gamma_identity_for_scalar_tilt() {
        // sigma(psi)^y (1 - sigma(psi))^(1-y) = 2^{-1} e^{kappa psi} E[exp(-omega psi^2 / 2)]
        // with omega ~ PG(1, 0).
        let psi: f64 = 1.3;
        let mut rng = RngStream::new(17, 0);
        let draws = Dist::PolyaGamma { c: 0.0 }.sample_n(200_000, &mut rng).unwrap();
        let vals: Vec<f64> = draws.iter().map(|w| (-w * psi * psi / 2.0).exp()).collect();
        let n = vals.len() as f64;
        let mean = vals.iter().sum::<f64>() / n;
        let sd = (vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
        let mc = 0.5 * (0.5 * psi).exp() * mean;
        let exact = sigmoid(psi);
        assert!((mc - exact).abs() < 4.0 * 0.5 * (0.5 * psi).exp() * sd / n.sqrt());
    }

    #[test]
    fn simulated_design_has_requested_correlations() {
        let mut rng = RngStream::new(1, 2);
        let m = LogisticModel::simulate(20_000, &mut rng).unwrap();
        let col = |j: usize| m.x.column(j).into_owned();
        let corr = |a: &Vector, b: &Vector| {
            let (ma, mb) = (a.mean(), b.mean());
            let ca = a.map(|v| v - ma);
            let cb = b.map(|v| v - mb);
            ca.dot(&cb) / (ca.norm() * cb.norm())
        };
        assert!((corr(&col(0), &col(1)) + 0.8).abs() < 0.02);
        assert!((corr(&col(2), &col(3)) - 0.9).abs() < 0.02);
    }
}
