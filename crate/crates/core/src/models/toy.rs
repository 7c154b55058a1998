use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{check_point, Batch, TargetModel};
use crate::error::{Error, Result};
use crate::numerics::{log_sum_exp, spd_inverse, Matrix, RngStream, Vector, LN_2PI};

/// Multivariate normal log-density.
#[derive(Clone, Debug)]
pub struct GaussianTarget {
    pub mean: Vector,
    pub cov: Matrix,
    prec: Matrix,
    chol: Matrix,
    log_norm: f64,
}

impl GaussianTarget {
    pub fn new(mean: Vector, cov: Matrix) -> Result<Self> {
        if cov.nrows() != mean.len() {
            return Err(Error::DimensionMismatch("covariance and mean sizes differ".into()));
        }
        let (prec, chol) = spd_inverse(&cov)?;
        let log_det: f64 = chol.diagonal().iter().map(|v| 2.0 * v.ln()).sum();
        let log_norm = -0.5 * (mean.len() as f64 * LN_2PI + log_det);
        Ok(Self {
            mean,
            cov,
            prec,
            chol,
            log_norm,
        })
    }

    pub fn log_pdf(&self, z: &Vector) -> f64 {
        let r = z - &self.mean;
        self.log_norm - 0.5 * r.dot(&(&self.prec * &r))
    }

    pub fn grad(&self, z: &Vector) -> Vector {
        -(&self.prec * (z - &self.mean))
    }

    pub fn hvp(&self, v: &Vector) -> Vector {
        -(&self.prec * v)
    }

    pub fn sample(&self, rng: &mut RngStream) -> Vector {
        let xi = Vector::from_vec(rng.normals(self.mean.len()));
        &self.mean + &self.chol * xi
    }
}

impl TargetModel for GaussianTarget {
    fn dim(&self) -> usize {
        self.mean.len()
    }

    fn log_joint(&self, z: &Vector, _batch: Batch) -> Result<f64> {
        check_point(self.dim(), z)?;
        Ok(self.log_pdf(z))
    }

    fn grad_z(&self, z: &Vector, _batch: Batch) -> Result<Vector> {
        check_point(self.dim(), z)?;
        Ok(self.grad(z))
    }

    fn hvp(&self, z: &Vector, v: &Vector, _batch: Batch) -> Result<Vector> {
        check_point(self.dim(), z)?;
        check_point(self.dim(), v)?;
        Ok(GaussianTarget::hvp(self, v))
    }
}

/// Finite mixture of Gaussians.
#[derive(Clone, Debug)]
pub struct MixtureTarget {
    pub log_weights: Vec<f64>,
    pub components: Vec<GaussianTarget>,
}

impl MixtureTarget {
    pub fn new(weights: &[f64], components: Vec<GaussianTarget>) -> Result<Self> {
        if weights.len() != components.len() || weights.is_empty() {
            return Err(Error::DimensionMismatch("mixture weights and components".into()));
        }
        let total: f64 = weights.iter().sum();
        if weights.iter().any(|&w| !(w > 0.0)) {
            return Err(Error::InvalidParameter("mixture weights must be positive".into()));
        }
        Ok(Self {
            log_weights: weights.iter().map(|w| (w / total).ln()).collect(),
            components,
        })
    }

    fn component_logs(&self, z: &Vector) -> Vec<f64> {
        self.log_weights
            .iter()
            .zip(&self.components)
            .map(|(lw, c)| lw + c.log_pdf(z))
            .collect()
    }

    /// Posterior component probabilities at `z`.
    pub fn responsibilities(&self, z: &Vector) -> Vec<f64> {
        let logs = self.component_logs(z);
        let lse = log_sum_exp(&logs);
        logs.iter().map(|l| (l - lse).exp()).collect()
    }

    pub fn log_pdf(&self, z: &Vector) -> f64 {
        log_sum_exp(&self.component_logs(z))
    }

    pub fn grad(&self, z: &Vector) -> Vector {
        let w = self.responsibilities(z);
        let mut g = Vector::zeros(z.len());
        for (wk, c) in w.iter().zip(&self.components) {
            g += c.grad(z) * *wk;
        }
        g
    }

    /// `H v` with `H = sum_k w_k (g_k g_k^T - P_k) - g g^T`.
    pub fn hvp(&self, z: &Vector, v: &Vector) -> Vector {
        let w = self.responsibilities(z);
        let gbar = self.grad(z);
        let mut out = -&gbar * gbar.dot(v);
        for (wk, c) in w.iter().zip(&self.components) {
            let gk = c.grad(z);
            out += (&gk * gk.dot(v) + c.hvp(v)) * *wk;
        }
        out
    }

    pub fn sample(&self, rng: &mut RngStream) -> Vector {
        let u = rng.uniform();
        let mut acc = 0.0;
        for (lw, c) in self.log_weights.iter().zip(&self.components) {
            acc += lw.exp();
            if u < acc {
                return c.sample(rng);
            }
        }
        self.components.last().unwrap().sample(rng)
    }
}

impl TargetModel for MixtureTarget {
    fn dim(&self) -> usize {
        self.components[0].mean.len()
    }

    fn log_joint(&self, z: &Vector, _batch: Batch) -> Result<f64> {
        check_point(self.dim(), z)?;
        Ok(self.log_pdf(z))
    }

    fn grad_z(&self, z: &Vector, _batch: Batch) -> Result<Vector> {
        check_point(self.dim(), z)?;
        Ok(self.grad(z))
    }

    fn hvp(&self, z: &Vector, v: &Vector, _batch: Batch) -> Result<Vector> {
        check_point(self.dim(), z)?;
        check_point(self.dim(), v)?;
        Ok(MixtureTarget::hvp(self, z, v))
    }
}

/// The two-dimensional benchmark targets.
#[derive(Clone, Debug)]
pub enum Toy2d {
    /// Zero-mean Gaussian with unit variances and correlation 0.8.
    CorrelatedGaussian(GaussianTarget),
    /// `N(z1; z2^2/4, 1) N(z2; 0, 4)`.
    Banana,
    /// Equal-weight mixture of two correlated Gaussians.
    Mixture(MixtureTarget),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Toy2dKind {
    CorrelatedGaussian,
    Banana,
    Mixture,
}

impl FromStr for Toy2dKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "correlated-gaussian" | "gaussian" => Ok(Self::CorrelatedGaussian),
            "banana" => Ok(Self::Banana),
            "mixture" => Ok(Self::Mixture),
            other => Err(Error::InvalidParameter(format!("unknown toy target '{other}'"))),
        }
    }
}

fn cov2(v1: f64, c: f64, v2: f64) -> Matrix {
    Matrix::from_row_slice(2, 2, &[v1, c, c, v2])
}

impl Toy2d {
    pub fn new(kind: Toy2dKind) -> Self {
        match kind {
            Toy2dKind::CorrelatedGaussian => Toy2d::CorrelatedGaussian(
                GaussianTarget::new(Vector::zeros(2), cov2(1.0, 0.8, 1.0)).expect("valid covariance"),
            ),
            Toy2dKind::Banana => Toy2d::Banana,
            Toy2dKind::Mixture => {
                let a = GaussianTarget::new(Vector::from_vec(vec![-1.0, -1.0]), cov2(1.0, -0.5, 1.0));
                let b = GaussianTarget::new(Vector::from_vec(vec![1.3, 1.3]), cov2(1.0, 0.3, 1.0));
                Toy2d::Mixture(
                    MixtureTarget::new(&[0.5, 0.5], vec![a.expect("valid"), b.expect("valid")])
                        .expect("valid mixture"),
                )
            }
        }
    }

    pub fn kind(&self) -> Toy2dKind {
        match self {
            Toy2d::CorrelatedGaussian(_) => Toy2dKind::CorrelatedGaussian,
            Toy2d::Banana => Toy2dKind::Banana,
            Toy2d::Mixture(_) => Toy2dKind::Mixture,
        }
    }

    /// Exact draw from the (normalized) target.
    pub fn sample(&self, rng: &mut RngStream) -> Vector {
        match self {
            Toy2d::CorrelatedGaussian(g) => g.sample(rng),
            Toy2d::Banana => {
                let z2 = 2.0 * rng.normal();
                let z1 = z2 * z2 / 4.0 + rng.normal();
                Vector::from_vec(vec![z1, z2])
            }
            Toy2d::Mixture(m) => m.sample(rng),
        }
    }

    /// Index of the most responsible mixture component; 0 for the other
    /// targets.
    pub fn mode_of(&self, z: &Vector) -> usize {
        match self {
            Toy2d::Mixture(m) => {
                let r = m.responsibilities(z);
                if r[1] > r[0] {
                    1
                } else {
                    0
                }
            }
            _ => 0,
        }
    }
}

fn banana_parts(z: &Vector) -> (f64, f64, f64) {
    let (z1, z2) = (z[0], z[1]);
    (z1, z2, z1 - z2 * z2 / 4.0)
}

impl TargetModel for Toy2d {
    fn dim(&self) -> usize {
        2
    }

    fn log_joint(&self, z: &Vector, _batch: Batch) -> Result<f64> {
        check_point(2, z)?;
        Ok(match self {
            Toy2d::CorrelatedGaussian(g) => g.log_pdf(z),
            Toy2d::Banana => {
                let (_, z2, r) = banana_parts(z);
                -0.5 * r * r - z2 * z2 / 8.0 - LN_2PI - 2f64.ln()
            }
            Toy2d::Mixture(m) => m.log_pdf(z),
        })
    }

    fn grad_z(&self, z: &Vector, _batch: Batch) -> Result<Vector> {
        check_point(2, z)?;
        Ok(match self {
            Toy2d::CorrelatedGaussian(g) => g.grad(z),
            Toy2d::Banana => {
                let (_, z2, r) = banana_parts(z);
                Vector::from_vec(vec![-r, 0.5 * r * z2 - 0.25 * z2])
            }
            Toy2d::Mixture(m) => m.grad(z),
        })
    }

    fn hvp(&self, z: &Vector, v: &Vector, _batch: Batch) -> Result<Vector> {
        check_point(2, z)?;
        check_point(2, v)?;
        Ok(match self {
            Toy2d::CorrelatedGaussian(g) => GaussianTarget::hvp(g, v),
            Toy2d::Banana => {
                let (_, z2, r) = banana_parts(z);
                let (h11, h12, h22) = (-1.0, 0.5 * z2, -0.25 * z2 * z2 + 0.5 * r - 0.25);
                Vector::from_vec(vec![h11 * v[0] + h12 * v[1], h12 * v[0] + h22 * v[1]])
            }
            Toy2d::Mixture(m) => m.hvp(z, v),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::testing::check_derivatives;

    fn all() -> Vec<Toy2d> {
        vec![
            Toy2d::new(Toy2dKind::CorrelatedGaussian),
            Toy2d::new(Toy2dKind::Banana),
            Toy2d::new(Toy2dKind::Mixture),
        ]
    }

    #[test]
    fn derivatives_match_finite_differences() {
        for t in all() {
            for p in [[0.3, -0.2], [1.5, 2.0], [-2.0, -0.7]] {
                check_derivatives(&t, &Vector::from_vec(p.to_vec()), None, 1e-6);
            }
        }
    }

    #[test]
    fn targets_are_normalized() {
        // Riemann sums over a wide box.
        for t in all() {
            let (lo, hi, n) = (-12.0, 16.0, 700);
            let h = (hi - lo) / n as f64;
            let mut mass = 0.0;
            for i in 0..n {
                for j in 0..n {
                    let z = Vector::from_vec(vec![lo + (i as f64 + 0.5) * h, lo + (j as f64 + 0.5) * h]);
                    mass += t.log_joint(&z, None).unwrap().exp() * h * h;
                }
            }
            assert!((mass - 1.0).abs() < 1e-4, "{:?} mass {mass}", t.kind());
        }
    }

    #[test]
    fn gaussian_logpdf_at_origin() {
        let t = Toy2d::new(Toy2dKind::CorrelatedGaussian);
        // -log(2 pi) - 0.5 log(0.36)
        let expected = -LN_2PI - 0.5 * 0.36f64.ln();
        assert!((t.log_joint(&Vector::zeros(2), None).unwrap() - expected).abs() < 1e-12);
    }

    #[test]
    fn mixture_modes_are_identified() {
        let t = Toy2d::new(Toy2dKind::Mixture);
        assert_eq!(t.mode_of(&Vector::from_vec(vec![-1.0, -1.0])), 0);
        assert_eq!(t.mode_of(&Vector::from_vec(vec![1.3, 1.3])), 1);
    }

    #[test]
    fn rejects_wrong_dimension() {
        let t = Toy2d::new(Toy2dKind::Banana);
        assert!(t.log_joint(&Vector::zeros(3), None).is_err());
    }
}
