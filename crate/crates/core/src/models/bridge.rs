use super::{check_point, resolve_batch, Batch, TargetModel};
use crate::error::{Error, Result};
use crate::numerics::{ln_gamma, Matrix, Vector, LN_2PI};

/// Bayesian bridge regression.
///
/// `y ~ N(X beta, sigma^2 I)`, `p(beta_v | sigma) ∝ exp(-rho |beta_v / sigma|^alpha)`
/// and `1/sigma^2 ~ Gamma(shape, rate)`. The latent is `(beta, log sigma^2)`;
/// the log-joint includes the Jacobian of the log transform.
#[derive(Clone, Debug)]
pub struct BridgeModel {
    pub x: Matrix,
    pub y: Vector,
    pub alpha: f64,
    pub rho: f64,
    pub sigma_shape: f64,
    pub sigma_rate: f64,
    pub names: Vec<String>,
    xtx: Matrix,
    xty: Vector,
}

impl BridgeModel {
    pub fn new(x: Matrix, y: Vector, alpha: f64, rho: f64) -> Result<Self> {
        Self::with_sigma_prior(x, y, alpha, rho, 1.0, 1.0)
    }

    pub fn with_sigma_prior(
        x: Matrix,
        y: Vector,
        alpha: f64,
        rho: f64,
        sigma_shape: f64,
        sigma_rate: f64,
    ) -> Result<Self> {
        if !(alpha > 0.0 && alpha < 2.0) {
            return Err(Error::InvalidParameter(format!("alpha must lie in (0, 2), got {alpha}")));
        }
        if !(rho > 0.0) || !rho.is_finite() {
            return Err(Error::InvalidParameter(format!("rho must be positive, got {rho}")));
        }
        if !(sigma_shape > 0.0 && sigma_rate > 0.0) {
            return Err(Error::InvalidParameter("noise prior parameters must be positive".into()));
        }
        if x.nrows() != y.len() {
            return Err(Error::DimensionMismatch("design rows and response length differ".into()));
        }
        let names = (1..=x.ncols()).map(|i| format!("beta{i}")).collect();
        Ok(Self {
            xtx: x.tr_mul(&x),
            xty: x.tr_mul(&y),
            x,
            y,
            alpha,
            rho,
            sigma_shape,
            sigma_rate,
            names,
        })
    }

    pub fn with_names(mut self, names: Vec<String>) -> Self {
        if names.len() == self.x.ncols() {
            self.names = names;
        }
        self
    }

    pub fn n_features(&self) -> usize {
        self.x.ncols()
    }

    pub fn n_obs(&self) -> usize {
        self.x.nrows()
    }

    pub fn gram(&self) -> &Matrix {
        &self.xtx
    }

    pub fn xty(&self) -> &Vector {
        &self.xty
    }

    /// `rho^(2/alpha)`, the scale multiplying the mixing weights in the
    /// conditional precision of `beta`.
    pub fn precision_scale(&self) -> f64 {
        self.rho.powf(2.0 / self.alpha)
    }

    fn split<'a>(&self, z: &'a Vector) -> (nalgebra::DVectorView<'a, f64>, f64) {
        let p = self.n_features();
        (z.rows(0, p), z[p])
    }

    /// Residual sum of squares and `X^T (y - X beta)` over the batch.
    fn residual_terms(&self, beta: &Vector, batch: Batch) -> Result<(f64, Vector, f64, f64)> {
        match batch {
            None => {
                let r = &self.y - &self.x * beta;
                Ok((r.norm_squared(), self.x.tr_mul(&r), 1.0, self.n_obs() as f64))
            }
            Some(_) => {
                let (idx, scale) = resolve_batch(self.n_obs(), batch)?;
                let mut rss = 0.0;
                let mut xtr = Vector::zeros(self.n_features());
                for &i in &idx {
                    let row = self.x.row(i).transpose();
                    let ri = self.y[i] - row.dot(beta);
                    rss += ri * ri;
                    xtr += row * ri;
                }
                Ok((rss, xtr, scale, idx.len() as f64))
            }
        }
    }

    fn prior_norm_const(&self) -> f64 {
        self.rho.ln() / self.alpha - 2f64.ln() - ln_gamma(1.0 + 1.0 / self.alpha)
    }
}

impl TargetModel for BridgeModel {
    fn dim(&self) -> usize {
        self.n_features() + 1
    }

    fn n_data(&self) -> usize {
        self.n_obs()
    }

    fn variable_names(&self) -> Vec<String> {
        let mut v = self.names.clone();
        v.push("log_sigma2".into());
        v
    }

    fn log_joint(&self, z: &Vector, batch: Batch) -> Result<f64> {
        check_point(self.dim(), z)?;
        let (beta, s) = self.split(z);
        let beta = beta.into_owned();
        let (rss, _, scale, n) = self.residual_terms(&beta, batch)?;
        let p = self.n_features() as f64;
        let a = self.alpha;
        let (r, c) = (self.sigma_shape, self.sigma_rate);
        let lik = -0.5 * n * (LN_2PI + s) - 0.5 * rss * (-s).exp();
        let shrink = (-0.5 * a * s).exp();
        let prior_beta = p * (self.prior_norm_const() - 0.5 * s)
            - self.rho * shrink * beta.iter().map(|b| b.abs().powf(a)).sum::<f64>();
        let prior_s = r * c.ln() - ln_gamma(r) - (r - 1.0) * s - c * (-s).exp() - s;
        let v = scale * lik + prior_beta + prior_s;
        if !v.is_finite() {
            return Err(Error::NonFinite("bridge log-joint".into()));
        }
        Ok(v)
    }

    fn grad_z(&self, z: &Vector, batch: Batch) -> Result<Vector> {
        check_point(self.dim(), z)?;
        let (beta, s) = self.split(z);
        let beta = beta.into_owned();
        let (rss, xtr, scale, n) = self.residual_terms(&beta, batch)?;
        let pf = self.n_features();
        let a = self.alpha;
        let shrink = (-0.5 * a * s).exp();
        let es = (-s).exp();
        let mut g = Vector::zeros(pf + 1);
        let mut pen = 0.0;
        for v in 0..pf {
            let b = beta[v];
            let ab = b.abs();
            let d = if ab > 0.0 { a * ab.powf(a - 1.0) * b.signum() } else { 0.0 };
            g[v] = scale * xtr[v] * es - self.rho * shrink * d;
            pen += ab.powf(a);
        }
        g[pf] = scale * (-0.5 * n + 0.5 * rss * es) - 0.5 * pf as f64
            + 0.5 * a * self.rho * shrink * pen
            - (self.sigma_shape - 1.0)
            + self.sigma_rate * es
            - 1.0;
        Ok(g)
    }

    fn hvp(&self, z: &Vector, v: &Vector, batch: Batch) -> Result<Vector> {
        check_point(self.dim(), z)?;
        check_point(self.dim(), v)?;
        let (beta, s) = self.split(z);
        let beta = beta.into_owned();
        let (rss, xtr, scale, _) = self.residual_terms(&beta, batch)?;
        let pf = self.n_features();
        let a = self.alpha;
        let shrink = (-0.5 * a * s).exp();
        let es = (-s).exp();
        let vb = v.rows(0, pf).into_owned();
        let vs = v[pf];
        // Gram matrix restricted to the batch.
        let xtx_vb = match batch {
            None => &self.xtx * &vb,
            Some(_) => {
                let (idx, _) = resolve_batch(self.n_obs(), batch)?;
                let mut acc = Vector::zeros(pf);
                for &i in &idx {
                    let row = self.x.row(i).transpose();
                    acc += &row * row.dot(&vb);
                }
                acc
            }
        };
        let mut out = Vector::zeros(pf + 1);
        let mut cross_dot = 0.0;
        let mut pen = 0.0;
        for k in 0..pf {
            let b = beta[k];
            let ab = b.abs();
            let (d1, d2) = if ab > 0.0 {
                (a * ab.powf(a - 1.0) * b.signum(), a * (a - 1.0) * ab.powf(a - 2.0))
            } else {
                (0.0, 0.0)
            };
            // d^2/(d beta_k ds)
            let h_bs = -scale * xtr[k] * es + 0.5 * a * self.rho * shrink * d1;
            out[k] = -scale * es * xtx_vb[k] - self.rho * shrink * d2 * vb[k] + h_bs * vs;
            cross_dot += h_bs * vb[k];
            pen += ab.powf(a);
        }
        let h_ss = -0.5 * scale * rss * es - 0.25 * a * a * self.rho * shrink * pen - self.sigma_rate * es;
        out[pf] = cross_dot + h_ss * vs;
        Ok(out)
    }
}
