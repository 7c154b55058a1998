use super::{check_cotangents, check_params, ChainGrads, Trajectory, Transition};
use crate::error::{Error, Result};
use crate::mlp::{Mlp, MlpCache, OutputActivation};
use crate::models::{Batch, LogisticModel, TargetModel};
use crate::numerics::{cholesky, cholesky_adjoint, spd_inverse, symmetrize, Matrix, RngStream, Vector};

/// Intermediate quantities of the Gaussian coefficient draw, kept for the
/// reverse pass.
pub struct ConditionalCache {
    sigma: Matrix,
    chol: Matrix,
    b: Vector,
    xi: Vector,
}

/// Coefficient draw given mixing weights:
/// `beta = Sigma X^T kappa + chol(Sigma) xi` with
/// `Sigma = (X^T diag(omega) X + I)^{-1}` and `kappa = y - 1/2`.
pub fn pg_conditional(model: &LogisticModel, omega: &Vector, xi: &Vector) -> Result<(Vector, ConditionalCache)> {
    let (n, p) = (model.x.nrows(), model.x.ncols());
    if omega.len() != n || xi.len() != p {
        return Err(Error::DimensionMismatch("mixing weights or noise length".into()));
    }
    let mut wx = model.x.clone();
    for (i, mut row) in wx.row_iter_mut().enumerate() {
        row *= omega[i];
    }
    let precision = symmetrize(&(model.x.tr_mul(&wx) + Matrix::identity(p, p)));
    let (sigma, _) = spd_inverse(&precision)?;
    let chol = cholesky(&sigma)?;
    let b = model.x.tr_mul(&model.kappa());
    let beta = &sigma * &b + &chol * xi;
    Ok((
        beta,
        ConditionalCache {
            sigma,
            chol,
            b,
            xi: xi.clone(),
        },
    ))
}

/// Cotangent of the mixing weights given the cotangent of the drawn
/// coefficients.
pub fn pg_conditional_backward(model: &LogisticModel, cache: &ConditionalCache, beta_bar: &Vector) -> Result<Vector> {
    let sigma_bar = symmetrize(&(beta_bar * cache.b.transpose()))
        + cholesky_adjoint(&cache.chol, &(beta_bar * cache.xi.transpose()))?;
    let prec_bar = -(&cache.sigma * sigma_bar * &cache.sigma);
    let xp = &model.x * prec_bar;
    Ok(Vector::from_fn(model.x.nrows(), |i, _| model.x.row(i).dot(&xp.row(i))))
}

/// Gibbs-like kernel for logistic regression: mixing weights come from a
/// small network `omega_i = g(x_i^T beta, eps_i)` instead of exact
/// Polya-Gamma draws, followed by the exact Gaussian coefficient update.
#[derive(Clone, Debug)]
pub struct LogisticKernel {
    template: Mlp,
}

impl LogisticKernel {
    /// Network with two tanh layers of `hidden` units and a softplus output.
    /// The output layer starts at zero with its bias set so that every
    /// weight starts at 1/4, the mean of `PG(1, 0)`.
    pub fn new(hidden: usize, rng: &mut RngStream) -> Result<Self> {
        let mut template = Mlp::new(&[2, hidden, hidden, 1], OutputActivation::Softplus, true, rng)?;
        template.set_output_bias(0.25f64.exp_m1().ln());
        Ok(Self { template })
    }

    pub fn init_params(&self) -> Vec<f64> {
        self.template.params.clone()
    }

    fn net(&self, params: &[f64]) -> Result<Mlp> {
        check_params(self.template.n_params(), params)?;
        let mut net = self.template.clone();
        net.params.copy_from_slice(params);
        Ok(net)
    }

    /// Mixing weights at `beta` for the given network noise.
    pub fn mixing_weights(
        &self,
        model: &LogisticModel,
        params: &[f64],
        beta: &Vector,
        eps: &[f64],
    ) -> Result<Vector> {
        let net = self.net(params)?;
        Ok(self.forward_weights(&net, model, beta, eps)?.0)
    }

    fn forward_weights(
        &self,
        net: &Mlp,
        model: &LogisticModel,
        beta: &Vector,
        eps: &[f64],
    ) -> Result<(Vector, MlpCache)> {
        let n = model.x.nrows();
        let psi = &model.x * beta;
        let input = Matrix::from_fn(2, n, |r, i| if r == 0 { psi[i] } else { eps[i] });
        let cache = net.forward(&input)?;
        let omega = Vector::from_iterator(n, cache.output().row(0).iter().copied());
        Ok((omega, cache))
    }
}

impl Transition<LogisticModel> for LogisticKernel {
    fn n_params(&self) -> usize {
        self.template.n_params()
    }

    fn noise_len(&self, model: &LogisticModel) -> usize {
        model.x.nrows() + model.x.ncols()
    }

    fn draw_noise(&self, model: &LogisticModel, rng: &mut RngStream) -> Vec<f64> {
        rng.normals(self.noise_len(model))
    }

    fn step(
        &self,
        model: &LogisticModel,
        params: &[f64],
        _t: usize,
        z: &Vector,
        noise: &[f64],
        _batch: Batch,
    ) -> Result<Vector> {
        let n = model.x.nrows();
        if noise.len() != self.noise_len(model) || z.len() != model.dim() {
            return Err(Error::DimensionMismatch("logistic kernel noise or state".into()));
        }
        let net = self.net(params)?;
        let (omega, _) = self.forward_weights(&net, model, z, &noise[..n])?;
        let xi = Vector::from_column_slice(&noise[n..]);
        Ok(pg_conditional(model, &omega, &xi)?.0)
    }

    fn backward(
        &self,
        model: &LogisticModel,
        params: &[f64],
        traj: &Trajectory,
        cotangents: &[Vector],
        _batch: Batch,
    ) -> Result<ChainGrads> {
        check_cotangents(traj, cotangents)?;
        let net = self.net(params)?;
        let n = model.x.nrows();
        let mut grad = vec![0.0; params.len()];
        let steps = traj.steps();
        let mut zbar = cotangents[steps].clone();
        for t in (1..=steps).rev() {
            let beta_prev = &traj.states[t - 1];
            let noise = &traj.noise[t - 1];
            let (omega, mlp_cache) = self.forward_weights(&net, model, beta_prev, &noise[..n])?;
            let xi = Vector::from_column_slice(&noise[n..]);
            let (_, cache) = pg_conditional(model, &omega, &xi)?;
            let omega_bar = pg_conditional_backward(model, &cache, &zbar)?;
            let out_grad = Matrix::from_row_slice(1, n, omega_bar.as_slice());
            let (gp, gin) = net.backward(&mlp_cache, &out_grad)?;
            for (a, b) in grad.iter_mut().zip(gp) {
                *a += b;
            }
            let psi_bar = Vector::from_iterator(n, gin.row(0).iter().copied());
            zbar = &cotangents[t - 1] + model.x.tr_mul(&psi_bar);
        }
        Ok(ChainGrads {
            params: grad,
            z0: zbar,
            theta: Vec::new(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{finite_diff_grad, relative_error};
    use crate::transitions::{replay, run_chain};

    fn setup() -> (LogisticModel, LogisticKernel, Vec<f64>) {
        let mut rng = RngStream::new(21, 0);
        let model = LogisticModel::simulate(40, &mut rng).unwrap();
        let kernel = LogisticKernel::new(6, &mut rng).unwrap();
        // Perturb away from the zero output layer so every path is exercised.
        let params: Vec<f64> = kernel
            .init_params()
            .iter()
            .enumerate()
            .map(|(i, p)| p + 0.05 * ((i * 37 % 11) as f64 / 11.0 - 0.5))
            .collect();
        (model, kernel, params)
    }

    #[test]
    fn weights_start_at_pg_mean() {
        let mut rng = RngStream::new(1, 0);
        let model = LogisticModel::simulate(5, &mut rng).unwrap();
        let k = LogisticKernel::new(4, &mut rng).unwrap();
        let w = k.mixing_weights(&model, &k.init_params(), &Vector::zeros(4), &[0.3; 5]).unwrap();
        assert!(w.iter().all(|v| (v - 0.25).abs() < 1e-12));
    }

    #[test]
    fn conditional_backward_matches_finite_differences() {
        let (model, _, _) = setup();
        let omega = Vector::from_fn(40, |i, _| 0.1 + 0.01 * i as f64);
        let xi = Vector::from_vec(vec![0.3, -0.7, 1.1, 0.2]);
        let w = Vector::from_vec(vec![1.0, -2.0, 0.5, 0.7]);
        let (_, cache) = pg_conditional(&model, &omega, &xi).unwrap();
        let an = pg_conditional_backward(&model, &cache, &w).unwrap();
        let fd = finite_diff_grad(
            |o| Ok(pg_conditional(&model, &Vector::from_column_slice(o), &xi)?.0.dot(&w)),
            omega.as_slice(),
            1e-6,
        )
        .unwrap();
        assert!(relative_error(an.as_slice(), &fd) < 1e-6);
    }

    #[test]
    fn chain_gradients_match_finite_differences() {
        let (model, kernel, params) = setup();
        let mut rng = RngStream::new(5, 5);
        let z0 = Vector::from_vec(vec![0.2, -0.1, 0.4, 0.3]);
        let traj = run_chain(&kernel, &model, &params, z0.clone(), 2, &mut rng, None).unwrap();
        let w = [Vector::from_vec(vec![0.0; 4]), Vector::from_vec(vec![0.5, 1.0, -0.5, 0.2]), Vector::from_vec(vec![1.0, -1.0, 0.3, 2.0])];
        let objective = |p: &[f64], z: &Vector| -> Result<f64> {
            let tr = replay(&kernel, &model, p, z.clone(), traj.noise.clone(), None)?;
            Ok(tr.states.iter().zip(&w).map(|(s, c)| s.dot(c)).sum())
        };
        let g = kernel.backward(&model, &params, &traj, &w, None).unwrap();
        let fd = finite_diff_grad(|p| objective(p, &z0), &params, 1e-6).unwrap();
        assert!(relative_error(&g.params, &fd) < 1e-5, "{}", relative_error(&g.params, &fd));
        let fdz = finite_diff_grad(|z| objective(&params, &Vector::from_column_slice(z)), z0.as_slice(), 1e-6).unwrap();
        assert!(relative_error(g.z0.as_slice(), &fdz) < 1e-5);
    }
}
