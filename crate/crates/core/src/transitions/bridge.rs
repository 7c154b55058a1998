use super::{check_cotangents, check_params, ChainGrads, Trajectory, Transition};
use crate::error::{Error, Result};
use crate::models::{Batch, BridgeModel, TargetModel};
use crate::numerics::{cholesky, cholesky_tangent, spd_inverse, symmetrize, Matrix, RngStream, Vector};

/// Gibbs-like kernel for bridge regression over `(beta, log sigma^2)`.
///
/// Each step draws mixing weights `lambda_v = a_v (-ln u_v)^(1/b_v)` with
/// learnable `(log a_v, log b_v)`, then `beta | sigma^2, lambda` from its
/// Gaussian conditional and finally `1/sigma^2 | beta` from its Gamma
/// conditional. Derivatives are propagated in forward mode, one direction
/// per parameter.
#[derive(Clone, Debug)]
pub struct BridgeKernel {
    n_features: usize,
}

struct StepCache {
    lambda: Vector,
    /// `ln(-ln u_v) / b_v`
    log_term: Vector,
    sigma_cov: Matrix,
    chol: Matrix,
    xi: Vector,
    #[cfg_attr(not(test), allow(dead_code))]
    post_mean: Vector,
    sigma: f64,
    beta: Vector,
    resid: Vector,
    rate: f64,
}

impl BridgeKernel {
    pub fn new(model: &BridgeModel) -> Self {
        Self {
            n_features: model.n_features(),
        }
    }

    /// `a_v = b_v = 1`, i.e. standard exponential mixing weights.
    pub fn init_params(&self) -> Vec<f64> {
        vec![0.0; 2 * self.n_features]
    }

    fn gamma_shape(model: &BridgeModel) -> f64 {
        model.sigma_shape + 0.5 * (model.n_obs() + model.n_features()) as f64
    }

    fn forward(model: &BridgeModel, params: &[f64], z: &Vector, noise: &[f64]) -> Result<(Vector, StepCache)> {
        let p = model.n_features();
        check_params(2 * p, params)?;
        if noise.len() != 2 * p + 1 || z.len() != p + 1 {
            return Err(Error::DimensionMismatch("bridge kernel noise or state".into()));
        }
        let kappa = model.precision_scale();
        let mut lambda = Vector::zeros(p);
        let mut log_term = Vector::zeros(p);
        for v in 0..p {
            let u = noise[v];
            if !(u > 0.0 && u < 1.0) {
                return Err(Error::InvalidParameter(format!("uniform noise {u} outside (0, 1)")));
            }
            log_term[v] = (-u.ln()).ln() * (-params[p + v]).exp();
            lambda[v] = (params[v] + log_term[v]).exp();
        }
        let mut precision = model.gram().clone();
        for v in 0..p {
            precision[(v, v)] += kappa * lambda[v];
        }
        let (sigma_cov, _) = spd_inverse(&symmetrize(&precision))?;
        let chol = cholesky(&sigma_cov)?;
        let xi = Vector::from_column_slice(&noise[p..2 * p]);
        let post_mean = &sigma_cov * model.xty();
        let sigma = (0.5 * z[p]).exp();
        let beta = &post_mean + (&chol * &xi) * sigma;
        let resid = &model.y - &model.x * &beta;
        let penalty: f64 = (0..p).map(|v| lambda[v] * beta[v] * beta[v]).sum();
        let rate = model.sigma_rate + 0.5 * resid.norm_squared() + 0.5 * kappa * penalty;
        let g = noise[2 * p];
        if !(g > 0.0) {
            return Err(Error::InvalidParameter("gamma noise must be positive".into()));
        }
        let mut next = Vector::zeros(p + 1);
        next.rows_mut(0, p).copy_from(&beta);
        next[p] = rate.ln() - g.ln();
        Ok((
            next,
            StepCache {
                lambda,
                log_term,
                sigma_cov,
                chol,
                xi,
                post_mean,
                sigma,
                beta,
                resid,
                rate,
            },
        ))
    }

    /// Tangent of the next state given parameter tangent `dparams` and the
    /// tangent `ds` of the incoming `log sigma^2`.
    fn tangent(model: &BridgeModel, c: &StepCache, dparams: &[f64], ds: f64) -> Result<Vector> {
        let p = model.n_features();
        let kappa = model.precision_scale();
        let dlambda = Vector::from_fn(p, |v, _| c.lambda[v] * (dparams[v] - c.log_term[v] * dparams[p + v]));
        let mut dbeta = (&c.chol * &c.xi) * (0.5 * c.sigma * ds);
        if dlambda.iter().any(|&d| d != 0.0) {
            let mut dprec = Matrix::zeros(p, p);
            for v in 0..p {
                dprec[(v, v)] = kappa * dlambda[v];
            }
            let dcov = -(&c.sigma_cov * dprec * &c.sigma_cov);
            let dchol = cholesky_tangent(&c.chol, &symmetrize(&dcov))?;
            dbeta += &dcov * model.xty() + (dchol * &c.xi) * c.sigma;
        }
        let xdb = &model.x * &dbeta;
        let mut drate = -c.resid.dot(&xdb);
        for v in 0..p {
            drate += 0.5 * kappa * (dlambda[v] * c.beta[v] * c.beta[v] + 2.0 * c.lambda[v] * c.beta[v] * dbeta[v]);
        }
        let mut out = Vector::zeros(p + 1);
        out.rows_mut(0, p).copy_from(&dbeta);
        out[p] = drate / c.rate;
        Ok(out)
    }

    fn caches(model: &BridgeModel, params: &[f64], traj: &Trajectory) -> Result<Vec<StepCache>> {
        (1..=traj.steps())
            .map(|t| Ok(Self::forward(model, params, &traj.states[t - 1], &traj.noise[t - 1])?.1))
            .collect()
    }

    /// Tangents of `z_1..z_T` for one direction, using precomputed caches.
    fn propagate(model: &BridgeModel, caches: &[StepCache], dparams: &[f64], dz0: &Vector) -> Result<Vec<Vector>> {
        let p = model.n_features();
        let mut out = vec![dz0.clone()];
        let mut ds = dz0[p];
        for c in caches {
            let dz = Self::tangent(model, c, dparams, ds)?;
            ds = dz[p];
            out.push(dz);
        }
        Ok(out)
    }

    /// Mean of the Gaussian conditional at the last step, used by tests.
    #[cfg(test)]
    fn conditional_mean(model: &BridgeModel, params: &[f64], z: &Vector, noise: &[f64]) -> Vector {
        Self::forward(model, params, z, noise).unwrap().1.post_mean
    }
}

impl Transition<BridgeModel> for BridgeKernel {
    fn n_params(&self) -> usize {
        2 * self.n_features
    }

    fn param_names(&self) -> Vec<String> {
        let scale = (1..=self.n_features).map(|v| format!("log_scale{v}"));
        scale.chain((1..=self.n_features).map(|v| format!("log_shape{v}"))).collect()
    }

    fn noise_len(&self, model: &BridgeModel) -> usize {
        2 * model.n_features() + 1
    }

    fn draw_noise(&self, model: &BridgeModel, rng: &mut RngStream) -> Vec<f64> {
        let p = model.n_features();
        let mut noise = Vec::with_capacity(2 * p + 1);
        for _ in 0..p {
            noise.push(rng.uniform());
        }
        for _ in 0..p {
            noise.push(rng.normal());
        }
        noise.push(crate::numerics::gamma_unit(Self::gamma_shape(model), rng));
        noise
    }

    fn step(&self, model: &BridgeModel, params: &[f64], _t: usize, z: &Vector, noise: &[f64], _batch: Batch) -> Result<Vector> {
        Ok(Self::forward(model, params, z, noise)?.0)
    }

    fn backward(
        &self,
        model: &BridgeModel,
        params: &[f64],
        traj: &Trajectory,
        cotangents: &[Vector],
        _batch: Batch,
    ) -> Result<ChainGrads> {
        check_cotangents(traj, cotangents)?;
        let caches = Self::caches(model, params, traj)?;
        let d = model.dim();
        let zero_z = Vector::zeros(d);
        let mut grad = vec![0.0; params.len()];
        let mut dir = vec![0.0; params.len()];
        for k in 0..params.len() {
            dir[k] = 1.0;
            let tangents = Self::propagate(model, &caches, &dir, &zero_z)?;
            grad[k] = tangents.iter().zip(cotangents).map(|(a, b)| a.dot(b)).sum();
            dir[k] = 0.0;
        }
        // Only log sigma^2 of the starting point influences later states.
        let mut z0 = cotangents[0].clone();
        let mut es = Vector::zeros(d);
        es[d - 1] = 1.0;
        let tangents = Self::propagate(model, &caches, &dir, &es)?;
        z0[d - 1] = tangents.iter().zip(cotangents).map(|(a, b)| a.dot(b)).sum();
        Ok(ChainGrads {
            params: grad,
            z0,
            theta: Vec::new(),
        })
    }

    fn jvp(
        &self,
        model: &BridgeModel,
        params: &[f64],
        traj: &Trajectory,
        dparams: &[f64],
        dz0: &Vector,
        _batch: Batch,
    ) -> Result<Vec<Vector>> {
        check_params(params.len(), dparams)?;
        let caches = Self::caches(model, params, traj)?;
        Self::propagate(model, &caches, dparams, dz0)
    }
}
