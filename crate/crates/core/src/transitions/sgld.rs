use serde::{Deserialize, Serialize};

use super::{check_cotangents, check_params, ChainGrads, Trajectory, Transition};
use crate::error::{Error, Result};
use crate::models::{Batch, TargetModel};
use crate::numerics::{RngStream, Vector};

/// One Langevin step with explicit noise:
/// `z' = z + step/2 * grad log p(z) + noise`, where `noise` should have
/// variance `step` per coordinate.
pub fn sgld_step<M: TargetModel + ?Sized>(
    model: &M,
    z: &Vector,
    step: &Vector,
    noise: &Vector,
    batch: Batch,
) -> Result<Vector> {
    if step.len() != z.len() || noise.len() != z.len() {
        return Err(Error::DimensionMismatch("step size or noise length".into()));
    }
    if step.iter().any(|&s| !(s >= 0.0)) {
        return Err(Error::InvalidParameter("step sizes must be non-negative".into()));
    }
    let g = model.grad_z(z, batch)?;
    Ok(z + step.component_mul(&g) * 0.5 + noise)
}

/// How step sizes vary along the chain.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepSchedule {
    /// One step size used at every step.
    Shared,
    /// A separate step size for each of the trained steps.
    PerStep,
}

/// Langevin kernel whose parameters are log step sizes.
#[derive(Clone, Debug)]
pub struct SgldKernel {
    pub dim: usize,
    /// Number of trained steps.
    pub steps: usize,
    pub schedule: StepSchedule,
    /// One step size per coordinate instead of a scalar.
    pub per_dim: bool,
}

impl SgldKernel {
    pub fn new(dim: usize, steps: usize, schedule: StepSchedule, per_dim: bool) -> Self {
        Self {
            dim,
            steps,
            schedule,
            per_dim,
        }
    }

    fn block_len(&self) -> usize {
        if self.per_dim {
            self.dim
        } else {
            1
        }
    }

    fn n_blocks(&self) -> usize {
        match self.schedule {
            StepSchedule::Shared => 1,
            StepSchedule::PerStep => self.steps.max(1),
        }
    }

    /// Parameter block used at step `t`; steps past the trained horizon use
    /// the last block.
    fn block_index(&self, t: usize) -> usize {
        match self.schedule {
            StepSchedule::Shared => 0,
            StepSchedule::PerStep => t.clamp(1, self.steps.max(1)) - 1,
        }
    }

    /// Parameters with every log step size set to `log_step`.
    pub fn init_params(&self, log_step: f64) -> Vec<f64> {
        vec![log_step; self.n_blocks() * self.block_len()]
    }

    /// Per-coordinate log step sizes at step `t`.
    pub fn log_steps(&self, params: &[f64], t: usize) -> Vector {
        let b = self.block_len();
        let start = self.block_index(t) * b;
        Vector::from_fn(self.dim, |i, _| params[start + if self.per_dim { i } else { 0 }])
    }

    fn validate(&self, model_dim: usize, params: &[f64]) -> Result<()> {
        if model_dim != self.dim {
            return Err(Error::DimensionMismatch(format!(
                "kernel built for dimension {}, model has {model_dim}",
                self.dim
            )));
        }
        check_params(self.n_blocks() * self.block_len(), params)
    }
}

impl<M: TargetModel + ?Sized> Transition<M> for SgldKernel {
    fn n_params(&self) -> usize {
        self.n_blocks() * self.block_len()
    }

    fn param_names(&self) -> Vec<String> {
        let mut names = Vec::new();
        for blk in 0..self.n_blocks() {
            for i in 0..self.block_len() {
                let mut name = String::from("log_step");
                if self.schedule == StepSchedule::PerStep {
                    name.push_str(&format!("_t{}", blk + 1));
                }
                if self.per_dim {
                    name.push_str(&format!("_d{}", i + 1));
                }
                names.push(name);
            }
        }
        names
    }

    fn noise_len(&self, _model: &M) -> usize {
        self.dim
    }

    fn draw_noise(&self, _model: &M, rng: &mut RngStream) -> Vec<f64> {
        rng.normals(self.dim)
    }

    fn step(&self, model: &M, params: &[f64], t: usize, z: &Vector, noise: &[f64], batch: Batch) -> Result<Vector> {
        self.validate(model.dim(), params)?;
        let eta = self.log_steps(params, t).map(f64::exp);
        let xi = Vector::from_column_slice(noise);
        sgld_step(model, z, &eta, &eta.map(f64::sqrt).component_mul(&xi), batch)
    }

    fn backward(
        &self,
        model: &M,
        params: &[f64],
        traj: &Trajectory,
        cotangents: &[Vector],
        batch: Batch,
    ) -> Result<ChainGrads> {
        self.validate(model.dim(), params)?;
        check_cotangents(traj, cotangents)?;
        let steps = traj.steps();
        let mut grad = vec![0.0; params.len()];
        let mut theta: Vec<f64> = vec![0.0; model.theta().len()];
        let mut zbar = cotangents[steps].clone();
        for t in (1..=steps).rev() {
            let z_prev = &traj.states[t - 1];
            let xi = &traj.noise[t - 1];
            let eta = self.log_steps(params, t).map(f64::exp);
            let g = model.grad_z(z_prev, batch)?;
            let start = self.block_index(t) * self.block_len();
            for i in 0..self.dim {
                let d = 0.5 * eta[i] * g[i] + 0.5 * eta[i].sqrt() * xi[i];
                grad[start + if self.per_dim { i } else { 0 }] += zbar[i] * d;
            }
            let w = eta.component_mul(&zbar) * 0.5;
            if !theta.is_empty() {
                for (a, b) in theta.iter_mut().zip(model.grad_z_theta_vjp(z_prev, &w, batch)?) {
                    *a += b;
                }
            }
            zbar = &cotangents[t - 1] + &zbar + model.hvp(z_prev, &w, batch)?;
        }
        Ok(ChainGrads {
            params: grad,
            z0: zbar,
            theta,
        })
    }

    fn jvp(
        &self,
        model: &M,
        params: &[f64],
        traj: &Trajectory,
        dparams: &[f64],
        dz0: &Vector,
        batch: Batch,
    ) -> Result<Vec<Vector>> {
        self.validate(model.dim(), params)?;
        check_params(params.len(), dparams)?;
        let mut dz = dz0.clone();
        let mut out = vec![dz.clone()];
        for t in 1..=traj.steps() {
            let z_prev = &traj.states[t - 1];
            let xi = &traj.noise[t - 1];
            let eta = self.log_steps(params, t).map(f64::exp);
            let deta = self.log_steps(dparams, t);
            let g = model.grad_z(z_prev, batch)?;
            let hv = model.hvp(z_prev, &dz, batch)?;
            dz = Vector::from_fn(self.dim, |i, _| {
                dz[i] + 0.5 * eta[i] * hv[i] + deta[i] * (0.5 * eta[i] * g[i] + 0.5 * eta[i].sqrt() * xi[i])
            });
            out.push(dz.clone());
        }
        Ok(out)
    }
}
