//! Learnable Markov kernels `z_t = f_eta(z_{t-1}, eps_t)` with pathwise
//! derivatives in the kernel parameters and the starting point.

mod bridge;
mod logistic;
mod sgld;

pub use bridge::BridgeKernel;
pub use logistic::{pg_conditional, pg_conditional_backward, ConditionalCache, LogisticKernel};
pub use sgld::{sgld_step, SgldKernel, StepSchedule};

use crate::error::{Error, Result};
use crate::models::{Batch, TargetModel};
use crate::numerics::{RngStream, Vector};

/// States `z_0..z_T` of one chain and the noise consumed by each step.
#[derive(Clone, Debug)]
pub struct Trajectory {
    pub states: Vec<Vector>,
    pub noise: Vec<Vec<f64>>,
}

impl Trajectory {
    pub fn steps(&self) -> usize {
        self.noise.len()
    }

    pub fn last(&self) -> &Vector {
        self.states.last().expect("trajectory holds the initial state")
    }
}

/// Gradients of a scalar objective of a trajectory.
#[derive(Clone, Debug)]
pub struct ChainGrads {
    pub params: Vec<f64>,
    pub z0: Vector,
    /// Contribution through the kernel's use of the model hyperparameters.
    pub theta: Vec<f64>,
}

pub trait Transition<M: TargetModel + ?Sized>: Send + Sync {
    fn n_params(&self) -> usize;

    fn param_names(&self) -> Vec<String> {
        (0..self.n_params()).map(|i| format!("eta{i}")).collect()
    }

    fn noise_len(&self, model: &M) -> usize;

    fn draw_noise(&self, model: &M, rng: &mut RngStream) -> Vec<f64>;

    /// Step `t` (1-based) of the chain from `z` with fixed noise.
    fn step(&self, model: &M, params: &[f64], t: usize, z: &Vector, noise: &[f64], batch: Batch)
        -> Result<Vector>;

    /// Reverse-mode gradients given cotangents for every state `z_0..z_T`.
    fn backward(
        &self,
        model: &M,
        params: &[f64],
        traj: &Trajectory,
        cotangents: &[Vector],
        batch: Batch,
    ) -> Result<ChainGrads>;

    /// Forward-mode tangents of `z_0..z_T` along a direction in
    /// (parameters, starting point).
    fn jvp(
        &self,
        _model: &M,
        _params: &[f64],
        _traj: &Trajectory,
        _dparams: &[f64],
        _dz0: &Vector,
        _batch: Batch,
    ) -> Result<Vec<Vector>> {
        Err(Error::InvalidParameter("kernel has no forward-mode derivative".into()))
    }
}

pub(crate) fn check_params(expected: usize, params: &[f64]) -> Result<()> {
    if params.len() != expected {
        return Err(Error::DimensionMismatch(format!(
            "kernel expects {expected} parameters, got {}",
            params.len()
        )));
    }
    if params.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("kernel parameters".into()));
    }
    Ok(())
}

pub(crate) fn check_cotangents(traj: &Trajectory, cot: &[Vector]) -> Result<()> {
    if cot.len() != traj.states.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} cotangents for {} states",
            cot.len(),
            traj.states.len()
        )));
    }
    Ok(())
}

/// Runs `steps` transitions from `z0`, drawing fresh noise from `rng`.
pub fn run_chain<M, K>(
    kernel: &K,
    model: &M,
    params: &[f64],
    z0: Vector,
    steps: usize,
    rng: &mut RngStream,
    batch: Batch,
) -> Result<Trajectory>
where
    M: TargetModel + ?Sized,
    K: Transition<M> + ?Sized,
{
    let noise: Vec<Vec<f64>> = (0..steps).map(|_| kernel.draw_noise(model, rng)).collect();
    replay(kernel, model, params, z0, noise, batch)
}

/// Runs the chain with the given noise.
pub fn replay<M, K>(
    kernel: &K,
    model: &M,
    params: &[f64],
    z0: Vector,
    noise: Vec<Vec<f64>>,
    batch: Batch,
) -> Result<Trajectory>
where
    M: TargetModel + ?Sized,
    K: Transition<M> + ?Sized,
{
    let mut states = Vec::with_capacity(noise.len() + 1);
    states.push(z0);
    for (t, eps) in noise.iter().enumerate() {
        let next = kernel.step(model, params, t + 1, states.last().unwrap(), eps, batch)?;
        if next.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("chain state after step {}", t + 1)));
        }
        states.push(next);
    }
    Ok(Trajectory { states, noise })
}

/// Gradient in the kernel parameters of a scalar function of the final
/// state, given its gradient `final_grad` at `z_T`.
pub fn chain_param_grad<M, K>(
    kernel: &K,
    model: &M,
    params: &[f64],
    traj: &Trajectory,
    final_grad: &Vector,
    batch: Batch,
) -> Result<ChainGrads>
where
    M: TargetModel + ?Sized,
    K: Transition<M> + ?Sized,
{
    let d = final_grad.len();
    let mut cot = vec![Vector::zeros(d); traj.states.len()];
    *cot.last_mut().unwrap() = final_grad.clone();
    kernel.backward(model, params, traj, &cot, batch)
}

/// Long chain from `z0`: runs `burn_in + keep * thin` steps and returns every
/// `thin`-th state after burn-in. Steps beyond the trained horizon reuse the
/// kernel's final-step parameters.
pub fn extrapolate<M, K>(
    kernel: &K,
    model: &M,
    params: &[f64],
    z0: Vector,
    burn_in: usize,
    keep: usize,
    thin: usize,
    rng: &mut RngStream,
) -> Result<Vec<Vector>>
where
    M: TargetModel + ?Sized,
    K: Transition<M> + ?Sized,
{
    if thin == 0 {
        return Err(Error::InvalidParameter("thinning must be at least 1".into()));
    }
    let mut z = z0;
    let mut out = Vec::with_capacity(keep);
    let total = burn_in + keep * thin;
    for t in 1..=total {
        let eps = kernel.draw_noise(model, rng);
        z = kernel.step(model, params, t, &z, &eps, None)?;
        if z.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("extrapolated chain at step {t}")));
        }
        if t > burn_in && (t - burn_in) % thin == 0 {
            out.push(z.clone());
        }
    }
    Ok(out)
}
