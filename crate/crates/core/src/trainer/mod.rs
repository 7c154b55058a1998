//! The three-player training loop: proposal `q_phi`, kernel parameters
//! (and model hyperparameters), and discriminator.

mod adam;
mod mfvi;

pub use adam::{adam_update, Adam, AdamConfig};
pub use mfvi::{fit_mfvi, MfviConfig};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::discriminator::{d_loss_grad, Discriminator, DEFAULT_HIDDEN};
use crate::error::{Error, Result};
use crate::models::TargetModel;
use crate::numerics::{RngStream, Vector};
use crate::transitions::{replay, run_chain, Trajectory, Transition};
use crate::variational::{cross_entropy, moment_match, q_grad_z, q_logpdf, q_sample_one, VariationalParams};

/// Stream tags keeping the random draws of different purposes apart.
const STREAM_PARTICLE: u64 = 1;
const STREAM_BATCH: u64 = 2;
const STREAM_INIT: u64 = 3;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainerConfig {
    /// Particles per epoch.
    pub particles: usize,
    /// Chain length.
    pub steps: usize,
    /// Epochs before the discriminator is switched on.
    pub warmup: usize,
    pub epochs: usize,
    pub adam: AdamConfig,
    /// Per-player learning rates; `None` uses `adam.lr`.
    pub lr_phi: Option<f64>,
    pub lr_eta: Option<f64>,
    pub lr_disc: Option<f64>,
    /// Minibatch size for the likelihood (all data when `None`).
    pub minibatch: Option<usize>,
    /// Treat chain samples as constants in the proposal update.
    pub stop_gradient: bool,
    /// Average the objectives over every chain step (as opposed to the
    /// final state only).
    pub average_over_steps: bool,
    pub disc_hidden: usize,
    /// Rounds of setting the proposal to the moment match of the chain
    /// output before training starts.
    pub pilot_rounds: usize,
    pub checkpoint_every: usize,
    /// Epochs below the divergence threshold before training is aborted.
    pub divergence_window: usize,
    pub threads: usize,
    pub seed: u64,
}

impl Default for TrainerConfig {
    fn default() -> Self {
        Self {
            particles: 200,
            steps: 5,
            warmup: 100,
            epochs: 1000,
            adam: AdamConfig::default(),
            lr_phi: None,
            lr_eta: None,
            lr_disc: None,
            minibatch: None,
            stop_gradient: true,
            average_over_steps: true,
            disc_hidden: DEFAULT_HIDDEN,
            pilot_rounds: 0,
            checkpoint_every: 100,
            divergence_window: 50,
            threads: 1,
            seed: 0,
        }
    }
}

impl TrainerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.particles == 0 {
            return Err(Error::InvalidParameter("trainer.J must be at least 1".into()));
        }
        if self.steps == 0 {
            return Err(Error::InvalidParameter("trainer.T must be at least 1".into()));
        }
        if self.disc_hidden == 0 {
            return Err(Error::InvalidParameter("discriminator width must be positive".into()));
        }
        if self.threads == 0 {
            return Err(Error::InvalidParameter("thread count must be positive".into()));
        }
        if self.minibatch == Some(0) {
            return Err(Error::InvalidParameter("minibatch size must be positive".into()));
        }
        for lr in [Some(self.adam.lr), self.lr_phi, self.lr_eta, self.lr_disc].into_iter().flatten() {
            if !(lr > 0.0) || !lr.is_finite() {
                return Err(Error::InvalidParameter(format!("learning rate must be positive, got {lr}")));
            }
        }
        Ok(())
    }

    fn steps_used(&self) -> Vec<usize> {
        if self.average_over_steps {
            (1..=self.steps).collect()
        } else {
            vec![self.steps]
        }
    }
}

/// One simulated chain with the proposal noise that started it.
#[derive(Clone, Debug)]
pub struct Particle {
    pub eps: Vector,
    pub traj: Trajectory,
}

/// Draws `count` particles for `epoch`. Each particle has its own stream.
pub fn simulate_particles<M, K>(
    model: &M,
    kernel: &K,
    phi: &VariationalParams,
    eta: &[f64],
    steps: usize,
    count: usize,
    seed: u64,
    epoch: u64,
    batch: Option<&[usize]>,
    threads: usize,
) -> Result<Vec<Particle>>
where
    M: TargetModel + ?Sized,
    K: Transition<M> + ?Sized,
{
    let one = |j: usize| -> Result<Particle> {
        let mut rng = RngStream::derive(seed, &[STREAM_PARTICLE, epoch, j as u64]);
        let draw = q_sample_one(phi, &mut rng);
        let traj = run_chain(kernel, model, eta, draw.z, steps, &mut rng, batch)?;
        Ok(Particle { eps: draw.eps, traj })
    };
    if threads > 1 {
        (0..count).into_par_iter().map(one).collect()
    } else {
        (0..count).map(one).collect()
    }
}

/// Surrogate value and gradients for the kernel player.
#[derive(Clone, Debug)]
pub struct SurrogateEstimate {
    pub value: f64,
    /// Standard error of `value` across particles.
    pub std_error: f64,
    pub grad_eta: Vec<f64>,
    pub grad_theta: Vec<f64>,
    /// Mean discriminator logit over the chain samples used.
    pub mean_logit: f64,
}

struct ParticleTerms {
    value: f64,
    grad_eta: Vec<f64>,
    grad_theta: Vec<f64>,
    logit_sum: f64,
}

/// `mean over particles and steps of [log p(z_t) - log q_phi(z_t) - D(z_t)]`
/// with its gradient in the kernel parameters and model hyperparameters.
///
/// The gradient is pathwise: cotangents `grad log p - grad log q_phi - grad D`
/// at each state are pulled back through the kernel. Pass `disc = None` to
/// drop the discriminator term.
pub fn elbo_surrogate<M, K>(
    model: &M,
    kernel: &K,
    phi: &VariationalParams,
    eta: &[f64],
    disc: Option<&Discriminator>,
    particles: &[Particle],
    steps_used: &[usize],
    batch: Option<&[usize]>,
    threads: usize,
) -> Result<SurrogateEstimate>
where
    M: TargetModel + ?Sized,
    K: Transition<M> + ?Sized,
{
    if particles.is_empty() || steps_used.is_empty() {
        return Err(Error::Empty("surrogate needs particles and steps".into()));
    }
    let weight = 1.0 / steps_used.len() as f64;
    let n_theta = model.theta().len();
    let one = |(j, p): (usize, &Particle)| -> Result<ParticleTerms> {
        let d = p.traj.states[0].len();
        let points: Vec<Vector> = steps_used.iter().map(|&t| p.traj.states[t].clone()).collect();
        let (logits, dgrads) = match disc {
            Some(disc) => disc.logits_and_input_grads(&points)?,
            None => (vec![0.0; points.len()], vec![Vector::zeros(d); points.len()]),
        };
        let mut cot = vec![Vector::zeros(d); p.traj.states.len()];
        let mut value = 0.0;
        let mut grad_theta = vec![0.0; n_theta];
        for (k, &t) in steps_used.iter().enumerate() {
            let z = &points[k];
            let lp = model.log_joint(z, batch)?;
            let lq = q_logpdf(phi, z)?;
            let term = lp - lq - logits[k];
            if !term.is_finite() {
                return Err(Error::NonFinite(format!("surrogate term at particle {j}, step {t}")));
            }
            value += weight * term;
            cot[t] += (model.grad_z(z, batch)? - q_grad_z(phi, z) - &dgrads[k]) * weight;
            if n_theta > 0 {
                for (a, b) in grad_theta.iter_mut().zip(model.grad_theta(z, batch)?) {
                    *a += weight * b;
                }
            }
        }
        let back = kernel.backward(model, eta, &p.traj, &cot, batch)?;
        for (a, b) in grad_theta.iter_mut().zip(&back.theta) {
            *a += b;
        }
        Ok(ParticleTerms {
            value,
            grad_eta: back.params,
            grad_theta,
            logit_sum: logits.iter().sum(),
        })
    };
    let terms: Vec<ParticleTerms> = if threads > 1 {
        particles.par_iter().enumerate().map(one).collect::<Result<_>>()?
    } else {
        particles.iter().enumerate().map(one).collect::<Result<_>>()?
    };
    let n = terms.len() as f64;
    let mut grad_eta = vec![0.0; eta.len()];
    let mut grad_theta = vec![0.0; n_theta];
    let mut sum = 0.0;
    let mut sum_sq = 0.0;
    let mut logit_sum = 0.0;
    for t in &terms {
        sum += t.value;
        sum_sq += t.value * t.value;
        logit_sum += t.logit_sum;
        for (a, b) in grad_eta.iter_mut().zip(&t.grad_eta) {
            *a += b / n;
        }
        for (a, b) in grad_theta.iter_mut().zip(&t.grad_theta) {
            *a += b / n;
        }
    }
    let mean = sum / n;
    let var = if terms.len() > 1 { ((sum_sq - n * mean * mean) / (n - 1.0)).max(0.0) } else { 0.0 };
    Ok(SurrogateEstimate {
        value: mean,
        std_error: (var / n).sqrt(),
        grad_eta,
        grad_theta,
        mean_logit: logit_sum / (n * steps_used.len() as f64),
    })
}

/// Gradient of the proposal objective `-mean log q_phi(z_t)`. Without stop
/// gradient the dependence of the chain states on `phi` is included.
pub fn phi_gradient<M, K>(
    model: &M,
    kernel: &K,
    phi: &VariationalParams,
    eta: &[f64],
    particles: &[Particle],
    steps_used: &[usize],
    stop_gradient: bool,
    batch: Option<&[usize]>,
) -> Result<Vec<f64>>
where
    M: TargetModel + ?Sized,
    K: Transition<M> + ?Sized,
{
    let samples: Vec<Vector> = particles
        .iter()
        .flat_map(|p| steps_used.iter().map(move |&t| p.traj.states[t].clone()))
        .collect();
    let (_, mut grad) = cross_entropy(phi, &samples)?;
    if !stop_gradient {
        let d = phi.dim();
        let scale = 1.0 / samples.len() as f64;
        let sd = phi.sd();
        for p in particles {
            let mut cot = vec![Vector::zeros(d); p.traj.states.len()];
            for &t in steps_used {
                cot[t] -= q_grad_z(phi, &p.traj.states[t]) * scale;
            }
            let back = kernel.backward(model, eta, &p.traj, &cot, batch)?;
            for i in 0..d {
                grad[i] += back.z0[i];
                grad[d + i] += back.z0[i] * p.eps[i] * 0.5 * sd[i];
            }
        }
    }
    Ok(grad)
}

/// Per-epoch record.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogRow {
    pub epoch: usize,
    pub surrogate: f64,
    pub surrogate_se: f64,
    /// Discriminator objective before its update (NaN while it is off).
    pub disc_objective: f64,
    /// Mean discriminator logit on chain samples (NaN while it is off).
    pub disc_mean_qtilde: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub epoch: usize,
    pub phi_mean: Vec<f64>,
    pub phi_log_var: Vec<f64>,
    pub eta: Vec<f64>,
    pub theta: Vec<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub rows: Vec<LogRow>,
    pub checkpoints: Vec<Checkpoint>,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub phi: VariationalParams,
    pub eta: Vec<f64>,
    pub theta: Vec<f64>,
    pub disc: Discriminator,
    pub log: TrainLog,
}

struct DivergenceMonitor {
    threshold: Option<f64>,
    run: usize,
    window: usize,
}

impl DivergenceMonitor {
    fn observe(&mut self, epoch: usize, value: f64, spread: f64) -> Result<()> {
        if !value.is_finite() {
            return Err(Error::Divergence {
                epoch,
                reason: "non-finite surrogate".into(),
            });
        }
        let threshold = *self.threshold.get_or_insert(value - 10.0 * spread);
        if value < threshold {
            self.run += 1;
            if self.run >= self.window {
                return Err(Error::Divergence {
                    epoch,
                    reason: format!(
                        "surrogate stayed below {threshold:.6e} for {} consecutive epochs",
                        self.window
                    ),
                });
            }
        } else {
            self.run = 0;
        }
        Ok(())
    }
}

fn descend(grad: &[f64]) -> Vec<f64> {
    grad.iter().map(|g| -g).collect()
}

fn as_divergence(epoch: usize, e: Error) -> Error {
    match e {
        Error::NonFinite(what) => Error::Divergence { epoch, reason: what },
        Error::NotPositiveDefinite { index, pivot } => Error::Divergence {
            epoch,
            reason: format!("matrix lost positive definiteness (pivot {index} is {pivot})"),
        },
        other => other,
    }
}

/// Repeatedly replaces the proposal by the diagonal Gaussian matching the
/// moments of the chain states it produces, which is the minimiser of the
/// proposal objective for fixed kernel parameters.
fn pilot_proposal<M, K>(
    model: &M,
    kernel: &K,
    mut phi: VariationalParams,
    eta: &[f64],
    steps_used: &[usize],
    config: &TrainerConfig,
) -> Result<VariationalParams>
where
    M: TargetModel,
    K: Transition<M>,
{
    for round in 0..config.pilot_rounds {
        let particles = simulate_particles(
            model,
            kernel,
            &phi,
            eta,
            config.steps,
            config.particles,
            config.seed,
            u64::MAX - round as u64,
            None,
            config.threads,
        )?;
        let samples: Vec<Vector> = particles
            .iter()
            .flat_map(|p| steps_used.iter().map(move |&t| p.traj.states[t].clone()))
            .collect();
        phi = moment_match(&samples)?;
    }
    Ok(phi)
}

/// Runs the training loop.
///
/// Every epoch draws `J` proposals, runs `T` transitions from each, then
/// updates in order: the proposal (cross-entropy to the chain samples), the
/// kernel parameters and model hyperparameters (ascending the surrogate,
/// with the discriminator term once `epoch >= warmup`), and finally the
/// discriminator. Each player takes one Adam step per epoch.
pub fn train<M, K>(
    model: &mut M,
    kernel: &K,
    phi0: VariationalParams,
    eta0: Vec<f64>,
    config: &TrainerConfig,
) -> Result<TrainOutcome>
where
    M: TargetModel,
    K: Transition<M>,
{
    config.validate()?;
    if phi0.dim() != model.dim() {
        return Err(Error::DimensionMismatch("proposal and model dimensions differ".into()));
    }
    if eta0.len() != kernel.n_params() {
        return Err(Error::DimensionMismatch(format!(
            "kernel expects {} parameters, got {}",
            kernel.n_params(),
            eta0.len()
        )));
    }
    let pool = if config.threads > 1 {
        Some(
            rayon::ThreadPoolBuilder::new()
                .num_threads(config.threads)
                .build()
                .map_err(|e| Error::InvalidParameter(e.to_string()))?,
        )
    } else {
        None
    };
    let run = || train_loop(model, kernel, phi0, eta0, config);
    match pool {
        Some(pool) => pool.install(run),
        None => run(),
    }
}

fn train_loop<M, K>(
    model: &mut M,
    kernel: &K,
    phi0: VariationalParams,
    eta0: Vec<f64>,
    config: &TrainerConfig,
) -> Result<TrainOutcome>
where
    M: TargetModel,
    K: Transition<M>,
{
    let mut init_rng = RngStream::derive(config.seed, &[STREAM_INIT]);
    let mut disc = Discriminator::new(model.dim(), config.disc_hidden, &mut init_rng)?;
    let mut eta = eta0;
    let steps_used = config.steps_used();
    let mut phi = pilot_proposal(model, kernel, phi0, &eta, &steps_used, config)?;
    let mut theta = model.theta();
    let lr = |o: Option<f64>| o.unwrap_or(config.adam.lr);
    let mut opt_phi = Adam::new(config.adam, 2 * phi.dim());
    let mut opt_eta = Adam::new(config.adam, eta.len());
    let mut opt_theta = Adam::new(config.adam, theta.len());
    let mut opt_disc = Adam::new(config.adam, disc.n_params());
    let mut monitor = DivergenceMonitor {
        threshold: None,
        run: 0,
        window: config.divergence_window.max(1),
    };
    let mut log = TrainLog::default();
    let snapshot = |epoch: usize, phi: &VariationalParams, eta: &[f64], theta: &[f64]| Checkpoint {
        epoch,
        phi_mean: phi.mean.iter().copied().collect(),
        phi_log_var: phi.log_var.iter().copied().collect(),
        eta: eta.to_vec(),
        theta: theta.to_vec(),
    };

    for epoch in 0..config.epochs {
        let batch: Option<Vec<usize>> = match config.minibatch {
            Some(n) if model.n_data() > 0 && n < model.n_data() => {
                let mut rng = RngStream::derive(config.seed, &[STREAM_BATCH, epoch as u64]);
                let mut idx = rng.choose_indices(model.n_data(), n);
                idx.sort_unstable();
                Some(idx)
            }
            _ => None,
        };
        let batch = batch.as_deref();
        let model_ref: &M = model;
        let particles = simulate_particles(
            model_ref,
            kernel,
            &phi,
            &eta,
            config.steps,
            config.particles,
            config.seed,
            epoch as u64,
            batch,
            config.threads,
        )
        .map_err(|e| as_divergence(epoch, e))?;

        // Proposal player.
        let g_phi = phi_gradient(model_ref, kernel, &phi, &eta, &particles, &steps_used, config.stop_gradient, batch)
            .map_err(|e| as_divergence(epoch, e))?;
        let mut flat = phi.to_flat();
        opt_phi.step_with_lr(&mut flat, &g_phi, lr(config.lr_phi)).map_err(|e| as_divergence(epoch, e))?;
        phi = VariationalParams::from_flat(&flat).map_err(|e| as_divergence(epoch, e))?;

        // Kernel player.
        let use_disc = epoch >= config.warmup;
        let est = elbo_surrogate(
            model_ref,
            kernel,
            &phi,
            &eta,
            if use_disc { Some(&disc) } else { None },
            &particles,
            &steps_used,
            batch,
            config.threads,
        )
        .map_err(|e| as_divergence(epoch, e))?;
        opt_eta
            .step_with_lr(&mut eta, &descend(&est.grad_eta), lr(config.lr_eta))
            .map_err(|e| as_divergence(epoch, e))?;
        if !theta.is_empty() {
            opt_theta
                .step_with_lr(&mut theta, &descend(&est.grad_theta), lr(config.lr_eta))
                .map_err(|e| as_divergence(epoch, e))?;
            model.set_theta(&theta)?;
        }

        // Discriminator player.
        let (disc_objective, disc_mean) = if use_disc {
            let pos: Vec<Vector> = particles
                .iter()
                .flat_map(|p| steps_used.iter().map(move |&t| p.traj.states[t].clone()))
                .collect();
            let neg: Vec<Vector> = particles.iter().map(|p| p.traj.states[0].clone()).collect();
            let (obj, g) = d_loss_grad(&disc, &pos, &neg)?;
            opt_disc
                .step_with_lr(&mut disc.net.params, &descend(&g), lr(config.lr_disc))
                .map_err(|e| as_divergence(epoch, e))?;
            (obj, est.mean_logit)
        } else {
            (f64::NAN, f64::NAN)
        };

        let spread = est.std_error * (config.particles as f64).sqrt();
        monitor.observe(epoch, est.value, spread)?;
        log.rows.push(LogRow {
            epoch,
            surrogate: est.value,
            surrogate_se: est.std_error,
            disc_objective,
            disc_mean_qtilde: disc_mean,
        });
        if config.checkpoint_every > 0 && (epoch + 1) % config.checkpoint_every == 0 {
            log.checkpoints.push(snapshot(epoch + 1, &phi, &eta, &theta));
        }
        if epoch % 100 == 0 {
            log::debug!("epoch {epoch}: surrogate {:.6} (se {:.3e})", est.value, est.std_error);
        }
    }
    Ok(TrainOutcome {
        phi,
        eta,
        theta,
        disc,
        log,
    })
}

/// Re-runs the chains of `particles` from the same proposal noise and chain
/// noise under different proposal or kernel parameters.
pub fn resimulate<M, K>(
    model: &M,
    kernel: &K,
    phi: &VariationalParams,
    eta: &[f64],
    particles: &[Particle],
    batch: Option<&[usize]>,
) -> Result<Vec<Particle>>
where
    M: TargetModel + ?Sized,
    K: Transition<M> + ?Sized,
{
    particles
        .iter()
        .map(|p| {
            let traj = replay(kernel, model, eta, phi.reparam(&p.eps), p.traj.noise.clone(), batch)?;
            Ok(Particle { eps: p.eps.clone(), traj })
        })
        .collect()
}
