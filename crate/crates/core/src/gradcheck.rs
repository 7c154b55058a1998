//! Finite-difference verification of every hand-derived derivative.
//!
//! Each suite draws random configurations (data, evaluation points,
//! parameters, cotangents) and reports the largest normwise relative error
//! between the analytic derivative and central differences.

use serde::{Deserialize, Serialize};

use crate::discriminator::{d_loss_grad, Discriminator};
use crate::error::Result;
use crate::models::{
    BridgeModel, ConjugateGaussian, GaussianTarget, LogisticModel, MixtureTarget, NegBinModel, TargetModel, Toy2d,
    Toy2dKind,
};
use crate::numerics::{
    cholesky, cholesky_adjoint, fd_directional, finite_diff_grad, relative_error, Matrix, RngStream, Vector,
};
use crate::trainer::{elbo_surrogate, phi_gradient, resimulate, simulate_particles};
use crate::transitions::{replay, run_chain, BridgeKernel, LogisticKernel, SgldKernel, StepSchedule, Transition};
use crate::variational::{cross_entropy, q_grad_params, q_grad_z, q_logpdf, VariationalParams};

const FD_STEP: f64 = 1e-6;
const HVP_STEP: f64 = 1e-5;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SuiteReport {
    pub name: String,
    pub configurations: usize,
    pub max_rel_error: f64,
}

struct Tracker {
    name: &'static str,
    configurations: usize,
    worst: f64,
}

impl Tracker {
    fn new(name: &'static str) -> Self {
        Self {
            name,
            configurations: 0,
            worst: 0.0,
        }
    }

    fn record(&mut self, err: f64) {
        self.worst = if err.is_nan() { f64::INFINITY } else { self.worst.max(err) };
    }

    fn finish(self) -> SuiteReport {
        SuiteReport {
            name: self.name.to_string(),
            configurations: self.configurations,
            max_rel_error: self.worst,
        }
    }
}

fn vec_of(x: &[f64]) -> Vector {
    Vector::from_column_slice(x)
}

fn random_vector(rng: &mut RngStream, d: usize, scale: f64) -> Vector {
    Vector::from_vec(rng.normals(d)) * scale
}

fn random_spd(rng: &mut RngStream, d: usize) -> Matrix {
    let a = Matrix::from_fn(d, d, |_, _| rng.normal());
    &a * a.transpose() / d as f64 + Matrix::identity(d, d) * 0.5
}

/// Gradient and Hessian-vector product of one model at one point.
fn check_model<M: TargetModel + ?Sized>(
    model: &M,
    z: &Vector,
    batch: Option<&[usize]>,
    rng: &mut RngStream,
    tracker: &mut Tracker,
) -> Result<()> {
    let grad = model.grad_z(z, batch)?;
    let fd = finite_diff_grad(|x| model.log_joint(&vec_of(x), batch), z.as_slice(), FD_STEP)?;
    tracker.record(relative_error(grad.as_slice(), &fd));
    let v = random_vector(rng, z.len(), 1.0);
    let hv = model.hvp(z, &v, batch)?;
    let h = HVP_STEP * (1.0 + z.amax());
    let fd_hv = fd_directional(
        |x| Ok(model.grad_z(&vec_of(x), batch)?.as_slice().to_vec()),
        z.as_slice(),
        v.as_slice(),
        h,
    )?;
    tracker.record(relative_error(hv.as_slice(), &fd_hv));
    tracker.configurations += 1;
    Ok(())
}

fn suite_toy(rng: &mut RngStream, configs: usize) -> Result<SuiteReport> {
    let mut t = Tracker::new("models.toy");
    for c in 0..configs {
        let z = random_vector(rng, 2, 2.0);
        match c % 4 {
            0 => check_model(&Toy2d::new(Toy2dKind::CorrelatedGaussian), &z, None, rng, &mut t)?,
            1 => check_model(&Toy2d::new(Toy2dKind::Banana), &z, None, rng, &mut t)?,
            2 => check_model(&Toy2d::new(Toy2dKind::Mixture), &z, None, rng, &mut t)?,
            _ => {
                let d = 2 + c % 3;
                let comps = (0..2)
                    .map(|_| GaussianTarget::new(random_vector(rng, d, 1.5), random_spd(rng, d)))
                    .collect::<Result<Vec<_>>>()?;
                let w = 0.2 + 0.6 * rng.uniform();
                let mix = MixtureTarget::new(&[w, 1.0 - w], comps)?;
                check_model(&mix, &random_vector(rng, d, 1.5), None, rng, &mut t)?;
            }
        }
    }
    Ok(t.finish())
}

fn random_batch(rng: &mut RngStream, n: usize, use_batch: bool) -> Option<Vec<usize>> {
    use_batch.then(|| {
        let mut idx = rng.choose_indices(n, n / 3);
        idx.sort_unstable();
        idx
    })
}

fn suite_nb(rng: &mut RngStream, configs: usize) -> Result<SuiteReport> {
    let mut t = Tracker::new("models.nb");
    for c in 0..configs {
        let r = 0.5 + 4.0 * rng.uniform();
        let p = 0.2 + 0.7 * rng.uniform();
        let model = NegBinModel::new(NegBinModel::simulate(r, p, 80, rng)?);
        let z = Vector::from_vec(vec![r.ln() + 0.5 * rng.normal(), (p / (1.0 - p)).ln() + 0.5 * rng.normal()]);
        let batch = random_batch(rng, 80, c % 2 == 1);
        check_model(&model, &z, batch.as_deref(), rng, &mut t)?;
    }
    Ok(t.finish())
}

fn suite_logistic(rng: &mut RngStream, configs: usize) -> Result<SuiteReport> {
    let mut t = Tracker::new("models.logistic");
    for c in 0..configs {
        let model = LogisticModel::simulate(60, rng)?;
        let z = random_vector(rng, 4, 1.5);
        let batch = random_batch(rng, 60, c % 2 == 1);
        check_model(&model, &z, batch.as_deref(), rng, &mut t)?;
    }
    Ok(t.finish())
}

fn random_bridge(rng: &mut RngStream, alpha: f64, n: usize, p: usize) -> Result<BridgeModel> {
    let x = Matrix::from_fn(n, p, |_, _| rng.normal());
    let beta = random_vector(rng, p, 1.0);
    let y = &x * beta + random_vector(rng, n, 0.5);
    BridgeModel::new(x, y, alpha, 0.5 + rng.uniform())
}

fn bridge_point(rng: &mut RngStream, p: usize) -> Vector {
    // keep coefficients away from the kink of |beta|^alpha at zero
    let mut z = Vector::from_fn(p + 1, |_, _| {
        let v: f64 = rng.normal();
        v.signum() * (0.2 + v.abs())
    });
    z[p] = 0.5 * rng.normal();
    z
}

fn suite_bridge(rng: &mut RngStream, configs: usize) -> Result<SuiteReport> {
    let mut t = Tracker::new("models.bridge");
    for c in 0..configs {
        let alpha = [0.5, 1.0, 1.5][c % 3];
        let model = random_bridge(rng, alpha, 40, 4)?;
        let z = bridge_point(rng, 4);
        check_model(&model, &z, None, rng, &mut t)?;
    }
    Ok(t.finish())
}

fn random_conjugate(rng: &mut RngStream, n: usize, d: usize) -> Result<ConjugateGaussian> {
    let data = Matrix::from_fn(n, d, |_, _| 1.0 + rng.normal());
    ConjugateGaussian::new(data, 0.5 + rng.uniform(), 1.0 + rng.uniform())
}

fn suite_conjugate(rng: &mut RngStream, configs: usize) -> Result<SuiteReport> {
    let mut t = Tracker::new("models.conjugate");
    for _ in 0..configs {
        let model = random_conjugate(rng, 12, 2)?;
        let z = random_vector(rng, 2, 1.0);
        check_model(&model, &z, None, rng, &mut t)?;
        let theta = model.theta();
        let with_theta = |th: &[f64]| -> Result<ConjugateGaussian> {
            let mut m = model.clone();
            m.set_theta(th)?;
            Ok(m)
        };
        let g = model.grad_theta(&z, None)?;
        let fd = finite_diff_grad(|th| with_theta(th)?.log_joint(&z, None), &theta, FD_STEP)?;
        t.record(relative_error(&g, &fd));
        let w = random_vector(rng, 2, 1.0);
        let vjp = model.grad_z_theta_vjp(&z, &w, None)?;
        let fd = finite_diff_grad(|th| Ok(with_theta(th)?.grad_z(&z, None)?.dot(&w)), &theta, FD_STEP)?;
        t.record(relative_error(&vjp, &fd));
    }
    Ok(t.finish())
}

fn suite_cholesky(rng: &mut RngStream, configs: usize) -> Result<SuiteReport> {
    let mut t = Tracker::new("numerics.cholesky_adjoint");
    for c in 0..configs {
        let d = 2 + c % 5;
        let a = random_spd(rng, d);
        let l_bar = Matrix::from_fn(d, d, |i, j| if i >= j { rng.normal() } else { 0.0 });
        let a_bar = cholesky_adjoint(&cholesky(&a)?, &l_bar)?;
        // perturb symmetric pairs together
        let pairs: Vec<(usize, usize)> = (0..d).flat_map(|i| (0..=i).map(move |j| (i, j))).collect();
        let base: Vec<f64> = pairs.iter().map(|&(i, j)| a[(i, j)]).collect();
        let loss = |x: &[f64]| -> Result<f64> {
            let mut m = a.clone();
            for (k, &(i, j)) in pairs.iter().enumerate() {
                m[(i, j)] = x[k];
                m[(j, i)] = x[k];
            }
            Ok(cholesky(&m)?.component_mul(&l_bar).sum())
        };
        let fd = finite_diff_grad(loss, &base, FD_STEP)?;
        let analytic: Vec<f64> = pairs
            .iter()
            .map(|&(i, j)| if i == j { a_bar[(i, i)] } else { a_bar[(i, j)] + a_bar[(j, i)] })
            .collect();
        t.record(relative_error(&analytic, &fd));
        t.configurations += 1;
    }
    Ok(t.finish())
}

fn random_discriminator(rng: &mut RngStream, d: usize) -> Result<Discriminator> {
    let mut disc = Discriminator::new(d, 8, rng)?;
    for w in disc.net.params.iter_mut() {
        *w = 0.6 * rng.normal();
    }
    Ok(disc)
}

fn suite_discriminator(rng: &mut RngStream, configs: usize) -> Result<SuiteReport> {
    let mut t = Tracker::new("discriminator");
    for c in 0..configs {
        let d = 1 + c % 4;
        let disc = random_discriminator(rng, d)?;
        let pos: Vec<Vector> = (0..6).map(|_| random_vector(rng, d, 1.0)).collect();
        let neg: Vec<Vector> = (0..3).map(|_| random_vector(rng, d, 1.5)).collect();
        let (_, g) = d_loss_grad(&disc, &pos, &neg)?;
        let fd = finite_diff_grad(
            |w| {
                let mut other = disc.clone();
                other.net.params.copy_from_slice(w);
                Ok(d_loss_grad(&other, &pos, &neg)?.0)
            },
            &disc.net.params,
            FD_STEP,
        )?;
        t.record(relative_error(&g, &fd));
        let (_, input_grads) = disc.logits_and_input_grads(&pos[..1])?;
        let fd = finite_diff_grad(|x| Ok(disc.logits(&[vec_of(x)])?[0]), pos[0].as_slice(), FD_STEP)?;
        t.record(relative_error(input_grads[0].as_slice(), &fd));
        t.configurations += 1;
    }
    Ok(t.finish())
}

fn suite_variational(rng: &mut RngStream, configs: usize) -> Result<SuiteReport> {
    let mut t = Tracker::new("variational");
    for c in 0..configs {
        let d = 1 + c % 4;
        let phi = VariationalParams::new(random_vector(rng, d, 1.0), random_vector(rng, d, 0.5))?;
        let z = random_vector(rng, d, 1.5);
        let flat = phi.to_flat();
        let g = q_grad_params(&phi, &z);
        let fd = finite_diff_grad(|w| q_logpdf(&VariationalParams::from_flat(w)?, &z), &flat, FD_STEP)?;
        t.record(relative_error(&g, &fd));
        let gz = q_grad_z(&phi, &z);
        let fd = finite_diff_grad(|x| q_logpdf(&phi, &vec_of(x)), z.as_slice(), FD_STEP)?;
        t.record(relative_error(gz.as_slice(), &fd));
        let samples: Vec<Vector> = (0..5).map(|_| random_vector(rng, d, 1.0)).collect();
        let (_, g) = cross_entropy(&phi, &samples)?;
        let fd = finite_diff_grad(|w| Ok(cross_entropy(&VariationalParams::from_flat(w)?, &samples)?.0), &flat, FD_STEP)?;
        t.record(relative_error(&g, &fd));
        t.configurations += 1;
    }
    Ok(t.finish())
}

/// Reverse-mode chain derivative of `sum_t c_t . z_t` against central
/// differences in the kernel parameters and the starting point.
fn check_chain<M, K>(
    kernel: &K,
    model: &M,
    params: &[f64],
    z0: &Vector,
    steps: usize,
    rng: &mut RngStream,
    tracker: &mut Tracker,
) -> Result<()>
where
    M: TargetModel + ?Sized,
    K: Transition<M> + ?Sized,
{
    let traj = run_chain(kernel, model, params, z0.clone(), steps, rng, None)?;
    let cot: Vec<Vector> = (0..=steps).map(|_| random_vector(rng, z0.len(), 1.0)).collect();
    let grads = kernel.backward(model, params, &traj, &cot, None)?;
    let loss = |p: &[f64], start: &Vector| -> Result<f64> {
        let tr = replay(kernel, model, p, start.clone(), traj.noise.clone(), None)?;
        Ok(tr.states.iter().zip(&cot).map(|(z, c)| z.dot(c)).sum())
    };
    let fd = finite_diff_grad(|p| loss(p, z0), params, FD_STEP)?;
    tracker.record(relative_error(&grads.params, &fd));
    let fd = finite_diff_grad(|x| loss(params, &vec_of(x)), z0.as_slice(), FD_STEP)?;
    tracker.record(relative_error(grads.z0.as_slice(), &fd));
    tracker.configurations += 1;
    Ok(())
}

fn suite_sgld(rng: &mut RngStream, configs: usize) -> Result<SuiteReport> {
    let mut t = Tracker::new("transitions.sgld");
    for c in 0..configs {
        let steps = 1 + c % 4;
        let schedule = if c % 2 == 0 { StepSchedule::Shared } else { StepSchedule::PerStep };
        let per_dim = c % 3 == 0;
        if c % 5 == 4 {
            // hyperparameter path through the likelihood scale
            let model = random_conjugate(rng, 8, 2)?;
            let kernel = SgldKernel::new(2, steps, schedule, per_dim);
            let params: Vec<f64> = kernel.init_params(-3.0).iter().map(|p| p + 0.3 * rng.normal()).collect();
            let z0 = random_vector(rng, 2, 1.0);
            check_chain(&kernel, &model, &params, &z0, steps, rng, &mut t)?;
            let traj = run_chain(&kernel, &model, &params, z0.clone(), steps, rng, None)?;
            let cot: Vec<Vector> = (0..=steps).map(|_| random_vector(rng, 2, 1.0)).collect();
            let grads = kernel.backward(&model, &params, &traj, &cot, None)?;
            let fd = finite_diff_grad(
                |th| {
                    let mut m = model.clone();
                    m.set_theta(th)?;
                    let tr = replay(&kernel, &m, &params, z0.clone(), traj.noise.clone(), None)?;
                    Ok(tr.states.iter().zip(&cot).map(|(z, c)| z.dot(c)).sum())
                },
                &model.theta(),
                FD_STEP,
            )?;
            t.record(relative_error(&grads.theta, &fd));
        } else {
            let d = 2 + c % 2;
            let model = MixtureTarget::new(
                &[0.4, 0.6],
                vec![
                    GaussianTarget::new(random_vector(rng, d, 1.0), random_spd(rng, d))?,
                    GaussianTarget::new(random_vector(rng, d, 1.0), random_spd(rng, d))?,
                ],
            )?;
            let kernel = SgldKernel::new(d, steps, schedule, per_dim);
            let params: Vec<f64> = kernel.init_params(-1.5).iter().map(|p| p + 0.3 * rng.normal()).collect();
            check_chain(&kernel, &model, &params, &random_vector(rng, d, 1.0), steps, rng, &mut t)?;
        }
    }
    Ok(t.finish())
}

fn suite_logistic_kernel(rng: &mut RngStream, configs: usize) -> Result<SuiteReport> {
    let mut t = Tracker::new("transitions.logistic");
    for c in 0..configs {
        let model = LogisticModel::simulate(25, rng)?;
        let kernel = LogisticKernel::new(5, rng)?;
        let params: Vec<f64> = kernel.init_params().iter().map(|p| p + 0.3 * rng.normal()).collect();
        let z0 = random_vector(rng, 4, 1.0);
        check_chain(&kernel, &model, &params, &z0, 1 + c % 2, rng, &mut t)?;
    }
    Ok(t.finish())
}

fn suite_bridge_kernel(rng: &mut RngStream, configs: usize) -> Result<SuiteReport> {
    let mut t = Tracker::new("transitions.bridge");
    for c in 0..configs {
        let alpha = [0.5, 1.0, 1.5][c % 3];
        let model = random_bridge(rng, alpha, 30, 3)?;
        let kernel = BridgeKernel::new(&model);
        let params: Vec<f64> = kernel.init_params().iter().map(|_| 0.3 * rng.normal()).collect();
        let z0 = bridge_point(rng, 3);
        check_chain(&kernel, &model, &params, &z0, 1 + c % 3, rng, &mut t)?;
    }
    Ok(t.finish())
}

/// Kernel-parameter, hyperparameter and proposal gradients of the training
/// objectives against differences of the re-simulated objective with the
/// same proposal and chain noise.
fn suite_trainer(rng: &mut RngStream, configs: usize) -> Result<SuiteReport> {
    let mut t = Tracker::new("trainer.eta_path");
    for c in 0..configs {
        let steps = 1 + c % 5;
        let model = random_conjugate(rng, 6, 2)?;
        let kernel = SgldKernel::new(2, steps, StepSchedule::PerStep, c % 2 == 0);
        let eta: Vec<f64> = kernel.init_params(-2.0).iter().map(|p| p + 0.3 * rng.normal()).collect();
        let phi = VariationalParams::new(random_vector(rng, 2, 0.5), random_vector(rng, 2, 0.3))?;
        let disc = random_discriminator(rng, 2)?;
        let used: Vec<usize> = if c % 3 == 0 { vec![steps] } else { (1..=steps).collect() };
        let particles = simulate_particles(&model, &kernel, &phi, &eta, steps, 4, rng.next_u64(), 0, None, 1)?;
        let est = elbo_surrogate(&model, &kernel, &phi, &eta, Some(&disc), &particles, &used, None, 1)?;
        let value = |m: &ConjugateGaussian, e: &[f64]| -> Result<f64> {
            let parts = resimulate(m, &kernel, &phi, e, &particles, None)?;
            Ok(elbo_surrogate(m, &kernel, &phi, e, Some(&disc), &parts, &used, None, 1)?.value)
        };
        let fd = finite_diff_grad(|e| value(&model, e), &eta, FD_STEP)?;
        t.record(relative_error(&est.grad_eta, &fd));
        let fd = finite_diff_grad(
            |th| {
                let mut m = model.clone();
                m.set_theta(th)?;
                value(&m, &eta)
            },
            &model.theta(),
            FD_STEP,
        )?;
        t.record(relative_error(&est.grad_theta, &fd));
        // proposal gradient including the path through the chain
        let g = phi_gradient(&model, &kernel, &phi, &eta, &particles, &used, false, None)?;
        let fd = finite_diff_grad(
            |w| {
                let cur = VariationalParams::from_flat(w)?;
                let parts = resimulate(&model, &kernel, &cur, &eta, &particles, None)?;
                let samples: Vec<Vector> = parts
                    .iter()
                    .flat_map(|p| used.iter().map(move |&s| p.traj.states[s].clone()))
                    .collect();
                Ok(cross_entropy(&cur, &samples)?.0)
            },
            &phi.to_flat(),
            FD_STEP,
        )?;
        t.record(relative_error(&g, &fd));
        t.configurations += 1;
    }
    Ok(t.finish())
}

/// Runs every suite with `configs` random configurations each.
pub fn run_gradient_suites(seed: u64, configs: usize) -> Result<Vec<SuiteReport>> {
    type Suite = fn(&mut RngStream, usize) -> Result<SuiteReport>;
    let suites: [Suite; 12] = [
        suite_toy,
        suite_nb,
        suite_logistic,
        suite_bridge,
        suite_conjugate,
        suite_cholesky,
        suite_discriminator,
        suite_variational,
        suite_sgld,
        suite_logistic_kernel,
        suite_bridge_kernel,
        suite_trainer,
    ];
    suites
        .iter()
        .enumerate()
        .map(|(k, suite)| suite(&mut RngStream::derive(seed, &[0x6763, k as u64]), configs))
        .collect()
}
