//! Numerical checks that need no data: the gradient suites, the KL
//! sequence of a Gaussian autoregressive chain, and evidence estimation on
//! a conjugate model.

use std::path::Path;

use mivi_core::evaluation::{
    ar1_marginals, check_proposal_bound, gaussian_kl, grid_kl, marginal_loglik_is, QuadratureGrid,
};
use mivi_core::gradcheck::run_gradient_suites;
use mivi_core::models::{Batch, ConjugateGaussian, TargetModel, Toy2d, Toy2dKind};
use mivi_core::numerics::LN_2PI;
use mivi_core::trainer::TrainerConfig;
use mivi_core::transitions::{SgldKernel, StepSchedule};
use mivi_core::variational::VariationalParams;
use mivi_core::{Matrix, RngStream, Vector};
use serde_json::{json, Value};

use super::{initial_proposal, sgld_kernel, summary_value, train_and_report};
use crate::config::Config;
use crate::error::{CliError, Context, Result};
use crate::output::{write_json, write_table};

pub const GRADCHECK_KEYS: &[&str] = &["gradcheck.configurations", "gradcheck.tolerance"];

pub const KLCHECK_KEYS: &[&str] = &[
    "klcheck.coef",
    "klcheck.mean0",
    "klcheck.var0",
    "klcheck.steps",
    "klcheck.lower",
    "klcheck.upper",
    "klcheck.cells",
    "klcheck.tolerance",
];

pub const EVIDENCE_KEYS: &[&str] = &[
    "model.dim",
    "model.n",
    "model.noise_sd",
    "model.prior_sd",
    "model.learn_noise",
    "kernel.schedule",
    "kernel.per_dim",
    "kernel.init_step",
    "init.mean",
    "init.log_var",
    "eval.samples",
    "evidence.samples",
    "evidence.components",
    "bound.configurations",
    "bound.samples",
    "bound.components",
    "bound.steps",
];

const STREAM_DATA: u64 = 0x6576;
const STREAM_IS: u64 = 0x6973;
const STREAM_BOUND: u64 = 0x7032;

pub fn gradcheck(cfg: &Config, out_dir: &Path) -> Result<Value> {
    let configs = cfg.count_or("gradcheck.configurations", 20, 1)?;
    let tolerance = cfg.positive_or("gradcheck.tolerance", 1e-4)?;
    let reports = run_gradient_suites(cfg.seed, configs).context("gradient suites")?;
    let worst = reports.iter().map(|r| r.max_rel_error).fold(0.0, f64::max);
    let suites: serde_json::Map<String, Value> = reports
        .iter()
        .map(|r| {
            (
                r.name.clone(),
                json!({"configurations": r.configurations, "max_rel_error": r.max_rel_error}),
            )
        })
        .collect();
    let passed = reports.iter().all(|r| r.max_rel_error <= tolerance);
    let metrics = json!({
        "tolerance": tolerance,
        "max_rel_error": worst,
        "passed": passed,
        "suites": suites,
    });
    if !passed {
        write_json(&out_dir.join("metrics.json"), &metrics)?;
        let failing: Vec<&str> = reports
            .iter()
            .filter(|r| r.max_rel_error > tolerance)
            .map(|r| r.name.as_str())
            .collect();
        return Err(CliError::CheckFailed(format!(
            "gradient suites above tolerance {tolerance:e}: {}",
            failing.join(", ")
        )));
    }
    Ok(metrics)
}

fn normal_pdf(x: f64, mean: f64, var: f64) -> f64 {
    (-0.5 * ((x - mean).powi(2) / var + var.ln() + LN_2PI)).exp()
}

/// KL from each marginal of `z' = c z + sqrt(1 - c^2) xi` to its N(0, 1)
/// stationary law, in closed form and by quadrature.
pub fn klcheck(cfg: &Config, out_dir: &Path) -> Result<Value> {
    let coef = cfg.f64_or("klcheck.coef", 0.9)?;
    if !(coef.abs() < 1.0) {
        return Err(CliError::config("klcheck.coef", "must lie strictly between -1 and 1"));
    }
    let mean0 = cfg.f64_or("klcheck.mean0", 5.0)?;
    let var0 = cfg.positive_or("klcheck.var0", 1.0)?;
    let steps = cfg.count_or("klcheck.steps", 20, 1)?;
    let lower = cfg.f64_or("klcheck.lower", -15.0)?;
    let upper = cfg.f64_or("klcheck.upper", 20.0)?;
    let cells = cfg.count_or("klcheck.cells", 20_000, 10)?;
    let tolerance = cfg.positive_or("klcheck.tolerance", 1e-6)?;
    let grid = QuadratureGrid::uniform_1d(lower, upper, cells).map_err(|e| CliError::config("klcheck", e.to_string()))?;
    let stationary = grid.tabulate(|x| normal_pdf(x[0], 0.0, 1.0));
    let noise_sd = (1.0 - coef * coef).sqrt();
    let marginals = ar1_marginals(coef, noise_sd, mean0, var0, steps);
    let mut rows = Vec::with_capacity(marginals.len());
    for (t, &(m, v)) in marginals.iter().enumerate() {
        let exact = gaussian_kl(m, v, 0.0, 1.0);
        let quad = grid_kl(|x| normal_pdf(x[0], m, v), &stationary, &grid).context("grid KL")?;
        rows.push([t as f64, m, v, exact, quad, (exact - quad).abs()]);
    }
    let header: Vec<String> = ["step", "mean", "var", "kl_closed_form", "kl_grid", "abs_diff"]
        .map(String::from)
        .to_vec();
    write_table(&out_dir.join("kl_sequence.csv"), &header, &rows)?;
    let strictly_decreasing = rows.windows(2).all(|w| w[1][3] < w[0][3] && w[1][4] < w[0][4]);
    let max_diff = rows.iter().map(|r| r[5]).fold(0.0, f64::max);
    Ok(json!({
        "steps": steps,
        "kl_closed_form": rows.iter().map(|r| r[3]).collect::<Vec<f64>>(),
        "kl_grid": rows.iter().map(|r| r[4]).collect::<Vec<f64>>(),
        "max_abs_diff": max_diff,
        "tolerance": tolerance,
        "strictly_decreasing": strictly_decreasing,
        "passed": strictly_decreasing && max_diff <= tolerance,
    }))
}

/// Hides a model's hyperparameters from the trainer so they stay fixed.
struct Frozen<M>(M);

impl<M: TargetModel> TargetModel for Frozen<M> {
    fn dim(&self) -> usize {
        self.0.dim()
    }

    fn n_data(&self) -> usize {
        self.0.n_data()
    }

    fn variable_names(&self) -> Vec<String> {
        self.0.variable_names()
    }

    fn log_joint(&self, z: &Vector, batch: Batch) -> mivi_core::Result<f64> {
        self.0.log_joint(z, batch)
    }

    fn grad_z(&self, z: &Vector, batch: Batch) -> mivi_core::Result<Vector> {
        self.0.grad_z(z, batch)
    }

    fn hvp(&self, z: &Vector, v: &Vector, batch: Batch) -> mivi_core::Result<Vector> {
        self.0.hvp(z, v, batch)
    }
}

pub fn evidence_defaults() -> TrainerConfig {
    TrainerConfig {
        particles: 200,
        steps: 5,
        warmup: 100,
        epochs: 1000,
        ..TrainerConfig::default()
    }
}

/// Trains on a conjugate Gaussian model, compares the importance-sampled
/// evidence with the exact value, and checks on random proposals and step
/// sizes over the toy targets that the mixture-density bound never exceeds
/// the proposal bound.
pub fn evidence(cfg: &Config, out_dir: &Path, threads: usize) -> Result<Value> {
    let dim = cfg.count_or("model.dim", 2, 1)?;
    let n = cfg.count_or("model.n", 20, 1)?;
    let noise_sd = cfg.positive_or("model.noise_sd", 1.0)?;
    let prior_sd = cfg.positive_or("model.prior_sd", 2.0)?;
    let mut rng = RngStream::derive(cfg.seed, &[STREAM_DATA]);
    let truth: Vec<f64> = (0..dim).map(|_| prior_sd * rng.normal()).collect();
    let data = Matrix::from_fn(n, dim, |_, k| truth[k] + noise_sd * rng.normal());
    let conj = ConjugateGaussian::new(data, noise_sd, prior_sd).context("conjugate model")?;
    let trainer = cfg.trainer(evidence_defaults(), threads)?;
    let (kernel, eta0) = sgld_kernel(cfg, dim, trainer.steps, 1e-3)?;
    let phi0 = initial_proposal(cfg, &vec![0.0; dim], 0.0)?;
    let samples = cfg.count_or("evidence.samples", 1000, 100)?;
    let components = cfg.count_or("evidence.components", 50, 1)?;

    let (trained, exact, estimate) = if cfg.bool_or("model.learn_noise", false)? {
        let mut model = conj;
        let trained = train_and_report(cfg, out_dir, &mut model, &kernel, phi0, eta0, trainer)?;
        let mut rng = RngStream::derive(cfg.seed, &[STREAM_IS]);
        let est = marginal_loglik_is(&model, &kernel, &trained.outcome.phi, &trained.outcome.eta, trained.trainer.steps, samples, components, &mut rng)
            .context("importance-sampled evidence")?;
        (trained, model.log_evidence(), est)
    } else {
        let mut model = Frozen(conj);
        let trained = train_and_report(cfg, out_dir, &mut model, &kernel, phi0, eta0, trainer)?;
        let mut rng = RngStream::derive(cfg.seed, &[STREAM_IS]);
        let est = marginal_loglik_is(&model, &kernel, &trained.outcome.phi, &trained.outcome.eta, trained.trainer.steps, samples, components, &mut rng)
            .context("importance-sampled evidence")?;
        (trained, model.0.log_evidence(), est)
    };

    let bound_configs = cfg.count_or("bound.configurations", 20, 1)?;
    let bound_samples = cfg.count_or("bound.samples", 500, 2)?;
    let bound_components = cfg.count_or("bound.components", 50, 1)?;
    let bound_steps = cfg.count_or("bound.steps", 5, 1)?;
    let kinds = [Toy2dKind::CorrelatedGaussian, Toy2dKind::Banana, Toy2dKind::Mixture];
    let mut rng = RngStream::derive(cfg.seed, &[STREAM_BOUND]);
    let mut bound_rows = Vec::with_capacity(bound_configs);
    let mut holds = 0;
    for c in 0..bound_configs {
        let target = Toy2d::new(kinds[c % kinds.len()]);
        let kernel = SgldKernel::new(2, bound_steps, StepSchedule::Shared, false);
        let eta = kernel.init_params(-4.0 + 3.5 * rng.uniform());
        let mean = Vector::from_vec(rng.normals(2));
        let log_var = Vector::from_fn(2, |_, _| -2.0 + 3.0 * rng.uniform());
        let phi = VariationalParams::new(mean, log_var).context("random proposal")?;
        let check = check_proposal_bound(&target, &kernel, &phi, &eta, bound_steps, bound_samples, bound_components, &mut rng)
            .context("proposal bound check")?;
        let ok = check.holds(3.0);
        holds += usize::from(ok);
        bound_rows.push([c as f64, eta[0].exp(), check.refined, check.proposal, check.std_error, f64::from(u8::from(ok))]);
    }
    let header: Vec<String> = ["configuration", "step_size", "refined_bound", "proposal_bound", "std_error", "holds"]
        .map(String::from)
        .to_vec();
    write_table(&out_dir.join("bound_checks.csv"), &header, &bound_rows)?;

    Ok(json!({
        "log_evidence_exact": exact,
        "log_evidence_is": estimate.log_evidence,
        "std_error": estimate.std_error,
        "abs_error": (estimate.log_evidence - exact).abs(),
        "importance_samples": samples,
        "components": components,
        "step_sizes": trained.outcome.eta.iter().map(|e| e.exp()).collect::<Vec<f64>>(),
        "bound_configurations": bound_configs,
        "bound_holds": holds,
        "summary_qtilde": summary_value(&trained.qtilde_summary),
    }))
}
