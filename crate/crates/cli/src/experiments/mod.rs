//! One module per experiment. Each reads its keys from a [`Config`],
//! writes its artifacts into the output directory and returns its metrics.

mod bridge;
mod checks;
mod logistic;
mod nb;
mod toy2d;

use std::path::{Path, PathBuf};
use std::time::Instant;

use mivi_core::evaluation::{summarize, PosteriorSummary};
use mivi_core::models::TargetModel;
use mivi_core::trainer::{simulate_particles, train, TrainOutcome, TrainerConfig};
use mivi_core::transitions::{SgldKernel, StepSchedule, Transition};
use mivi_core::variational::VariationalParams;
use mivi_core::Vector;
use serde_json::{json, Value};

use crate::config::{Config, Experiment};
use crate::error::{CliError, Context, Result};
use crate::output::{summary_json, write_json, write_samples, write_train_log};

/// Epoch index used for the post-training draws; far from any training
/// epoch so the streams never coincide.
const EVAL_EPOCH: u64 = 1 << 62;

#[derive(Clone, Debug, Default)]
pub struct RunOptions {
    pub threads: usize,
    pub out: Option<PathBuf>,
}

#[derive(Clone, Debug)]
pub struct RunReport {
    pub experiment: Experiment,
    pub out_dir: PathBuf,
    pub metrics: Value,
}

/// Loads a config file and runs the experiment it names.
pub fn run(config_path: &Path, options: &RunOptions) -> Result<RunReport> {
    let cfg = Config::load(config_path)?;
    run_config(&cfg, options)
}

pub fn run_config(cfg: &Config, options: &RunOptions) -> Result<RunReport> {
    cfg.check_keys(allowed_keys(cfg.experiment))?;
    let out_dir = cfg.output_dir(options.out.as_deref())?;
    let threads = options.threads.max(1);
    let started = Instant::now();
    log::info!("running {} (seed {}) into {}", cfg.experiment, cfg.seed, out_dir.display());
    let metrics = match cfg.experiment {
        Experiment::Toy2d => toy2d::run(cfg, &out_dir, threads)?,
        Experiment::Nb => nb::run(cfg, &out_dir, threads)?,
        Experiment::Logistic => logistic::run(cfg, &out_dir, threads)?,
        Experiment::Bridge => bridge::run(cfg, &out_dir, threads)?,
        Experiment::Gradcheck => checks::gradcheck(cfg, &out_dir)?,
        Experiment::Klcheck => checks::klcheck(cfg, &out_dir)?,
        Experiment::Evidence => checks::evidence(cfg, &out_dir, threads)?,
    };
    write_json(&out_dir.join("metrics.json"), &metrics)?;
    log::info!("{} finished in {:.1?}", cfg.experiment, started.elapsed());
    Ok(RunReport {
        experiment: cfg.experiment,
        out_dir,
        metrics,
    })
}

pub fn allowed_keys(experiment: Experiment) -> &'static [&'static str] {
    match experiment {
        Experiment::Toy2d => toy2d::KEYS,
        Experiment::Nb => nb::KEYS,
        Experiment::Logistic => logistic::KEYS,
        Experiment::Bridge => bridge::KEYS,
        Experiment::Gradcheck => checks::GRADCHECK_KEYS,
        Experiment::Klcheck => checks::KLCHECK_KEYS,
        Experiment::Evidence => checks::EVIDENCE_KEYS,
    }
}

pub(crate) fn sgld_kernel(cfg: &Config, dim: usize, steps: usize, default_step: f64) -> Result<(SgldKernel, Vec<f64>)> {
    let schedule = match cfg.str_or("kernel.schedule", "shared")? {
        "shared" => StepSchedule::Shared,
        "per_step" => StepSchedule::PerStep,
        other => {
            return Err(CliError::config(
                "kernel.schedule",
                format!("expected 'shared' or 'per_step', got '{other}'"),
            ))
        }
    };
    let per_dim = cfg.bool_or("kernel.per_dim", false)?;
    let step = cfg.positive_or("kernel.init_step", default_step)?;
    let kernel = SgldKernel::new(dim, steps, schedule, per_dim);
    let eta0 = kernel.init_params(step.ln());
    Ok((kernel, eta0))
}

/// Initial proposal from `init.mean` (scalar or per-coordinate) and
/// `init.log_var`.
pub(crate) fn initial_proposal(cfg: &Config, default_mean: &[f64], default_log_var: f64) -> Result<VariationalParams> {
    let dim = default_mean.len();
    let expand = |key: &str, default: Vec<f64>| -> Result<Vector> {
        let v = cfg.f64_list_opt(key)?.unwrap_or(default);
        match v.len() {
            1 => Ok(Vector::from_element(dim, v[0])),
            n if n == dim => Ok(Vector::from_vec(v)),
            n => Err(CliError::config(key, format!("expected 1 or {dim} values, got {n}"))),
        }
    };
    let mean = expand("init.mean", default_mean.to_vec())?;
    let log_var = expand("init.log_var", vec![default_log_var])?;
    VariationalParams::new(mean, log_var).map_err(|e| CliError::config("init", e.to_string()))
}

/// A trained model together with fresh draws from `q_phi` and `q_tilde`.
pub(crate) struct Trained {
    pub outcome: TrainOutcome,
    pub trainer: TrainerConfig,
    pub qtilde_samples: Vec<Vector>,
    pub q_summary: PosteriorSummary,
    pub qtilde_summary: PosteriorSummary,
}

/// Trains, draws `eval.samples` proposals and their chain end points, and
/// writes the common artifacts: `train_log.csv`, `samples_q.csv`,
/// `samples_qtilde.csv`, `summary.json` (of `q_tilde`) and
/// `checkpoints.json`.
pub(crate) fn train_and_report<M, K>(
    cfg: &Config,
    out_dir: &Path,
    model: &mut M,
    kernel: &K,
    phi0: VariationalParams,
    eta0: Vec<f64>,
    trainer: TrainerConfig,
) -> Result<Trained>
where
    M: TargetModel,
    K: Transition<M>,
{
    let samples = cfg.count_or("eval.samples", 5000, 100)?;
    let started = Instant::now();
    let outcome = train(model, kernel, phi0, eta0, &trainer).context("training")?;
    log::info!(
        "trained {} epochs in {:.1?}; final surrogate {:.6}",
        trainer.epochs,
        started.elapsed(),
        outcome.log.rows.last().map_or(f64::NAN, |r| r.surrogate)
    );
    let particles = simulate_particles(
        model,
        kernel,
        &outcome.phi,
        &outcome.eta,
        trainer.steps,
        samples,
        trainer.seed,
        EVAL_EPOCH,
        None,
        trainer.threads,
    )
    .context("drawing evaluation samples")?;
    let q_samples: Vec<Vector> = particles.iter().map(|p| p.traj.states[0].clone()).collect();
    let qtilde_samples: Vec<Vector> = particles.iter().map(|p| p.traj.last().clone()).collect();
    let names = model.variable_names();
    let q_summary = summarize(&names, &q_samples).context("summarizing q samples")?;
    let qtilde_summary = summarize(&names, &qtilde_samples).context("summarizing q_tilde samples")?;

    write_train_log(&out_dir.join("train_log.csv"), &outcome.log)?;
    write_samples(&out_dir.join("samples_q.csv"), &names, &q_samples)?;
    write_samples(&out_dir.join("samples_qtilde.csv"), &names, &qtilde_samples)?;
    write_json(&out_dir.join("summary.json"), &summary_json(&qtilde_summary))?;
    let checkpoints = json!({
        "experiment": cfg.experiment.name(),
        "seed": cfg.seed,
        "config": cfg.entries(),
        "trainer": trainer,
        "kernel_param_names": kernel.param_names(),
        "checkpoints": outcome.log.checkpoints,
        "final": {
            "phi_mean": outcome.phi.mean.as_slice(),
            "phi_log_var": outcome.phi.log_var.as_slice(),
            "eta": outcome.eta,
            "theta": outcome.theta,
            "discriminator": outcome.disc.net.params,
        },
    });
    write_json(&out_dir.join("checkpoints.json"), &checkpoints)?;
    Ok(Trained {
        outcome,
        trainer,
        qtilde_samples,
        q_summary,
        qtilde_summary,
    })
}

/// Sample correlation of coordinates `i` and `j` from a summary.
pub(crate) fn corr(summary: &PosteriorSummary, i: usize, j: usize) -> f64 {
    summary.corr[(i, j)]
}

pub(crate) fn summary_value(summary: &PosteriorSummary) -> Value {
    summary_json(summary)
}
