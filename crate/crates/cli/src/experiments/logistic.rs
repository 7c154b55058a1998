//! Bayesian logistic regression with a learned mixing-weight network,
//! compared with a Polya-Gamma Gibbs sampler.

use std::path::Path;

use mivi_core::evaluation::{batch_means_se, gibbs_logistic_baseline, mahalanobis, sample_moments};
use mivi_core::models::TargetModel;
use mivi_core::trainer::TrainerConfig;
use mivi_core::transitions::{run_chain, LogisticKernel};
use mivi_core::variational::q_sample_one;
use mivi_core::{RngStream, Vector};
use rayon::prelude::*;
use serde_json::{json, Value};

use super::{corr, initial_proposal, summary_value, train_and_report};
use crate::config::Config;
use crate::error::{CliError, Context, Result};
use crate::output::write_samples;
use crate::synth::{logistic_data, read_logistic};

pub const KEYS: &[&str] = &[
    "data.path",
    "data.seed",
    "kernel.hidden",
    "init.mean",
    "init.log_var",
    "eval.samples",
    "gibbs.iters",
    "gibbs.burn_in",
    "gibbs.batches",
    "extrapolate.chains",
    "extrapolate.checkpoints",
];

const STREAM_KERNEL_INIT: u64 = 0x6b69;
const STREAM_GIBBS: u64 = 0x6762;
const STREAM_EXTRAPOLATE: u64 = 0x6578;

pub fn defaults() -> TrainerConfig {
    TrainerConfig {
        particles: 200,
        steps: 1,
        warmup: 0,
        epochs: 1000,
        ..TrainerConfig::default()
    }
}

pub fn run(cfg: &Config, out_dir: &Path, threads: usize) -> Result<Value> {
    let mut model = match cfg.existing_path_opt("data.path")? {
        Some(path) => read_logistic(&path, "data.path")?,
        None => logistic_data(cfg.u64_or("data.seed", cfg.seed)?)?,
    };
    let p = model.n_features();
    if p < 4 {
        return Err(CliError::config("data.path", format!("expected at least four predictors, found {p}")));
    }
    let names = model.variable_names();
    let trainer = cfg.trainer(defaults(), threads)?;
    let hidden = cfg.count_or("kernel.hidden", 32, 1)?;
    let kernel = LogisticKernel::new(hidden, &mut RngStream::derive(cfg.seed, &[STREAM_KERNEL_INIT]))
        .context("building the mixing-weight network")?;
    let eta0 = kernel.init_params();
    let phi0 = initial_proposal(cfg, &vec![0.0; p], 0.0)?;
    let trained = train_and_report(cfg, out_dir, &mut model, &kernel, phi0, eta0, trainer)?;

    let iters = cfg.count_or("gibbs.iters", 5000, 100)?;
    let burn_in = cfg.usize_or("gibbs.burn_in", 500)?;
    let batches = cfg.count_or("gibbs.batches", 50, 2)?;
    let mut rng = RngStream::derive(cfg.seed, &[STREAM_GIBBS]);
    let gibbs = gibbs_logistic_baseline(&model, iters, burn_in, &mut rng).context("Gibbs baseline")?;
    write_samples(&out_dir.join("baseline_samples.csv"), &names, &gibbs)?;
    let gibbs_summary = mivi_core::evaluation::summarize(&names, &gibbs).context("summarizing Gibbs draws")?;
    let gibbs_se: Vec<f64> = (0..p)
        .map(|v| {
            let series: Vec<f64> = gibbs.iter().map(|b| b[v]).collect();
            batch_means_se(&series, batches)
        })
        .collect::<mivi_core::Result<_>>()
        .map_err(|e| CliError::config("gibbs.batches", e.to_string()))?;
    let n_eval = trained.qtilde_samples.len() as f64;
    let mivi_se: Vec<f64> = (0..p).map(|v| trained.qtilde_summary.sd[v] / n_eval.sqrt()).collect();
    let combined_se: Vec<f64> = (0..p).map(|v| gibbs_se[v].hypot(mivi_se[v])).collect();
    let mean_z: Vec<f64> = (0..p)
        .map(|v| (trained.qtilde_summary.mean[v] - gibbs_summary.mean[v]) / combined_se[v])
        .collect();

    // Extrapolated chains of the learned kernel, started from the proposal.
    let chains = cfg.count_or("extrapolate.chains", 1000, 100)?;
    let checkpoints = cfg.usize_list_or("extrapolate.checkpoints", &[1, 5, 20, 100])?;
    let horizon = checkpoints.iter().copied().max().unwrap_or(0);
    if horizon == 0 {
        return Err(CliError::config("extrapolate.checkpoints", "needs a positive step count"));
    }
    let phi = &trained.outcome.phi;
    let eta = &trained.outcome.eta;
    let one_chain = |c: usize| -> mivi_core::Result<Vec<Vector>> {
        let mut rng = RngStream::derive(cfg.seed, &[STREAM_EXTRAPOLATE, c as u64]);
        let z0 = q_sample_one(phi, &mut rng).z;
        Ok(run_chain(&kernel, &model, eta, z0, horizon, &mut rng, None)?.states)
    };
    let paths: Vec<Vec<Vector>> = if threads > 1 {
        (0..chains).into_par_iter().map(one_chain).collect::<mivi_core::Result<_>>()
    } else {
        (0..chains).map(one_chain).collect::<mivi_core::Result<_>>()
    }
    .context("extrapolating the learned kernel")?;
    let (g_mean, g_cov) = sample_moments(&gibbs).context("Gibbs moments")?;
    let mut trace = Vec::new();
    for &t in &checkpoints {
        let states: Vec<Vector> = paths.iter().map(|s| s[t].clone()).collect();
        let (m, c) = sample_moments(&states).context("extrapolated moments")?;
        let dist = mahalanobis(&m, &g_mean, &g_cov).context("Mahalanobis distance")?;
        let cov_err = (&c - &g_cov).norm() / g_cov.norm();
        trace.push(json!({"step": t, "mahalanobis_mean": dist, "cov_rel_error": cov_err}));
    }
    let last: Vec<Vector> = paths.iter().map(|s| s[horizon].clone()).collect();
    write_samples(&out_dir.join("extrapolated_samples.csv"), &names, &last)?;

    Ok(json!({
        "gibbs_mean": gibbs_summary.mean,
        "gibbs_se": gibbs_se,
        "qtilde_mean": trained.qtilde_summary.mean,
        "qtilde_se": mivi_se,
        "mean_z_scores": mean_z,
        "corr12_qtilde": corr(&trained.qtilde_summary, 0, 1),
        "corr34_qtilde": corr(&trained.qtilde_summary, 2, 3),
        "corr12_gibbs": corr(&gibbs_summary, 0, 1),
        "corr34_gibbs": corr(&gibbs_summary, 2, 3),
        "extrapolation": trace,
        "summary_q": summary_value(&trained.q_summary),
        "summary_qtilde": summary_value(&trained.qtilde_summary),
        "summary_gibbs": summary_value(&gibbs_summary),
    }))
}
