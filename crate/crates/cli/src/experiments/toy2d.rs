//! Two-dimensional benchmark targets with a Langevin kernel.

use std::path::Path;

use mivi_core::models::{Toy2d, Toy2dKind};
use mivi_core::trainer::TrainerConfig;
use serde_json::{json, Value};

use super::{corr, initial_proposal, sgld_kernel, summary_value, train_and_report};
use crate::config::Config;
use crate::error::Result;

pub const KEYS: &[&str] = &[
    "model.target",
    "kernel.schedule",
    "kernel.per_dim",
    "kernel.init_step",
    "init.mean",
    "init.log_var",
    "eval.samples",
];

pub fn defaults() -> TrainerConfig {
    TrainerConfig {
        particles: 200,
        steps: 5,
        warmup: 100,
        epochs: 1000,
        ..TrainerConfig::default()
    }
}

pub fn run(cfg: &Config, out_dir: &Path, threads: usize) -> Result<Value> {
    let kind: Toy2dKind = cfg.parse_or("model.target", "correlated-gaussian")?;
    let mut model = Toy2d::new(kind);
    let trainer = cfg.trainer(defaults(), threads)?;
    let (kernel, eta0) = sgld_kernel(cfg, 2, trainer.steps, 0.1)?;
    let phi0 = initial_proposal(cfg, &[0.0, 0.0], 0.0)?;
    let trained = train_and_report(cfg, out_dir, &mut model, &kernel, phi0, eta0, trainer)?;

    let zs = &trained.qtilde_samples;
    let n = zs.len() as f64;
    let ridge_mean = zs.iter().map(|z| z[0] - z[1] * z[1] / 4.0).sum::<f64>() / n;
    let mut counts = [0usize; 2];
    for z in zs {
        counts[model.mode_of(z)] += 1;
    }
    let mut metrics = json!({
        "target": cfg.str_or("model.target", "correlated-gaussian")?,
        "corr_qtilde": corr(&trained.qtilde_summary, 0, 1),
        "corr_q": corr(&trained.q_summary, 0, 1),
        "step_sizes": trained.outcome.eta.iter().map(|e| e.exp()).collect::<Vec<f64>>(),
        "final_surrogate": trained.outcome.log.rows.last().map(|r| r.surrogate),
        "summary_q": summary_value(&trained.q_summary),
        "summary_qtilde": summary_value(&trained.qtilde_summary),
    });
    match kind {
        Toy2dKind::Banana => metrics["ridge_mean"] = json!(ridge_mean),
        Toy2dKind::Mixture => metrics["mode_fractions"] = json!([counts[0] as f64 / n, counts[1] as f64 / n]),
        Toy2dKind::CorrelatedGaussian => {}
    }
    Ok(metrics)
}
