//! Negative binomial counts: MIVI against a quadrature posterior and a
//! mean-field fit.

use std::path::Path;

use mivi_core::models::{nb_grid_posterior, GridSpec, NegBinModel, TargetModel};
use mivi_core::numerics::sigmoid;
use mivi_core::trainer::{fit_mfvi, AdamConfig, MfviConfig, TrainerConfig};
use mivi_core::{RngStream, Vector};
use serde_json::{json, Value};

use super::{corr, initial_proposal, sgld_kernel, summary_value, train_and_report};
use crate::config::Config;
use crate::error::{Context, Result};
use crate::output::write_samples;
use crate::synth::{nb_counts, read_nb};

pub const KEYS: &[&str] = &[
    "data.path",
    "data.seed",
    "kernel.schedule",
    "kernel.per_dim",
    "kernel.init_step",
    "init.mean",
    "init.log_var",
    "eval.samples",
    "grid.r_max",
    "grid.n_r",
    "grid.n_p",
    "mfvi.samples",
    "mfvi.iterations",
    "mfvi.lr",
    "baseline.samples",
];

const STREAM_BASELINE: u64 = 0x6267;

pub fn defaults() -> TrainerConfig {
    TrainerConfig {
        particles: 1000,
        steps: 10,
        warmup: 0,
        epochs: 2000,
        ..TrainerConfig::default()
    }
}

/// Mean, standard deviation and correlation of `(exp z1, sigmoid z2)`.
fn natural_stats(samples: &[Vector]) -> ([f64; 2], [f64; 2], f64) {
    let n = samples.len() as f64;
    let pts: Vec<(f64, f64)> = samples.iter().map(|z| (z[0].exp(), sigmoid(z[1]))).collect();
    let mr = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let mp = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let vr = pts.iter().map(|p| (p.0 - mr).powi(2)).sum::<f64>() / (n - 1.0);
    let vp = pts.iter().map(|p| (p.1 - mp).powi(2)).sum::<f64>() / (n - 1.0);
    let c = pts.iter().map(|p| (p.0 - mr) * (p.1 - mp)).sum::<f64>() / (n - 1.0);
    ([mr, mp], [vr.sqrt(), vp.sqrt()], c / (vr * vp).sqrt())
}

pub fn run(cfg: &Config, out_dir: &Path, threads: usize) -> Result<Value> {
    let counts = match cfg.existing_path_opt("data.path")? {
        Some(path) => read_nb(&path, "data.path")?,
        None => nb_counts(cfg.u64_or("data.seed", cfg.seed)?)?,
    };
    let mut model = NegBinModel::new(counts);
    let grid = GridSpec {
        r_max: cfg.positive_or("grid.r_max", GridSpec::default().r_max)?,
        n_r: cfg.count_or("grid.n_r", GridSpec::default().n_r, 400)?,
        n_p: cfg.count_or("grid.n_p", GridSpec::default().n_p, 400)?,
    };
    let oracle = nb_grid_posterior(&model, &grid).context("quadrature posterior")?;
    let (nat_mean, nat_cov) = oracle.natural_moments();
    let (lat_mean, lat_cov) = oracle.latent_moments();
    let oracle_sd = [nat_cov[0][0].sqrt(), nat_cov[1][1].sqrt()];
    let oracle_corr = nat_cov[0][1] / (oracle_sd[0] * oracle_sd[1]);

    let trainer = cfg.trainer(defaults(), threads)?;
    let (kernel, eta0) = sgld_kernel(cfg, 2, trainer.steps, 1e-3)?;
    let phi0 = initial_proposal(cfg, &[0.0, 0.0], 0.0)?;

    let mfvi_cfg = MfviConfig {
        samples: cfg.count_or("mfvi.samples", MfviConfig::default().samples, 1)?,
        iterations: cfg.usize_or("mfvi.iterations", 10_000)?,
        adam: AdamConfig {
            lr: cfg.positive_or("mfvi.lr", MfviConfig::default().adam.lr)?,
            ..AdamConfig::default()
        },
        seed: cfg.seed,
    };
    let mfvi = fit_mfvi(&model, phi0.clone(), &mfvi_cfg).context("mean-field fit")?;

    let trained = train_and_report(cfg, out_dir, &mut model, &kernel, phi0, eta0, trainer)?;

    let baseline_n = cfg.count_or("baseline.samples", 5000, 1)?;
    let mut rng = RngStream::derive(cfg.seed, &[STREAM_BASELINE]);
    let baseline: Vec<Vector> = oracle
        .sample(baseline_n, &mut rng)
        .into_iter()
        .map(|(r, p)| Vector::from_vec(vec![r.ln(), (p / (1.0 - p)).ln()]))
        .collect();
    write_samples(&out_dir.join("baseline_samples.csv"), &model.variable_names(), &baseline)?;

    let (qt_mean, qt_sd, qt_corr) = natural_stats(&trained.qtilde_samples);
    let z_scores: Vec<f64> = (0..2).map(|i| (qt_mean[i] - nat_mean[i]) / oracle_sd[i]).collect();
    let q_var = trained.outcome.phi.variance();
    let mfvi_var = mfvi.variance();
    let oracle_var = [lat_cov[0][0], lat_cov[1][1]];
    Ok(json!({
        "n_obs": model.n_data(),
        "oracle": {
            "mean_rp": nat_mean,
            "sd_rp": oracle_sd,
            "corr_rp": oracle_corr,
            "latent_mean": lat_mean,
            "latent_cov": lat_cov,
            "log_evidence": oracle.log_evidence,
        },
        "qtilde": {
            "mean_rp": qt_mean,
            "sd_rp": qt_sd,
            "corr_rp": qt_corr,
        },
        "z_scores": z_scores,
        "corr_rp_qtilde": qt_corr,
        "q_variance": q_var.as_slice(),
        "mfvi_variance": mfvi_var.as_slice(),
        "mfvi_mean": mfvi.mean.as_slice(),
        "q_variance_ratio": (0..2).map(|i| q_var[i] / oracle_var[i]).collect::<Vec<f64>>(),
        "mfvi_variance_ratio": (0..2).map(|i| mfvi_var[i] / oracle_var[i]).collect::<Vec<f64>>(),
        "corr_latent_qtilde": corr(&trained.qtilde_summary, 0, 1),
        "step_sizes": trained.outcome.eta.iter().map(|e| e.exp()).collect::<Vec<f64>>(),
        "summary_q": summary_value(&trained.q_summary),
        "summary_qtilde": summary_value(&trained.qtilde_summary),
    }))
}
