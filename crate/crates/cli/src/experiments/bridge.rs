//! Bayesian bridge regression on the diabetes data, compared with a long
//! run of the learned kernel and a norm-matched frequentist fit.

use std::path::Path;

use mivi_core::evaluation::{bridge_prox_gradient, ci_overlap, lasso_cd, lp_norm, match_norm, summarize};
use mivi_core::models::{load_diabetes, BridgeModel, TargetModel};
use mivi_core::numerics::spd_inverse;
use mivi_core::trainer::TrainerConfig;
use mivi_core::transitions::{extrapolate, BridgeKernel};
use mivi_core::variational::VariationalParams;
use mivi_core::{Matrix, RngStream, Vector};
use serde_json::{json, Value};

use super::{summary_value, train_and_report};
use crate::config::Config;
use crate::error::{CliError, Context, Result};
use crate::output::{summary_json, write_json, write_samples};

pub const KEYS: &[&str] = &[
    "data.path",
    "model.alpha",
    "model.rho",
    "model.sigma_shape",
    "model.sigma_rate",
    "init.mean",
    "init.log_var",
    "eval.samples",
    "extrapolate.iterations",
    "extrapolate.keep",
    "frequentist.rel_tol",
];

const STREAM_EXTRAPOLATE: u64 = 0x6272;

/// Default prior scale for `alpha = 1` on unit-norm predictors.
pub const DEFAULT_RHO: f64 = 0.237;

pub fn defaults() -> TrainerConfig {
    TrainerConfig {
        particles: 100,
        steps: 3,
        warmup: 0,
        epochs: 1000,
        ..TrainerConfig::default()
    }
}

/// Proposal centred on the least-squares fit: coefficients at the ridge
/// estimate with unit penalty and `log sigma^2` at the residual variance,
/// with the matching sampling variances.
fn least_squares_proposal(x: &Matrix, y: &Vector) -> Result<VariationalParams> {
    let (n, p) = (x.nrows(), x.ncols());
    let gram = x.tr_mul(x) + Matrix::identity(p, p);
    let (inv, _) = spd_inverse(&gram).context("least-squares start")?;
    let beta = &inv * x.tr_mul(y);
    let resid = y - x * &beta;
    let s2 = resid.norm_squared() / (n - p).max(1) as f64;
    let mut mean = beta.as_slice().to_vec();
    mean.push(s2.ln());
    let mut log_var: Vec<f64> = (0..p).map(|v| (s2 * inv[(v, v)]).ln()).collect();
    log_var.push((2.0 / (n - p).max(1) as f64).ln());
    VariationalParams::new(Vector::from_vec(mean), Vector::from_vec(log_var)).context("least-squares start")
}

pub fn run(cfg: &Config, out_dir: &Path, threads: usize) -> Result<Value> {
    let path = cfg
        .existing_path_opt("data.path")?
        .ok_or_else(|| CliError::config("data.path", "missing (path to the diabetes CSV)"))?;
    let data = load_diabetes(&path).map_err(|e| CliError::config("data.path", e.to_string()))?;
    let alpha = cfg.f64_or("model.alpha", 1.0)?;
    if !(alpha > 0.0 && alpha < 2.0) {
        return Err(CliError::config("model.alpha", format!("must lie in (0, 2), got {alpha}")));
    }
    let rho = cfg.positive_or("model.rho", DEFAULT_RHO)?;
    let shape = cfg.positive_or("model.sigma_shape", 1.0)?;
    let rate = cfg.positive_or("model.sigma_rate", 1.0)?;
    let mut model = BridgeModel::with_sigma_prior(data.x.clone(), data.y.clone(), alpha, rho, shape, rate)
        .map_err(|e| CliError::config("model", e.to_string()))?
        .with_names(data.names.clone());
    let p = model.n_features();
    let names = model.variable_names();
    let beta_names = &names[..p];

    let trainer = cfg.trainer(defaults(), threads)?;
    let kernel = BridgeKernel::new(&model);
    let eta0 = kernel.init_params();
    let ls = least_squares_proposal(&data.x, &data.y)?;
    let mean_default: Vec<f64> = ls.mean.iter().copied().collect();
    let phi0 = match (cfg.contains("init.mean"), cfg.contains("init.log_var")) {
        (false, false) => ls,
        _ => {
            let lv = ls.log_var.mean();
            super::initial_proposal(cfg, &mean_default, lv)?
        }
    };
    let trained = train_and_report(cfg, out_dir, &mut model, &kernel, phi0, eta0, trainer)?;

    // Long run of the learned kernel from a random start.
    let iterations = cfg.count_or("extrapolate.iterations", 5000, 1)?;
    let keep = cfg.count_or("extrapolate.keep", 1000, 100)?;
    if keep > iterations {
        return Err(CliError::config("extrapolate.keep", "cannot exceed extrapolate.iterations"));
    }
    let mut rng = RngStream::derive(cfg.seed, &[STREAM_EXTRAPOLATE]);
    let z0 = Vector::from_vec(rng.normals(p + 1));
    let chain = extrapolate(&kernel, &model, &trained.outcome.eta, z0, iterations - keep, keep, 1, &mut rng)
        .context("extrapolated chain")?;
    write_samples(&out_dir.join("extrapolated_samples.csv"), &names, &chain)?;
    let chain_summary = summarize(&names, &chain).context("summarizing the extrapolated chain")?;
    write_json(&out_dir.join("summary_extrapolated.json"), &summary_json(&chain_summary))?;

    let mivi = &trained.qtilde_summary;
    let mivi_beta = Vector::from_fn(p, |v, _| mivi.mean[v]);
    let rel_tol = cfg.positive_or("frequentist.rel_tol", 0.02)?;
    let max_penalty = data.x.tr_mul(&data.y).amax().max(1.0);
    let frequentist = if alpha == 1.0 {
        let target = lp_norm(&mivi_beta, 1.0);
        let (penalty, beta) = match_norm(target, 1.0, max_penalty, rel_tol, |psi| {
            Ok(lasso_cd(&data.x, &data.y, psi)?.beta)
        })
        .context("matching the lasso L1 norm")?;
        Some(("lasso", penalty, beta))
    } else if alpha > 1.0 {
        let target = lp_norm(&mivi_beta, alpha);
        let (penalty, beta) = match_norm(target, alpha, max_penalty * 10.0, rel_tol, |psi| {
            bridge_prox_gradient(&data.x, &data.y, alpha, psi)
        })
        .context("matching the bridge norm")?;
        Some(("bridge", penalty, beta))
    } else {
        None
    };

    let mut rows = Vec::with_capacity(p);
    let mut inside_chain_ci = 0;
    let mut within_union = 0;
    let mut overlap_ok = 0;
    let sup = frequentist.as_ref().map(|f| f.2.amax());
    for (v, name) in beta_names.iter().enumerate() {
        let m = mivi.mean[v];
        let chain_ci = (chain_summary.q025[v], chain_summary.q975[v]);
        let mivi_ci = (mivi.q025[v], mivi.q975[v]);
        let in_ci = m >= chain_ci.0 && m <= chain_ci.1;
        let overlap = ci_overlap(chain_ci, mivi_ci);
        let point = frequentist.as_ref().map(|f| f.2[v]);
        let near_point = match (point, sup) {
            (Some(b), Some(s)) => (m - b).abs() <= 0.1 * s,
            _ => false,
        };
        inside_chain_ci += usize::from(in_ci);
        within_union += usize::from(in_ci || near_point);
        overlap_ok += usize::from(overlap >= 0.8);
        rows.push(json!({
            "name": name,
            "mivi_mean": m,
            "mivi_ci": [mivi_ci.0, mivi_ci.1],
            "chain_mean": chain_summary.mean[v],
            "chain_ci": [chain_ci.0, chain_ci.1],
            "frequentist": point,
            "inside_chain_ci": in_ci,
            "near_frequentist": near_point,
            "ci_overlap": overlap,
        }));
    }
    Ok(json!({
        "alpha": alpha,
        "rho": rho,
        "n_coefficients": p,
        "coefficients": rows,
        "inside_chain_ci": inside_chain_ci,
        "within_union": within_union,
        "ci_overlap_at_least_0_8": overlap_ok,
        "frequentist": frequentist.as_ref().map(|(kind, penalty, beta)| json!({
            "kind": kind,
            "penalty": penalty,
            "beta": beta.as_slice(),
            "norm": lp_norm(beta, alpha),
            "sup_norm": beta.amax(),
        })),
        "mivi_norm": lp_norm(&mivi_beta, alpha),
        "kernel_params": trained.outcome.eta,
        "summary_q": summary_value(&trained.q_summary),
        "summary_qtilde": summary_value(mivi),
        "summary_extrapolated": summary_value(&chain_summary),
    }))
}
