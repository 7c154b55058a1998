//! Posterior assessment: mixture density for Langevin chains, importance
//! sampled evidence, grid KL, summaries and reference baselines.

mod baselines;
mod grid;
mod mixture;
mod summary;

pub use baselines::{bridge_prox_gradient, gibbs_logistic_baseline, lasso_cd, lp_norm, match_norm, LassoFit};
pub use grid::{ar1_marginals, gaussian_kl, grid_kl, QuadratureGrid};
pub use mixture::{check_proposal_bound, marginal_loglik_is, sgld_mixture_density, BoundCheck, EvidenceEstimate,
    MixtureDensityEstimate,};
pub use summary::{
    batch_means_se, ci_overlap, mahalanobis, sample_moments, summarize, PosteriorSummary, MIN_SUMMARY_ROWS,
};
