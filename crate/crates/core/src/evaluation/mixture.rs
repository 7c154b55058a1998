use crate::error::{Error, Result};
use crate::models::TargetModel;
use crate::numerics::{log_sum_exp, RngStream, Vector, LN_2PI};
use crate::transitions::{run_chain, SgldKernel};
use crate::variational::{q_logpdf, q_sample_one, VariationalParams};

/// Density of the final Langevin state given the state before it is the
/// Gaussian `N(z + step/2 * grad log p(z), diag(step))`. Averaging that
/// transition density over simulated predecessors estimates the marginal of
/// the chain output.
#[derive(Clone, Debug)]
pub struct MixtureDensityEstimate {
    /// Means of the shared components.
    pub means: Vec<Vector>,
    /// Per-coordinate variance of every component (the final step sizes).
    pub var: Vector,
}

impl MixtureDensityEstimate {
    /// Simulates `count` chains from `q_phi` for `steps - 1` transitions.
    pub fn build<M: TargetModel + ?Sized>(
        model: &M,
        kernel: &SgldKernel,
        phi: &VariationalParams,
        eta: &[f64],
        steps: usize,
        count: usize,
        rng: &mut RngStream,
    ) -> Result<Self> {
        if steps == 0 {
            return Err(Error::InvalidParameter("mixture density needs at least one step".into()));
        }
        if count == 0 {
            return Err(Error::InvalidParameter("mixture density needs at least one component".into()));
        }
        let var = kernel.log_steps(eta, steps).map(f64::exp);
        let means = (0..count)
            .map(|_| {
                let z0 = q_sample_one(phi, rng).z;
                let traj = run_chain(kernel, model, eta, z0, steps - 1, rng, None)?;
                component_mean(model, traj.last(), &var)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { means, var })
    }

    fn log_component(&self, mean: &Vector, z: &Vector) -> f64 {
        let mut acc = 0.0;
        for i in 0..z.len() {
            let r = z[i] - mean[i];
            acc -= 0.5 * (LN_2PI + self.var[i].ln() + r * r / self.var[i]);
        }
        acc
    }

    /// Log-density at `z`, optionally adding the component of the path that
    /// produced `z`.
    pub fn log_density(&self, z: &Vector, own_mean: Option<&Vector>) -> f64 {
        let mut terms: Vec<f64> = self.means.iter().map(|m| self.log_component(m, z)).collect();
        if let Some(m) = own_mean {
            terms.push(self.log_component(m, z));
        }
        log_sum_exp(&terms) - (terms.len() as f64).ln()
    }
}

fn component_mean<M: TargetModel + ?Sized>(model: &M, z: &Vector, var: &Vector) -> Result<Vector> {
    let g = model.grad_z(z, None)?;
    Ok(z + var.component_mul(&g) * 0.5)
}

fn chain_is_identity(kernel: &SgldKernel, eta: &[f64], steps: usize) -> bool {
    (1..=steps).all(|t| kernel.log_steps(eta, t).iter().all(|l| l.exp() == 0.0))
}

/// Mixture estimate of the chain-output density at `z_query`, using `count + 1`
/// freshly simulated components.
pub fn sgld_mixture_density<M: TargetModel + ?Sized>(
    model: &M,
    kernel: &SgldKernel,
    phi: &VariationalParams,
    eta: &[f64],
    steps: usize,
    count: usize,
    rng: &mut RngStream,
    z_query: &Vector,
) -> Result<f64> {
    if z_query.len() != model.dim() {
        return Err(Error::DimensionMismatch("query point has the wrong dimension".into()));
    }
    if chain_is_identity(kernel, eta, steps) {
        return Ok(q_logpdf(phi, z_query)?.exp());
    }
    let est = MixtureDensityEstimate::build(model, kernel, phi, eta, steps, count + 1, rng)?;
    Ok(est.log_density(z_query, None).exp())
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvidenceEstimate {
    pub log_evidence: f64,
    /// Delta-method standard error of `log_evidence`.
    pub std_error: f64,
    pub log_weights: Vec<f64>,
}

/// Importance-sampled log marginal likelihood with the chain output as the
/// proposal and the mixture estimate as its density. Each sample's own path
/// contributes one component; `count` shared components are reused.
pub fn marginal_loglik_is<M: TargetModel + ?Sized>(
    model: &M,
    kernel: &SgldKernel,
    phi: &VariationalParams,
    eta: &[f64],
    steps: usize,
    samples: usize,
    count: usize,
    rng: &mut RngStream,
) -> Result<EvidenceEstimate> {
    if samples < 100 {
        return Err(Error::InvalidParameter(format!("need at least 100 importance samples, got {samples}")));
    }
    let identity = chain_is_identity(kernel, eta, steps);
    let shared = if identity {
        None
    } else {
        Some(MixtureDensityEstimate::build(model, kernel, phi, eta, steps, count, rng)?)
    };
    let mut log_weights = Vec::with_capacity(samples);
    for _ in 0..samples {
        let z0 = q_sample_one(phi, rng).z;
        let traj = run_chain(kernel, model, eta, z0, steps, rng, None)?;
        let z = traj.last();
        let log_q = match &shared {
            None => q_logpdf(phi, z)?,
            Some(est) => {
                let own = component_mean(model, &traj.states[steps - 1], &est.var)?;
                est.log_density(z, Some(&own))
            }
        };
        log_weights.push(model.log_joint(z, None)? - log_q);
    }
    let lse = log_sum_exp(&log_weights);
    if !lse.is_finite() {
        return Err(Error::NonFinite("all importance weights vanish".into()));
    }
    let n = samples as f64;
    let log_evidence = lse - n.ln();
    let w: Vec<f64> = log_weights.iter().map(|l| (l - log_evidence).exp()).collect();
    let var = w.iter().map(|v| (v - 1.0).powi(2)).sum::<f64>() / (n - 1.0);
    Ok(EvidenceEstimate {
        log_evidence,
        std_error: (var / n).sqrt(),
        log_weights,
    })
}

/// Monte Carlo comparison of `E_qtilde[log p - log qtilde]` (with the
/// mixture estimate standing in for `qtilde`) against
/// `E_qtilde[log p - log q_phi]`. The first can never exceed the second.
#[derive(Clone, Debug, PartialEq)]
pub struct BoundCheck {
    pub refined: f64,
    pub proposal: f64,
    /// Standard error of the paired difference `refined - proposal`.
    pub std_error: f64,
}

impl BoundCheck {
    pub fn holds(&self, n_se: f64) -> bool {
        self.refined <= self.proposal + n_se * self.std_error
    }
}

pub fn check_proposal_bound<M: TargetModel + ?Sized>(
    model: &M,
    kernel: &SgldKernel,
    phi: &VariationalParams,
    eta: &[f64],
    steps: usize,
    samples: usize,
    count: usize,
    rng: &mut RngStream,
) -> Result<BoundCheck> {
    if samples < 2 {
        return Err(Error::InvalidParameter("need at least two samples".into()));
    }
    let shared = MixtureDensityEstimate::build(model, kernel, phi, eta, steps, count, rng)?;
    let mut diffs = Vec::with_capacity(samples);
    let (mut refined, mut proposal) = (0.0, 0.0);
    for _ in 0..samples {
        let z0 = q_sample_one(phi, rng).z;
        let traj = run_chain(kernel, model, eta, z0, steps, rng, None)?;
        let z = traj.last();
        let own = component_mean(model, &traj.states[steps - 1], &shared.var)?;
        let lp = model.log_joint(z, None)?;
        let a = lp - shared.log_density(z, Some(&own));
        let b = lp - q_logpdf(phi, z)?;
        refined += a;
        proposal += b;
        diffs.push(a - b);
    }
    let n = samples as f64;
    let mean_diff = diffs.iter().sum::<f64>() / n;
    let var = diffs.iter().map(|d| (d - mean_diff).powi(2)).sum::<f64>() / (n - 1.0);
    Ok(BoundCheck {
        refined: refined / n,
        proposal: proposal / n,
        std_error: (var / n).sqrt(),
    })
}
