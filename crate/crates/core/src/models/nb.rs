use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};
use statrs::distribution::{Beta as BetaDist, ContinuousCDF, Gamma as GammaDist};

use super::{check_point, resolve_batch, Batch, TargetModel};
use crate::error::{Error, Result};
use crate::numerics::{ln_gamma, log_sigmoid, sigmoid, Dist, Matrix, RngStream, Vector};

const PRIOR_R_SHAPE: f64 = 0.1;
const PRIOR_R_RATE: f64 = 0.1;
const PRIOR_P_A: f64 = 0.1;
const PRIOR_P_B: f64 = 0.1;

/// Negative binomial counts with pmf `Gamma(x+r)/(Gamma(r) x!) p^x (1-p)^r`,
/// `Gamma(0.1, 0.1)` prior on `r` and `Beta(0.1, 0.1)` prior on `p`.
///
/// The latent is `z = (log r, logit p)` and the log-joint includes the
/// Jacobian of that transform.
#[derive(Clone, Debug)]
pub struct NegBinModel {
    counts: Vec<u64>,
    /// `tail[k] = #{i : x_i > k}`.
    tail: Vec<f64>,
    total: f64,
    log_fact: f64,
}

/// `sum_k m_k f(r + k)` for the three functions needed by the value,
/// gradient and Hessian of the `ln Gamma(x + r) - ln Gamma(r)` terms.
struct TailSums {
    log: f64,
    inv: f64,
    inv_sq: f64,
}

fn tail_counts(counts: &[u64]) -> Vec<f64> {
    let max = counts.iter().copied().max().unwrap_or(0) as usize;
    let mut hist = vec![0.0; max + 1];
    for &x in counts {
        hist[x as usize] += 1.0;
    }
    // tail[k] = #{x > k}, k = 0..max-1
    let mut tail = vec![0.0; max];
    let mut acc = 0.0;
    for k in (0..max).rev() {
        acc += hist[k + 1];
        tail[k] = acc;
    }
    tail
}

impl NegBinModel {
    pub fn new(counts: Vec<u64>) -> Self {
        let tail = tail_counts(&counts);
        let total = counts.iter().map(|&x| x as f64).sum();
        let log_fact = counts.iter().map(|&x| ln_gamma(x as f64 + 1.0)).sum();
        Self {
            counts,
            tail,
            total,
            log_fact,
        }
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    /// Counts drawn as `Poisson(Gamma(r, rate (1-p)/p))`.
    pub fn simulate(r: f64, p: f64, n: usize, rng: &mut RngStream) -> Result<Vec<u64>> {
        if !(p > 0.0 && p < 1.0) {
            return Err(Error::InvalidParameter(format!("p must lie in (0, 1), got {p}")));
        }
        let rate_dist = Dist::Gamma { shape: r, rate: (1.0 - p) / p };
        rate_dist.validate()?;
        let mut out = Vec::with_capacity(n);
        for _ in 0..n {
            let lambda = rate_dist.sample(rng)?;
            let x = if lambda > 0.0 {
                Poisson::new(lambda)
                    .map_err(|e| Error::InvalidParameter(e.to_string()))?
                    .sample(rng.inner())
            } else {
                0.0
            };
            out.push(x as u64);
        }
        Ok(out)
    }

    fn sums(&self, r: f64, idx: Option<&[usize]>) -> TailSums {
        let mut s = TailSums { log: 0.0, inv: 0.0, inv_sq: 0.0 };
        let mut add = |k: usize, m: f64| {
            let a = r + k as f64;
            s.log += m * a.ln();
            s.inv += m / a;
            s.inv_sq += m / (a * a);
        };
        match idx {
            None => self.tail.iter().enumerate().for_each(|(k, &m)| add(k, m)),
            Some(idx) => {
                for &i in idx {
                    for k in 0..self.counts[i] as usize {
                        add(k, 1.0);
                    }
                }
            }
        }
        s
    }

    /// Likelihood statistics over a batch: (index subset or None, scale,
    /// number of observations, sum of counts, sum of log x!).
    fn batch_stats(&self, batch: Batch) -> Result<(Option<Vec<usize>>, f64, f64, f64, f64)> {
        if batch.is_none() || self.counts.is_empty() {
            return Ok((None, 1.0, self.counts.len() as f64, self.total, self.log_fact));
        }
        let (idx, scale) = resolve_batch(self.counts.len(), batch)?;
        let total = idx.iter().map(|&i| self.counts[i] as f64).sum();
        let log_fact = idx.iter().map(|&i| ln_gamma(self.counts[i] as f64 + 1.0)).sum();
        let n = idx.len() as f64;
        Ok((Some(idx), scale, n, total, log_fact))
    }

    fn prior_const() -> f64 {
        PRIOR_R_SHAPE * PRIOR_R_RATE.ln() - ln_gamma(PRIOR_R_SHAPE)
            - (ln_gamma(PRIOR_P_A) + ln_gamma(PRIOR_P_B) - ln_gamma(PRIOR_P_A + PRIOR_P_B))
    }

    /// Log-likelihood in the natural parameters, excluding `sum log x!`.
    fn loglik_kernel(&self, r: f64, p: f64, tail_log: f64) -> f64 {
        tail_log + self.total * p.ln() + self.counts.len() as f64 * r * (1.0 - p).ln()
    }
}

impl TargetModel for NegBinModel {
    fn dim(&self) -> usize {
        2
    }

    fn n_data(&self) -> usize {
        self.counts.len()
    }

    fn variable_names(&self) -> Vec<String> {
        vec!["log_r".into(), "logit_p".into()]
    }

    fn log_joint(&self, z: &Vector, batch: Batch) -> Result<f64> {
        check_point(2, z)?;
        let (u, w) = (z[0], z[1]);
        let r = u.exp();
        let (lp, l1p) = (log_sigmoid(w), log_sigmoid(-w));
        let (idx, scale, n, total, log_fact) = self.batch_stats(batch)?;
        let s = self.sums(r, idx.as_deref());
        let lik = s.log + total * lp + n * r * l1p - log_fact;
        let prior = PRIOR_R_SHAPE * u - PRIOR_R_RATE * r + PRIOR_P_A * lp + PRIOR_P_B * l1p + Self::prior_const();
        let value = scale * lik + prior;
        if !value.is_finite() {
            return Err(Error::NonFinite("negative binomial log-joint".into()));
        }
        Ok(value)
    }

    fn grad_z(&self, z: &Vector, batch: Batch) -> Result<Vector> {
        check_point(2, z)?;
        let (u, w) = (z[0], z[1]);
        let r = u.exp();
        let p = sigmoid(w);
        let l1p = log_sigmoid(-w);
        let (idx, scale, n, total, _) = self.batch_stats(batch)?;
        let s = self.sums(r, idx.as_deref());
        let gu = scale * (r * s.inv + n * r * l1p) + PRIOR_R_SHAPE - PRIOR_R_RATE * r;
        let gw = (scale * total + PRIOR_P_A) * (1.0 - p) - (scale * n * r + PRIOR_P_B) * p;
        Ok(Vector::from_vec(vec![gu, gw]))
    }

    fn hvp(&self, z: &Vector, v: &Vector, batch: Batch) -> Result<Vector> {
        check_point(2, z)?;
        check_point(2, v)?;
        let (u, w) = (z[0], z[1]);
        let r = u.exp();
        let p = sigmoid(w);
        let l1p = log_sigmoid(-w);
        let (idx, scale, n, total, _) = self.batch_stats(batch)?;
        let s = self.sums(r, idx.as_deref());
        let huu = scale * (r * s.inv - r * r * s.inv_sq + n * r * l1p) - PRIOR_R_RATE * r;
        let huw = -scale * n * r * p;
        let hww = -(scale * (total + n * r) + PRIOR_P_A + PRIOR_P_B) * p * (1.0 - p);
        Ok(Vector::from_vec(vec![huu * v[0] + huw * v[1], huw * v[0] + hww * v[1]]))
    }
}

/// Resolution of the quadrature grid over `r in (0, r_max]`, `p in (0, 1)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub r_max: f64,
    pub n_r: usize,
    pub n_p: usize,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self { r_max: 10.0, n_r: 800, n_p: 800 }
    }
}

/// Normalized posterior over a midpoint grid in `(r, p)`.
#[derive(Clone, Debug)]
pub struct GridPosterior {
    pub r: Vec<f64>,
    pub p: Vec<f64>,
    /// Probability mass per cell (`n_r x n_p`), summing to one.
    pub mass: Matrix,
    pub cell_area: f64,
    /// Log of the grid estimate of the marginal likelihood.
    pub log_evidence: f64,
}

impl GridPosterior {
    /// Density values (mass divided by cell area).
    pub fn density(&self) -> Matrix {
        &self.mass / self.cell_area
    }

    pub fn expect<F: Fn(f64, f64) -> f64>(&self, f: F) -> f64 {
        let mut acc = 0.0;
        for (i, &r) in self.r.iter().enumerate() {
            for (j, &p) in self.p.iter().enumerate() {
                let m = self.mass[(i, j)];
                if m > 0.0 {
                    acc += m * f(r, p);
                }
            }
        }
        acc
    }

    /// Mean and covariance of `(f(r,p), g(r,p))`.
    pub fn moments<F, G>(&self, f: F, g: G) -> ([f64; 2], [[f64; 2]; 2])
    where
        F: Fn(f64, f64) -> f64,
        G: Fn(f64, f64) -> f64,
    {
        let mf = self.expect(&f);
        let mg = self.expect(&g);
        let vff = self.expect(|r, p| (f(r, p) - mf).powi(2));
        let vgg = self.expect(|r, p| (g(r, p) - mg).powi(2));
        let vfg = self.expect(|r, p| (f(r, p) - mf) * (g(r, p) - mg));
        ([mf, mg], [[vff, vfg], [vfg, vgg]])
    }

    /// Moments of `(r, p)`.
    pub fn natural_moments(&self) -> ([f64; 2], [[f64; 2]; 2]) {
        self.moments(|r, _| r, |_, p| p)
    }

    /// Moments of `(log r, logit p)`.
    pub fn latent_moments(&self) -> ([f64; 2], [[f64; 2]; 2]) {
        self.moments(|r, _| r.ln(), |_, p| (p / (1.0 - p)).ln())
    }

    /// Draws `(r, p)` pairs: a cell by its mass, then uniform within it.
    pub fn sample(&self, count: usize, rng: &mut RngStream) -> Vec<(f64, f64)> {
        let flat: Vec<f64> = self.mass.as_slice().to_vec();
        let mut cdf = Vec::with_capacity(flat.len());
        let mut acc = 0.0;
        for m in &flat {
            acc += m;
            cdf.push(acc);
        }
        let hr = self.r[1] - self.r[0];
        let hp = self.p[1] - self.p[0];
        let nr = self.r.len();
        (0..count)
            .map(|_| {
                let u = rng.uniform() * acc;
                let k = cdf.partition_point(|&c| c < u).min(flat.len() - 1);
                let (i, j) = (k % nr, k / nr);
                let r = self.r[i] + hr * (rng.uniform() - 0.5);
                let p = self.p[j] + hp * (rng.uniform() - 0.5);
                (r, p)
            })
            .collect()
    }
}

fn grid_once(model: &NegBinModel, grid: &GridSpec) -> Result<GridPosterior> {
    let hr = grid.r_max / grid.n_r as f64;
    let hp = 1.0 / grid.n_p as f64;
    let r: Vec<f64> = (0..grid.n_r).map(|i| (i as f64 + 0.5) * hr).collect();
    let p: Vec<f64> = (0..grid.n_p).map(|j| (j as f64 + 0.5) * hp).collect();
    let gamma = GammaDist::new(PRIOR_R_SHAPE, PRIOR_R_RATE).expect("valid prior");
    let beta = BetaDist::new(PRIOR_P_A, PRIOR_P_B).expect("valid prior");
    // The prior factor is singular at the boundary, so it is integrated
    // exactly over each cell while the likelihood is taken at the midpoint.
    let r_mass: Vec<f64> = (0..grid.n_r)
        .map(|i| gamma.cdf((i + 1) as f64 * hr) - gamma.cdf(i as f64 * hr))
        .collect();
    let p_mass: Vec<f64> = (0..grid.n_p)
        .map(|j| beta.cdf(((j + 1) as f64 * hp).min(1.0)) - beta.cdf(j as f64 * hp))
        .collect();
    let a: Vec<f64> = r.iter().map(|&ri| model.sums(ri, None).log).collect();
    let mut log_cell = Matrix::from_element(grid.n_r, grid.n_p, f64::NEG_INFINITY);
    let mut max = f64::NEG_INFINITY;
    for i in 0..grid.n_r {
        for j in 0..grid.n_p {
            let pm = r_mass[i] * p_mass[j];
            if pm > 0.0 {
                let v = model.loglik_kernel(r[i], p[j], a[i]) + pm.ln();
                log_cell[(i, j)] = v;
                max = max.max(v);
            }
        }
    }
    if !max.is_finite() {
        return Err(Error::NonFinite("grid posterior has no finite cells".into()));
    }
    let mut mass = log_cell.map(|v| (v - max).exp());
    let total = mass.sum();
    mass /= total;
    let log_evidence = max + total.ln() - model.log_fact;
    Ok(GridPosterior {
        r,
        p,
        mass,
        cell_area: hr * hp,
        log_evidence,
    })
}

/// Quadrature posterior of `(r, p)`.
///
/// The normalizing constant is recomputed on a grid of half the resolution;
/// a relative change above `1e-3` is reported as [`Error::GridTooCoarse`].
pub fn nb_grid_posterior(model: &NegBinModel, grid: &GridSpec) -> Result<GridPosterior> {
    if grid.n_r < 400 || grid.n_p < 400 {
        return Err(Error::GridTooCoarse(format!(
            "need at least 400x400 cells, got {}x{}",
            grid.n_r, grid.n_p
        )));
    }
    if !(grid.r_max > 0.0) {
        return Err(Error::InvalidParameter("r_max must be positive".into()));
    }
    let fine = grid_once(model, grid)?;
    let coarse = grid_once(
        model,
        &GridSpec {
            r_max: grid.r_max,
            n_r: grid.n_r / 2,
            n_p: grid.n_p / 2,
        },
    )?;
    let drift = (fine.log_evidence - coarse.log_evidence).exp_m1().abs();
    if drift > 1e-3 {
        return Err(Error::GridTooCoarse(format!(
            "normalization changed by {drift:.3e} between refinements"
        )));
    }
    // Mass sitting in the last r column means r_max truncates the posterior.
    let edge: f64 = fine.mass.row(grid.n_r - 1).sum();
    if edge > 1e-6 {
        return Err(Error::GridTooCoarse(format!(
            "posterior mass {edge:.3e} at r = r_max; increase r_max"
        )));
    }
    Ok(fine)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::testing::check_derivatives;

    fn small_model() -> NegBinModel {
        NegBinModel::new(vec![0, 3, 5, 1, 8, 2, 2, 0, 4, 7, 1, 0, 6, 3, 2, 9, 4, 1, 0, 5])
    }

    #[test]
    fn tail_counts_reproduce_gamma_ratios() {
        let m = small_model();
        let r = 1.7;
        let direct: f64 = m.counts.iter().map(|&x| ln_gamma(x as f64 + r) - ln_gamma(r)).sum();
        assert!((m.sums(r, None).log - direct).abs() < 1e-10);
    }

    #[test]
    fn log_joint_matches_direct_formula() {
        let m = small_model();
        let (r, p): (f64, f64) = (2.3, 0.6);
        let z = Vector::from_vec(vec![r.ln(), (p / (1.0 - p)).ln()]);
        let mut direct = 0.0;
        for &x in &m.counts {
            let x = x as f64;
            direct += ln_gamma(x + r) - ln_gamma(r) - ln_gamma(x + 1.0) + x * p.ln() + r * (1.0 - p).ln();
        }
        let gamma_prior = 0.1 * 0.1f64.ln() - ln_gamma(0.1) + (0.1 - 1.0) * r.ln() - 0.1 * r;
        let beta_prior = (0.1 - 1.0) * p.ln() + (0.1 - 1.0) * (1.0 - p).ln() - (2.0 * ln_gamma(0.1) - ln_gamma(0.2));
        let jac = r.ln() + p.ln() + (1.0 - p).ln();
        let expected = direct + gamma_prior + beta_prior + jac;
        assert!((m.log_joint(&z, None).unwrap() - expected).abs() < 1e-9);
    }

    #[test]
    fn empty_data_is_prior_plus_jacobian() {
        let m = NegBinModel::new(vec![]);
        let z = Vector::from_vec(vec![0.4, -0.3]);
        let (r, p) = (0.4f64.exp(), sigmoid(-0.3));
        let expected = 0.1 * 0.1f64.ln() - ln_gamma(0.1) + 0.1 * r.ln() - 0.1 * r + 0.1 * p.ln()
            + 0.1 * (1.0 - p).ln()
            - (2.0 * ln_gamma(0.1) - ln_gamma(0.2));
        assert!((m.log_joint(&z, None).unwrap() - expected).abs() < 1e-12);
    }

    #[test]
    fn derivatives_match_finite_differences() {
        let m = small_model();
        for z in [[0.0, 0.0], [1.2, -0.7], [-0.5, 1.5]] {
            check_derivatives(&m, &Vector::from_vec(z.to_vec()), None, 1e-6);
            check_derivatives(&m, &Vector::from_vec(z.to_vec()), Some(&[1, 4, 9, 15]), 1e-6);
        }
    }

    #[test]
    fn minibatches_average_to_full_likelihood() {
        let m = small_model();
        let z = Vector::from_vec(vec![0.3, 0.2]);
        let prior = NegBinModel::new(vec![]).log_joint(&z, None).unwrap();
        let full = m.log_joint(&z, None).unwrap() - prior;
        let mut avg = 0.0;
        for b in 0..4 {
            let idx: Vec<usize> = (5 * b..5 * b + 5).collect();
            avg += (m.log_joint(&z, Some(&idx)).unwrap() - prior) / 4.0;
        }
        assert!((avg - full).abs() < 1e-10);
    }

    #[test]
    fn rejects_bad_minibatch() {
        let m = small_model();
        assert!(m.log_joint(&Vector::zeros(2), Some(&[40])).is_err());
    }

    #[test]
    fn simulated_mean_matches_pmf_mean() {
        let mut rng = RngStream::new(4, 0);
        let x = NegBinModel::simulate(2.0, 0.7, 20_000, &mut rng).unwrap();
        let mean = x.iter().sum::<u64>() as f64 / x.len() as f64;
        assert!((mean - 14.0 / 3.0).abs() / (14.0 / 3.0) < 0.03, "{mean}");
    }

    #[test]
    fn grid_posterior_on_simulated_data() {
        let mut rng = RngStream::new(2024, 0);
        let m = NegBinModel::new(NegBinModel::simulate(2.0, 0.7, 1000, &mut rng).unwrap());
        let post = nb_grid_posterior(&m, &GridSpec::default()).unwrap();
        let (mean, cov) = post.natural_moments();
        assert!(mean[0] > 1.7 && mean[0] < 2.3, "r mean {}", mean[0]);
        assert!(mean[1] > 0.65 && mean[1] < 0.75, "p mean {}", mean[1]);
        assert!(cov[0][1] < 0.0);
        assert!((post.mass.sum() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn grid_with_no_data_is_the_prior() {
        let m = NegBinModel::new(vec![]);
        let post = nb_grid_posterior(&m, &GridSpec { r_max: 200.0, n_r: 400, n_p: 400 }).unwrap();
        // Beta(0.1, 0.1) is symmetric, so E[p] = 1/2; r's truncation at 200
        // keeps nearly all Gamma(0.1, 0.1) mass.
        let (mean, _) = post.natural_moments();
        assert!((mean[1] - 0.5).abs() < 1e-3);
        let gamma = GammaDist::new(0.1, 0.1).unwrap();
        let first_cell: f64 = post.mass.row(0).sum();
        let expected = gamma.cdf(0.5) / gamma.cdf(200.0);
        assert!((first_cell - expected).abs() < 1e-9);
    }

    #[test]
    fn coarse_grid_is_rejected() {
        let m = small_model();
        let r = nb_grid_posterior(&m, &GridSpec { r_max: 10.0, n_r: 100, n_p: 100 });
        assert!(matches!(r, Err(Error::GridTooCoarse(_))));
    }
}
