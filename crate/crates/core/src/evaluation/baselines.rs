use crate::error::{Error, Result};
use crate::models::LogisticModel;
use crate::numerics::{Dist, Matrix, RngStream, Vector};
use crate::transitions::pg_conditional;

/// Polya-Gamma augmented Gibbs sampler for logistic regression with a
/// standard normal prior on the coefficients. Returns `iters` draws kept
/// after `burn_in`.
pub fn gibbs_logistic_baseline(
    model: &LogisticModel,
    iters: usize,
    burn_in: usize,
    rng: &mut RngStream,
) -> Result<Vec<Vector>> {
    let (n, p) = (model.x.nrows(), model.x.ncols());
    let mut beta = Vector::zeros(p);
    let mut out = Vec::with_capacity(iters);
    for it in 0..burn_in + iters {
        let eta = &model.x * &beta;
        let mut omega = Vector::zeros(n);
        for i in 0..n {
            omega[i] = Dist::PolyaGamma { c: eta[i] }.sample(rng)?;
        }
        let xi = Vector::from_vec(rng.normals(p));
        beta = pg_conditional(model, &omega, &xi)?.0;
        if it >= burn_in {
            out.push(beta.clone());
        }
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq)]
pub struct LassoFit {
    pub beta: Vector,
    pub penalty: f64,
    /// Relative duality gap at termination (KKT residual when the penalty is zero).
    pub gap: f64,
    pub sweeps: usize,
}

const MAX_SWEEPS: usize = 100_000;

fn soft_threshold(v: f64, t: f64) -> f64 {
    if v > t {
        v - t
    } else if v < -t {
        v + t
    } else {
        0.0
    }
}

/// Coordinate descent for `1/2 ||y - X beta||^2 + penalty ||beta||_1`.
pub fn lasso_cd(x: &Matrix, y: &Vector, penalty: f64) -> Result<LassoFit> {
    if x.nrows() != y.len() {
        return Err(Error::DimensionMismatch("design rows and response length differ".into()));
    }
    if !(penalty >= 0.0) || !penalty.is_finite() {
        return Err(Error::InvalidParameter(format!("penalty must be non-negative, got {penalty}")));
    }
    let p = x.ncols();
    let gram = x.tr_mul(x);
    let xty = x.tr_mul(y);
    let yty = y.dot(y);
    if (0..p).any(|j| gram[(j, j)] <= 0.0) {
        return Err(Error::InvalidParameter("design has an all-zero column".into()));
    }
    let scale = xty.amax().max(f64::MIN_POSITIVE);
    let mut beta = Vector::zeros(p);
    // corr = X^T (y - X beta)
    let mut corr = xty.clone();
    for sweep in 1..=MAX_SWEEPS {
        for j in 0..p {
            let old = beta[j];
            let target = corr[j] + gram[(j, j)] * old;
            let new = soft_threshold(target, penalty) / gram[(j, j)];
            let delta = new - old;
            if delta != 0.0 {
                beta[j] = new;
                for k in 0..p {
                    corr[k] -= gram[(k, j)] * delta;
                }
            }
        }
        let gap = if penalty == 0.0 {
            corr.amax() / scale
        } else {
            let rss = (yty - 2.0 * xty.dot(&beta) + beta.dot(&(&gram * &beta))).max(0.0);
            let primal = 0.5 * rss + penalty * beta.lp_norm(1);
            let s = (penalty / corr.amax().max(f64::MIN_POSITIVE)).min(1.0);
            let y_dot_r = yty - xty.dot(&beta);
            let dual = s * y_dot_r - 0.5 * s * s * rss;
            (primal - dual).max(0.0) / primal.max(f64::MIN_POSITIVE)
        };
        let tol = if penalty == 0.0 { 1e-12 } else { 1e-8 };
        if gap <= tol {
            return Ok(LassoFit {
                beta,
                penalty,
                gap,
                sweeps: sweep,
            });
        }
    }
    Err(Error::NoConvergence(format!("lasso did not converge in {MAX_SWEEPS} sweeps")))
}

/// `(sum |beta_j|^order)^(1/order)`.
pub fn lp_norm(beta: &Vector, order: f64) -> f64 {
    beta.iter().map(|b| b.abs().powf(order)).sum::<f64>().powf(1.0 / order)
}

/// Finds the penalty whose solution has `order`-norm within `rel_tol` of
/// `target` by bisection on `[0, max_penalty]`; `solve` must give solutions
/// whose norm decreases with the penalty.
pub fn match_norm<F>(target: f64, order: f64, max_penalty: f64, rel_tol: f64, mut solve: F) -> Result<(f64, Vector)>
where
    F: FnMut(f64) -> Result<Vector>,
{
    if !(target >= 0.0) || !(max_penalty > 0.0) || !(order > 0.0) {
        return Err(Error::InvalidParameter("norm target, order and penalty range must be positive".into()));
    }
    let norm = |b: &Vector| lp_norm(b, order);
    let unpenalised = solve(0.0)?;
    if norm(&unpenalised) <= target * (1.0 + rel_tol) {
        return Ok((0.0, unpenalised));
    }
    let (mut lo, mut hi) = (0.0, max_penalty);
    let mut best = (max_penalty, solve(max_penalty)?);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        let beta = solve(mid)?;
        let n = norm(&beta);
        let err = (n - target).abs();
        if err < (norm(&best.1) - target).abs() {
            best = (mid, beta);
        }
        if err <= 1e-3 * rel_tol * target.max(f64::MIN_POSITIVE) {
            break;
        }
        if n > target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    if (norm(&best.1) - target).abs() > rel_tol * target {
        return Err(Error::NoConvergence("could not match the requested norm".into()));
    }
    Ok(best)
}

/// `argmin_x 1/2 (x - v)^2 + c |x|^alpha` for `alpha >= 1`.
fn bridge_prox(v: f64, c: f64, alpha: f64) -> f64 {
    if alpha == 1.0 {
        return soft_threshold(v, c);
    }
    let a = v.abs();
    if a == 0.0 || c == 0.0 {
        return v;
    }
    // root of x - a + c alpha x^(alpha-1) on [0, a]; the left side increases in x
    let (mut lo, mut hi) = (0.0f64, a);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid - a + c * alpha * mid.powf(alpha - 1.0) > 0.0 {
            hi = mid;
        } else {
            lo = mid;
        }
        if hi - lo <= 1e-16 * a {
            break;
        }
    }
    v.signum() * 0.5 * (lo + hi)
}

/// Accelerated proximal gradient for `1/2 ||y - X beta||^2 + penalty sum |beta_j|^alpha`
/// with `alpha` in `[1, 2)`, where the objective is convex.
pub fn bridge_prox_gradient(x: &Matrix, y: &Vector, alpha: f64, penalty: f64) -> Result<Vector> {
    if !(1.0..2.0).contains(&alpha) {
        return Err(Error::InvalidParameter(format!(
            "proximal solver needs a convex penalty, alpha in [1, 2); got {alpha}"
        )));
    }
    if x.nrows() != y.len() {
        return Err(Error::DimensionMismatch("design rows and response length differ".into()));
    }
    if !(penalty >= 0.0) {
        return Err(Error::InvalidParameter("penalty must be non-negative".into()));
    }
    let gram = x.tr_mul(x);
    let xty = x.tr_mul(y);
    let lipschitz = gram.clone().symmetric_eigenvalues().max();
    if !(lipschitz > 0.0) {
        return Err(Error::InvalidParameter("design has no signal".into()));
    }
    let step = 1.0 / lipschitz;
    let p = x.ncols();
    let mut beta = Vector::zeros(p);
    let mut momentum = beta.clone();
    let mut t = 1.0f64;
    for _ in 0..MAX_SWEEPS * 10 {
        let grad = &gram * &momentum - &xty;
        let mut next = &momentum - grad * step;
        for v in next.iter_mut() {
            *v = bridge_prox(*v, step * penalty, alpha);
        }
        let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
        let change = (&next - &beta).amax();
        momentum = &next + (&next - &beta) * ((t - 1.0) / t_next);
        beta = next;
        t = t_next;
        if change <= 1e-12 * (1.0 + beta.amax()) {
            return Ok(beta);
        }
    }
    Err(Error::NoConvergence("proximal gradient did not converge".into()))
}
