use std::f64::consts::PI;

use rand::Rng;
use rand_distr::{Beta, Gamma};

use super::RngStream;
use crate::error::{Error, Result};

/// Number of exact terms in the Polya-Gamma series before the tail is
/// replaced by a moment-matched Gamma draw.
pub const PG_TRUNCATION: usize = 200;

/// Base distributions used by the kernels, the data generators and the
/// baselines.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Dist {
    Gaussian { mean: f64, var: f64 },
    /// Shape/rate parameterization.
    Gamma { shape: f64, rate: f64 },
    Beta { a: f64, b: f64 },
    Uniform,
    /// `scale * (-ln u)^(1/shape)` for `u ~ U(0, 1)`.
    Weibull { scale: f64, shape: f64 },
    /// `PG(1, c)`.
    PolyaGamma { c: f64 },
}

fn positive(name: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!("{name} must be positive and finite, got {v}")))
    }
}

impl Dist {
    pub fn validate(&self) -> Result<()> {
        match *self {
            Dist::Gaussian { mean, var } => {
                if !mean.is_finite() {
                    return Err(Error::InvalidParameter("gaussian mean must be finite".into()));
                }
                if !(var >= 0.0) || !var.is_finite() {
                    return Err(Error::InvalidParameter(format!(
                        "gaussian variance must be non-negative, got {var}"
                    )));
                }
                Ok(())
            }
            Dist::Gamma { shape, rate } => {
                positive("gamma shape", shape)?;
                positive("gamma rate", rate)
            }
            Dist::Beta { a, b } => {
                positive("beta a", a)?;
                positive("beta b", b)
            }
            Dist::Uniform => Ok(()),
            Dist::Weibull { scale, shape } => {
                positive("weibull scale", scale)?;
                positive("weibull shape", shape)
            }
            Dist::PolyaGamma { c } => {
                if c.is_finite() {
                    Ok(())
                } else {
                    Err(Error::InvalidParameter("polya-gamma tilt must be finite".into()))
                }
            }
        }
    }

    pub fn sample(&self, rng: &mut RngStream) -> Result<f64> {
        self.validate()?;
        Ok(self.sample_unchecked(rng))
    }

    pub fn sample_n(&self, n: usize, rng: &mut RngStream) -> Result<Vec<f64>> {
        self.validate()?;
        Ok((0..n).map(|_| self.sample_unchecked(rng)).collect())
    }

    fn sample_unchecked(&self, rng: &mut RngStream) -> f64 {
        match *self {
            Dist::Gaussian { mean, var } => mean + var.sqrt() * rng.normal(),
            Dist::Gamma { shape, rate } => gamma_unit(shape, rng) / rate,
            Dist::Beta { a, b } => {
                let d = Beta::new(a, b).expect("validated beta parameters");
                rng.inner().sample(d)
            }
            Dist::Uniform => rng.uniform(),
            Dist::Weibull { scale, shape } => scale * (-rng.uniform().ln()).powf(1.0 / shape),
            Dist::PolyaGamma { c } => sample_polya_gamma(c, rng),
        }
    }

    pub fn mean(&self) -> f64 {
        match *self {
            Dist::Gaussian { mean, .. } => mean,
            Dist::Gamma { shape, rate } => shape / rate,
            Dist::Beta { a, b } => a / (a + b),
            Dist::Uniform => 0.5,
            Dist::Weibull { scale, shape } => scale * super::ln_gamma(1.0 + 1.0 / shape).exp(),
            Dist::PolyaGamma { c } => polya_gamma_mean(c),
        }
    }

    pub fn variance(&self) -> f64 {
        match *self {
            Dist::Gaussian { var, .. } => var,
            Dist::Gamma { shape, rate } => shape / (rate * rate),
            Dist::Beta { a, b } => a * b / ((a + b).powi(2) * (a + b + 1.0)),
            Dist::Uniform => 1.0 / 12.0,
            Dist::Weibull { scale, shape } => {
                let g1 = super::ln_gamma(1.0 + 1.0 / shape).exp();
                let g2 = super::ln_gamma(1.0 + 2.0 / shape).exp();
                scale * scale * (g2 - g1 * g1)
            }
            Dist::PolyaGamma { c } => polya_gamma_variance(c),
        }
    }
}

/// Draw from `Gamma(shape, 1)`.
pub fn gamma_unit(shape: f64, rng: &mut RngStream) -> f64 {
    let d = Gamma::new(shape, 1.0).expect("validated gamma shape");
    rng.inner().sample(d)
}

/// `E[PG(1, c)] = tanh(c/2) / (2c)`.
pub fn polya_gamma_mean(c: f64) -> f64 {
    let c = c.abs();
    if c < 1e-6 {
        0.25 - c * c / 48.0
    } else {
        (0.5 * c).tanh() / (2.0 * c)
    }
}

/// `Var[PG(1, c)] = (sinh c - c) / (4 c^3 cosh^2(c/2))`.
pub fn polya_gamma_variance(c: f64) -> f64 {
    let c = c.abs();
    if c < 1e-3 {
        1.0 / 24.0 - c * c / 120.0
    } else {
        let sech = 1.0 / (0.5 * c).cosh();
        (2.0 * (0.5 * c).tanh() - c * sech * sech) / (4.0 * c * c * c)
    }
}

/// Sum over `k > K` of `1 / ((k - 1/2)^2 + a^2)`, approximated by the
/// integral from `K` to infinity.
fn tail_sum(k: f64, a: f64) -> f64 {
    let u = a / k;
    let ratio = if u < 1e-4 { 1.0 - u * u / 3.0 } else { u.atan() / u };
    ratio / k
}

/// Sum over `k > K` of `1 / ((k - 1/2)^2 + a^2)^2`, by the same integral
/// approximation. The closed form cancels badly for small `a / K`, where a
/// power series is used instead.
fn tail_sum_sq(k: f64, a: f64) -> f64 {
    let u = a / k;
    let h = if u < 0.1 {
        let u2 = u * u;
        let mut term_pow = 1.0;
        let mut acc = 0.0;
        for n in 1..=12 {
            let sign = if n % 2 == 1 { 1.0 } else { -1.0 };
            acc += sign * n as f64 * term_pow / (2 * n + 1) as f64;
            term_pow *= u2;
        }
        acc
    } else {
        u.atan() / (2.0 * u.powi(3)) - 1.0 / (2.0 * u * u * (1.0 + u * u))
    };
    h / (k * k * k)
}

fn sample_polya_gamma(c: f64, rng: &mut RngStream) -> f64 {
    let a = c.abs() / (2.0 * PI);
    let a2 = a * a;
    let mut sum = 0.0;
    for k in 1..=PG_TRUNCATION {
        let h = k as f64 - 0.5;
        sum += rng.exp1() / (h * h + a2);
    }
    let kf = PG_TRUNCATION as f64;
    let m = tail_sum(kf, a);
    let v = tail_sum_sq(kf, a);
    sum += gamma_unit(m * m / v, rng) * (v / m);
    sum / (2.0 * PI * PI)
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;

    fn moments(xs: &[f64]) -> (f64, f64) {
        let n = xs.len() as f64;
        let m = xs.iter().sum::<f64>() / n;
        let v = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
        (m, v)
    }

    #[test]
    fn tail_series_agrees_with_closed_form_at_switch() {
        let k = 1.0;
        let u: f64 = 0.1;
        let closed = u.atan() / (2.0 * u.powi(3)) - 1.0 / (2.0 * u * u * (1.0 + u * u));
        let below = tail_sum_sq(k, 0.0999999999);
        assert!((closed - below).abs() < 1e-8, "{closed} {below}");
        // Zero tilt reduces to 1 / (3 K^3).
        assert!((tail_sum_sq(200.0, 0.0) - 1.0 / (3.0 * 200f64.powi(3))).abs() < 1e-20);
    }

    #[test]
    fn tail_sums_match_direct_summation() {
        // Direct sum over k = K+1 .. K+2e6 plus a negligible remainder.
        for &a in &[0.0, 3.0, 150.0, 900.0] {
            let k = 200.0;
            let (mut s1, mut s2) = (0.0, 0.0);
            for i in 201..2_000_201 {
                let h = i as f64 - 0.5;
                let d = h * h + a * a;
                s1 += 1.0 / d;
                s2 += 1.0 / (d * d);
            }
            s1 += 1.0 / 2_000_200.0;
            assert!((tail_sum(k, a) - s1).abs() / s1 < 1e-5, "a={a}");
            assert!((tail_sum_sq(k, a) - s2).abs() / s2 < 1e-4, "a={a}");
        }
    }

    #[test]
    fn polya_gamma_moment_formulas() {
        assert!((polya_gamma_mean(0.0) - 0.25).abs() < 1e-15);
        assert!((polya_gamma_variance(0.0) - 1.0 / 24.0).abs() < 1e-15);
        // Continuity across the small-c branch switch.
        assert!((polya_gamma_variance(0.999e-3) - polya_gamma_variance(1.001e-3)).abs() < 1e-9);
        // Frozen values from the defining series, summed to 2e6 terms.
        assert!((polya_gamma_mean(2.0) - 0.190_398_538_988_941_2).abs() < 1e-15);
        assert!((polya_gamma_variance(2.0) - 0.021_351_238_396_355_2).abs() < 1e-12);
    }

    #[test]
    fn polya_gamma_sampler_moments_zero_tilt() {
        let mut rng = RngStream::new(11, 0);
        let xs = Dist::PolyaGamma { c: 0.0 }.sample_n(200_000, &mut rng).unwrap();
        let (m, v) = moments(&xs);
        assert!((m - 0.25).abs() < 3e-3 * 0.5, "mean {m}");
        assert!((v - 1.0 / 24.0).abs() / (1.0 / 24.0) < 0.03, "var {v}");
    }

    #[test]
    fn polya_gamma_sampler_mean_large_tilt() {
        let mut rng = RngStream::new(12, 0);
        let xs = Dist::PolyaGamma { c: 5.0 }.sample_n(100_000, &mut rng).unwrap();
        let (m, _) = moments(&xs);
        let target = (2.5f64).tanh() / 10.0;
        assert!((m - target).abs() / target < 0.01, "mean {m} vs {target}");
    }

    #[test]
    fn rejects_bad_parameters() {
        let mut rng = RngStream::new(1, 0);
        assert!(Dist::Gamma { shape: -1.0, rate: 1.0 }.sample(&mut rng).is_err());
        assert!(Dist::Weibull { scale: 1.0, shape: 0.0 }.sample(&mut rng).is_err());
        assert!(Dist::Gaussian { mean: 0.0, var: -1.0 }.sample(&mut rng).is_err());
    }

    #[test]
    fn gamma_and_weibull_moments() {
        let mut rng = RngStream::new(3, 1);
        let g = Dist::Gamma { shape: 2.5, rate: 4.0 };
        let (m, v) = moments(&g.sample_n(200_000, &mut rng).unwrap());
        assert!((m - g.mean()).abs() < 0.01 * g.mean());
        assert!((v - g.variance()).abs() < 0.03 * g.variance());
        let w = Dist::Weibull { scale: 1.5, shape: 2.0 };
        let (m, v) = moments(&w.sample_n(200_000, &mut rng).unwrap());
        assert!((m - w.mean()).abs() < 0.01 * w.mean());
        assert!((v - w.variance()).abs() < 0.03 * w.variance());
    }
}
