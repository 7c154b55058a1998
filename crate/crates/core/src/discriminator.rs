//! Density-ratio discriminator: an MLP logit `D(z)` trained to separate
//! chain samples (label 1) from proposal samples (label 0), so that at the
//! optimum `D(z) = log q_tilde(z) - log q_phi(z)`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mlp::{Mlp, OutputActivation};
use crate::numerics::{log_sigmoid, sigmoid, Matrix, RngStream, Vector};

pub const DEFAULT_HIDDEN: usize = 64;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Discriminator {
    pub net: Mlp,
}

fn stack(zs: &[Vector], dim: usize) -> Result<Matrix> {
    if zs.iter().any(|z| z.len() != dim) {
        return Err(Error::DimensionMismatch(format!("discriminator expects {dim} inputs")));
    }
    let mut m = Matrix::zeros(dim, zs.len());
    for (j, z) in zs.iter().enumerate() {
        m.set_column(j, z);
    }
    Ok(m)
}

impl Discriminator {
    /// Two tanh layers of `hidden` units; the output layer starts at zero.
    pub fn new(dim: usize, hidden: usize, rng: &mut RngStream) -> Result<Self> {
        Ok(Self {
            net: Mlp::new(&[dim, hidden, hidden, 1], OutputActivation::Identity, true, rng)?,
        })
    }

    pub fn dim(&self) -> usize {
        self.net.input_dim()
    }

    pub fn n_params(&self) -> usize {
        self.net.n_params()
    }

    /// Logits for a batch of points.
    pub fn logits(&self, zs: &[Vector]) -> Result<Vec<f64>> {
        if zs.is_empty() {
            return Ok(Vec::new());
        }
        let cache = self.net.forward(&stack(zs, self.dim())?)?;
        Ok(cache.output().row(0).iter().copied().collect())
    }

    /// Logits and their input gradients for a batch of points.
    pub fn logits_and_input_grads(&self, zs: &[Vector]) -> Result<(Vec<f64>, Vec<Vector>)> {
        if zs.is_empty() {
            return Ok((Vec::new(), Vec::new()));
        }
        let cache = self.net.forward(&stack(zs, self.dim())?)?;
        let values = cache.output().row(0).iter().copied().collect();
        let (_, gin) = self.net.backward(&cache, &Matrix::from_element(1, zs.len(), 1.0))?;
        let grads = gin.column_iter().map(|c| c.into_owned()).collect();
        Ok((values, grads))
    }
}

pub fn d_forward(d: &Discriminator, z: &Vector) -> Result<f64> {
    Ok(d.net.eval(z.as_slice())?[0])
}

pub fn d_input_grad(d: &Discriminator, z: &Vector) -> Result<Vector> {
    let (_, g) = d.logits_and_input_grads(std::slice::from_ref(z))?;
    Ok(g.into_iter().next().unwrap())
}

/// Logistic objective `mean log sigma(D(pos)) + mean log(1 - sigma(D(neg)))`
/// (to be maximized) and its gradient in the discriminator parameters.
pub fn d_loss_grad(d: &Discriminator, pos: &[Vector], neg: &[Vector]) -> Result<(f64, Vec<f64>)> {
    if pos.is_empty() || neg.is_empty() {
        return Err(Error::Empty("discriminator needs positive and negative samples".into()));
    }
    let mut all = Vec::with_capacity(pos.len() + neg.len());
    all.extend_from_slice(pos);
    all.extend_from_slice(neg);
    let cache = d.net.forward(&stack(&all, d.dim())?)?;
    let logits = cache.output().row(0).clone_owned();
    let (np, nn) = (pos.len() as f64, neg.len() as f64);
    let mut objective = 0.0;
    let mut out_grad = Matrix::zeros(1, all.len());
    for (j, &l) in logits.iter().enumerate() {
        if j < pos.len() {
            objective += log_sigmoid(l) / np;
            out_grad[(0, j)] = sigmoid(-l) / np;
        } else {
            objective += log_sigmoid(-l) / nn;
            out_grad[(0, j)] = -sigmoid(l) / nn;
        }
    }
    let (grad, _) = d.net.backward(&cache, &out_grad)?;
    Ok((objective, grad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{finite_diff_grad, relative_error};
    use crate::trainer::{Adam, AdamConfig};

    fn random_d() -> Discriminator {
        let mut rng = RngStream::new(4, 4);
        let mut d = Discriminator::new(2, 8, &mut rng).unwrap();
        for (i, p) in d.net.params.iter_mut().enumerate() {
            *p += 0.1 * ((i * 13 % 7) as f64 / 7.0 - 0.5);
        }
        d
    }

    fn pts(seed: u64, n: usize, shift: f64) -> Vec<Vector> {
        let mut rng = RngStream::new(seed, 0);
        (0..n).map(|_| Vector::from_vec(vec![rng.normal() + shift, rng.normal()])).collect()
    }

    #[test]
    fn zero_output_layer_gives_zero_logit_and_gradient() {
        let mut rng = RngStream::new(1, 0);
        let d = Discriminator::new(3, 16, &mut rng).unwrap();
        let z = Vector::from_vec(vec![0.3, -2.0, 1.0]);
        assert_eq!(d_forward(&d, &z).unwrap(), 0.0);
        assert_eq!(d_input_grad(&d, &z).unwrap(), Vector::zeros(3));
        let d2 = Discriminator::new(2, 16, &mut rng).unwrap();
        let (obj, _) = d_loss_grad(&d2, &pts(1, 5, 0.0), &pts(2, 7, 0.0)).unwrap();
        assert!((obj - 2.0 * 0.5f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn affine_discriminator() {
        let mut rng = RngStream::new(1, 0);
        let mut d = Discriminator { net: Mlp::new(&[2, 1], OutputActivation::Identity, true, &mut rng).unwrap() };
        d.net.params = vec![0.5, -1.5, 0.25];
        let z = Vector::from_vec(vec![2.0, 1.0]);
        assert!((d_forward(&d, &z).unwrap() - (1.0 - 1.5 + 0.25)).abs() < 1e-15);
        let g = d_input_grad(&d, &z).unwrap();
        assert_eq!(g.as_slice(), &[0.5, -1.5]);
    }

    #[test]
    fn gradients_match_finite_differences() {
        let d = random_d();
        let (pos, neg) = (pts(3, 6, 0.5), pts(4, 4, -0.5));
        let (_, g) = d_loss_grad(&d, &pos, &neg).unwrap();
        let fd = finite_diff_grad(
            |p| {
                let mut dd = d.clone();
                dd.net.params.copy_from_slice(p);
                Ok(d_loss_grad(&dd, &pos, &neg)?.0)
            },
            &d.net.params,
            1e-6,
        )
        .unwrap();
        assert!(relative_error(&g, &fd) < 1e-7);
        let z = Vector::from_vec(vec![0.7, -0.2]);
        let gi = d_input_grad(&d, &z).unwrap();
        let fdi = finite_diff_grad(|x| d_forward(&d, &Vector::from_column_slice(x)), z.as_slice(), 1e-6).unwrap();
        assert!(relative_error(gi.as_slice(), &fdi) < 1e-7);
    }

    #[test]
    fn loss_is_order_invariant_and_rejects_empty() {
        let d = random_d();
        let (pos, neg) = (pts(3, 6, 0.5), pts(4, 4, -0.5));
        let mut rev = pos.clone();
        rev.reverse();
        let a = d_loss_grad(&d, &pos, &neg).unwrap().0;
        let b = d_loss_grad(&d, &rev, &neg).unwrap().0;
        assert!((a - b).abs() < 1e-14);
        assert!(d_loss_grad(&d, &[], &neg).is_err());
    }

    #[test]
    fn identical_samples_push_logits_to_zero() {
        // With pos = neg the objective is maximized at D = 0; starting from a
        // positive bias the gradient step lowers the logits.
        let mut d = random_d();
        let p = pts(9, 20, 0.0);
        let before: f64 = d.logits(&p).unwrap().iter().map(|v| v.abs()).sum();
        let mut opt = Adam::new(AdamConfig { lr: 0.01, ..Default::default() }, d.n_params());
        for _ in 0..300 {
            let (_, g) = d_loss_grad(&d, &p, &p).unwrap();
            let neg: Vec<f64> = g.iter().map(|v| -v).collect();
            opt.step(&mut d.net.params, &neg).unwrap();
        }
        let after: f64 = d.logits(&p).unwrap().iter().map(|v| v.abs()).sum();
        assert!(after < 0.1 * before);
    }

    #[test]
    fn recovers_gaussian_log_ratio() {
        // pos ~ N(1, 1), neg ~ N(0, 1): log ratio is z - 1/2.
        let mut rng = RngStream::new(77, 0);
        let mut d = Discriminator::new(1, 16, &mut rng).unwrap();
        let mut opt = Adam::new(AdamConfig { lr: 0.01, ..Default::default() }, d.n_params());
        for it in 0..3000u64 {
            let mut r = RngStream::derive(78, &[it]);
            let pos: Vec<Vector> = (0..256).map(|_| Vector::from_element(1, 1.0 + r.normal())).collect();
            let neg: Vec<Vector> = (0..256).map(|_| Vector::from_element(1, r.normal())).collect();
            let (_, g) = d_loss_grad(&d, &pos, &neg).unwrap();
            let neg_g: Vec<f64> = g.iter().map(|v| -v).collect();
            opt.step(&mut d.net.params, &neg_g).unwrap();
        }
        let mut err = 0.0;
        let n = 51;
        for i in 0..n {
            let z = -2.0 + 5.0 * i as f64 / (n - 1) as f64;
            err += (d_forward(&d, &Vector::from_element(1, z)).unwrap() - (z - 0.5)).abs() / n as f64;
        }
        assert!(err <= 0.1, "mean absolute error {err}");
    }
}
