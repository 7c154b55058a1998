//! Small fully connected network with tanh hidden layers, evaluated on
//! column batches.

use nalgebra::DMatrixView;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{sigmoid, softplus, tanh, Matrix, RngStream};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum OutputActivation {
    Identity,
    Softplus,
}

/// Layer sizes plus a flat parameter vector. Each layer stores its weight
/// matrix (column-major, `out x in`) followed by its bias.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub sizes: Vec<usize>,
    pub output: OutputActivation,
    pub params: Vec<f64>,
}

/// Forward activations kept for the backward pass.
pub struct MlpCache {
    activations: Vec<Matrix>,
    output_pre: Matrix,
}

impl MlpCache {
    pub fn output(&self) -> &Matrix {
        self.activations.last().expect("at least one layer")
    }
}

fn layer_offsets(sizes: &[usize]) -> Vec<usize> {
    let mut offsets = vec![0];
    for w in sizes.windows(2) {
        let last = *offsets.last().unwrap();
        offsets.push(last + w[0] * w[1] + w[1]);
    }
    offsets
}

impl Mlp {
    /// Weights uniform in `+-1/sqrt(fan_in)`, zero biases. With
    /// `zero_last` the final layer starts at zero.
    pub fn new(
        sizes: &[usize],
        output: OutputActivation,
        zero_last: bool,
        rng: &mut RngStream,
    ) -> Result<Self> {
        if sizes.len() < 2 || sizes.iter().any(|&s| s == 0) {
            return Err(Error::InvalidParameter(format!("invalid layer sizes {sizes:?}")));
        }
        let offsets = layer_offsets(sizes);
        let mut params = vec![0.0; *offsets.last().unwrap()];
        let layers = sizes.len() - 1;
        for l in 0..layers {
            if zero_last && l == layers - 1 {
                continue;
            }
            let (fan_in, fan_out) = (sizes[l], sizes[l + 1]);
            let bound = 1.0 / (fan_in as f64).sqrt();
            for p in &mut params[offsets[l]..offsets[l] + fan_in * fan_out] {
                *p = bound * (2.0 * rng.uniform() - 1.0);
            }
        }
        Ok(Self {
            sizes: sizes.to_vec(),
            output,
            params,
        })
    }

    pub fn n_params(&self) -> usize {
        self.params.len()
    }

    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.sizes.last().unwrap()
    }

    /// Sets every bias of the final layer.
    pub fn set_output_bias(&mut self, value: f64) {
        let offsets = layer_offsets(&self.sizes);
        let l = self.sizes.len() - 2;
        let start = offsets[l] + self.sizes[l] * self.sizes[l + 1];
        for b in &mut self.params[start..offsets[l + 1]] {
            *b = value;
        }
    }

    fn weights(&self, l: usize, offsets: &[usize]) -> (DMatrixView<'_, f64>, &[f64]) {
        let (i, o) = (self.sizes[l], self.sizes[l + 1]);
        let w = DMatrixView::from_slice(&self.params[offsets[l]..offsets[l] + i * o], o, i);
        let b = &self.params[offsets[l] + i * o..offsets[l + 1]];
        (w, b)
    }

    /// Forward pass on `input` (`input_dim x batch`).
    pub fn forward(&self, input: &Matrix) -> Result<MlpCache> {
        if input.nrows() != self.input_dim() {
            return Err(Error::DimensionMismatch(format!(
                "network expects {} inputs, got {}",
                self.input_dim(),
                input.nrows()
            )));
        }
        let offsets = layer_offsets(&self.sizes);
        let layers = self.sizes.len() - 1;
        let mut activations = vec![input.clone()];
        let mut output_pre = Matrix::zeros(0, 0);
        for l in 0..layers {
            let (w, b) = self.weights(l, &offsets);
            let mut pre = w * activations.last().unwrap();
            for mut col in pre.column_iter_mut() {
                for (v, bi) in col.iter_mut().zip(b) {
                    *v += bi;
                }
            }
            if l + 1 < layers {
                pre.apply(|v| *v = tanh(*v));
                activations.push(pre);
            } else {
                let out = match self.output {
                    OutputActivation::Identity => pre.clone(),
                    OutputActivation::Softplus => pre.map(softplus),
                };
                output_pre = pre;
                activations.push(out);
            }
        }
        Ok(MlpCache {
            activations,
            output_pre,
        })
    }

    /// Backward pass given the cotangent of the output. Returns the flat
    /// parameter gradient and the input cotangent.
    pub fn backward(&self, cache: &MlpCache, out_grad: &Matrix) -> Result<(Vec<f64>, Matrix)> {
        let out = cache.output();
        if out_grad.shape() != out.shape() {
            return Err(Error::DimensionMismatch("output cotangent shape".into()));
        }
        let offsets = layer_offsets(&self.sizes);
        let layers = self.sizes.len() - 1;
        let mut grad = vec![0.0; self.params.len()];
        let mut delta = match self.output {
            OutputActivation::Identity => out_grad.clone(),
            OutputActivation::Softplus => out_grad.zip_map(&cache.output_pre, |g, p| g * sigmoid(p)),
        };
        for l in (0..layers).rev() {
            let (w, _) = self.weights(l, &offsets);
            let a_prev = &cache.activations[l];
            let (i, o) = (self.sizes[l], self.sizes[l + 1]);
            let gw = &delta * a_prev.transpose();
            grad[offsets[l]..offsets[l] + i * o].copy_from_slice(gw.as_slice());
            for (r, g) in grad[offsets[l] + i * o..offsets[l + 1]].iter_mut().enumerate() {
                *g = delta.row(r).sum();
            }
            let mut back = w.transpose() * &delta;
            if l > 0 {
                back.zip_apply(a_prev, |b, a| *b *= 1.0 - a * a);
            }
            delta = back;
        }
        Ok((grad, delta))
    }

    /// Output for a single input vector.
    pub fn eval(&self, x: &[f64]) -> Result<Vec<f64>> {
        let cache = self.forward(&Matrix::from_column_slice(x.len(), 1, x))?;
        Ok(cache.output().column(0).iter().copied().collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::finite_diff_grad;

    fn net(output: OutputActivation) -> Mlp {
        let mut rng = RngStream::new(3, 0);
        let mut m = Mlp::new(&[3, 5, 4, 2], output, false, &mut rng).unwrap();
        for (i, p) in m.params.iter_mut().enumerate() {
            *p += 0.01 * (i % 7) as f64;
        }
        m
    }

    fn loss(m: &Mlp, x: &Matrix, w: &Matrix) -> f64 {
        m.forward(x).unwrap().output().component_mul(w).sum()
    }

    #[test]
    fn backward_matches_finite_differences() {
        for output in [OutputActivation::Identity, OutputActivation::Softplus] {
            let m = net(output);
            let x = Matrix::from_fn(3, 4, |i, j| 0.3 * i as f64 - 0.2 * j as f64 + 0.1);
            let w = Matrix::from_fn(2, 4, |i, j| 1.0 + 0.5 * i as f64 - 0.25 * j as f64);
            let cache = m.forward(&x).unwrap();
            let (gp, gx) = m.backward(&cache, &w).unwrap();
            let fd = finite_diff_grad(
                |p| {
                    let mut mm = m.clone();
                    mm.params.copy_from_slice(p);
                    Ok(loss(&mm, &x, &w))
                },
                &m.params,
                1e-6,
            )
            .unwrap();
            for (a, b) in gp.iter().zip(&fd) {
                assert!((a - b).abs() < 1e-7, "{a} {b}");
            }
            let fdx = finite_diff_grad(
                |xs| Ok(loss(&m, &Matrix::from_column_slice(3, 4, xs), &w)),
                x.as_slice(),
                1e-6,
            )
            .unwrap();
            for (a, b) in gx.as_slice().iter().zip(&fdx) {
                assert!((a - b).abs() < 1e-7);
            }
        }
    }

    #[test]
    fn zero_last_layer_gives_constant_output() {
        let mut rng = RngStream::new(1, 1);
        let mut m = Mlp::new(&[2, 8, 1], OutputActivation::Softplus, true, &mut rng).unwrap();
        m.set_output_bias(0.0);
        let a = m.eval(&[0.1, 0.2]).unwrap()[0];
        let b = m.eval(&[-3.0, 5.0]).unwrap()[0];
        assert_eq!(a, b);
        assert!((a - 2f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn rejects_wrong_input_size() {
        let m = net(OutputActivation::Identity);
        assert!(m.forward(&Matrix::zeros(2, 1)).is_err());
    }
}
