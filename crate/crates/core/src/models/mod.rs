//! Target log-joint densities `log p(x, z)` with gradients and
//! Hessian-vector products in the latent `z`.

mod bridge;
mod conjugate;
mod data;
mod logistic;
mod nb;
mod toy;

pub use bridge::BridgeModel;
pub use conjugate::ConjugateGaussian;
pub use data::{load_diabetes, read_numeric_csv, standardize_design, Dataset};
pub use logistic::LogisticModel;
pub use nb::{nb_grid_posterior, GridPosterior, GridSpec, NegBinModel};
pub use toy::{GaussianTarget, MixtureTarget, Toy2d, Toy2dKind};

use crate::error::{Error, Result};
use crate::numerics::Vector;

/// Optional minibatch: indices into the data set. `None` means the full data.
pub type Batch<'a> = Option<&'a [usize]>;

/// A differentiable unnormalized target over an unconstrained latent.
///
/// Implementations with learnable hyperparameters (`theta`) override the
/// `theta` family of methods; the defaults describe a model without any.
pub trait TargetModel: Send + Sync {
    fn dim(&self) -> usize;

    /// Number of observations addressable by a minibatch (0 if none).
    fn n_data(&self) -> usize {
        0
    }

    fn variable_names(&self) -> Vec<String> {
        (1..=self.dim()).map(|i| format!("z{i}")).collect()
    }

    fn log_joint(&self, z: &Vector, batch: Batch) -> Result<f64>;

    fn grad_z(&self, z: &Vector, batch: Batch) -> Result<Vector>;

    /// Hessian of the log-joint in `z` applied to `v`.
    fn hvp(&self, z: &Vector, v: &Vector, batch: Batch) -> Result<Vector>;

    fn theta(&self) -> Vec<f64> {
        Vec::new()
    }

    fn set_theta(&mut self, theta: &[f64]) -> Result<()> {
        if theta.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidParameter("model has no learnable hyperparameters".into()))
        }
    }

    fn grad_theta(&self, _z: &Vector, _batch: Batch) -> Result<Vec<f64>> {
        Ok(Vec::new())
    }

    /// `d/dtheta [w . grad_z log p(z)]`.
    fn grad_z_theta_vjp(&self, _z: &Vector, _w: &Vector, _batch: Batch) -> Result<Vec<f64>> {
        Ok(Vec::new())
    }
}

pub(crate) fn check_point(dim: usize, z: &Vector) -> Result<()> {
    if z.len() != dim {
        return Err(Error::DimensionMismatch(format!(
            "latent has {} coordinates, model expects {dim}",
            z.len()
        )));
    }
    if z.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("latent point".into()));
    }
    Ok(())
}

/// Validated minibatch: the indices to visit and the likelihood scale `N/n`.
pub(crate) fn resolve_batch(n_data: usize, batch: Batch) -> Result<(Vec<usize>, f64)> {
    match batch {
        None => Ok(((0..n_data).collect(), 1.0)),
        Some(idx) => {
            if idx.is_empty() {
                return Err(Error::Empty("minibatch".into()));
            }
            if let Some(&bad) = idx.iter().find(|&&i| i >= n_data) {
                return Err(Error::InvalidParameter(format!(
                    "minibatch index {bad} out of range for {n_data} observations"
                )));
            }
            Ok((idx.to_vec(), n_data as f64 / idx.len() as f64))
        }
    }
}

/// Dense Hessian assembled from `dim` Hessian-vector products.
pub fn dense_hessian<M: TargetModel + ?Sized>(model: &M, z: &Vector, batch: Batch) -> Result<crate::Matrix> {
    let d = model.dim();
    let mut h = crate::Matrix::zeros(d, d);
    for j in 0..d {
        let mut e = Vector::zeros(d);
        e[j] = 1.0;
        h.set_column(j, &model.hvp(z, &e, batch)?);
    }
    Ok(h)
}
