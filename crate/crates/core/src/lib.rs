//! Core library for MCMC-interactive variational inference (MIVI).
//!
//! A diagonal Gaussian proposal `q_phi` is pushed through a few steps of a
//! learnable Markov kernel to give an implicit distribution `q_tilde`. The
//! proposal, the kernel and an optional discriminator are trained jointly by
//! [`trainer::train`].

pub mod discriminator;
pub mod error;
pub mod evaluation;
pub mod gradcheck;
pub mod mlp;
pub mod models;
pub mod numerics;
pub mod trainer;
pub mod transitions;
pub mod variational;

pub use error::{Error, Result};
pub use numerics::{Matrix, RngStream, Vector};
