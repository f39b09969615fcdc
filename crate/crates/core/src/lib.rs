//! Weight-perturbation training numerics.
//!
//! This crate holds the pure algorithmic side of the toolkit: small
//! feed-forward models with exact reverse-mode gradients, the filter-wise
//! random and adversarial perturbation samplers, single-step update rules for
//! SGD, SAM, RWP, ARWP and their mixed-objective variants, and the analysis
//! routines (Lanczos spectra, loss landscapes, radius sweeps, closed-form
//! convergence bounds).
//!
//! It is `#![no_std]` and only needs `alloc`. File formats, datasets, threads
//! and the command-line interface live in the `perturbopt` crate.

#![no_std]
// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

extern crate alloc;

#[cfg(test)]
extern crate std;

pub mod analysis;
pub mod error;
pub mod layout;
pub mod model;
pub mod objective;
pub mod optim;
pub mod perturb;
pub mod rng;
pub mod tensor;

pub use error::{Error, Result};
pub use layout::{FilterLayout, ParamVector};
pub use model::{Activation, Batch, Layer, LossHead, ModelSpec, Targets};
pub use objective::{FullBatch, Objective, Quadratic};
pub use tensor::Tensor;

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn norm2(a: &[f64]) -> f64 {
    libm::sqrt(dot(a, a))
}
