//! The loss interface shared by neural models and synthetic quadratics.

use alloc::format;
use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;

use crate::layout::FilterLayout;
use crate::model::{Batch, Model};
use crate::rng::{mix64, DrawKey};
use crate::{Error, Result};

/// A differentiable empirical loss over batches of type `Batch`.
pub trait Objective: Sync {
    type Batch: Clone + Sync;

    fn layout(&self) -> &Arc<FilterLayout>;

    fn loss(&self, w: &[f64], batch: &Self::Batch) -> Result<f64>;

    fn loss_and_grad(&self, w: &[f64], batch: &Self::Batch) -> Result<(f64, Vec<f64>)>;

    /// Number of examples in `batch`.
    fn batch_len(&self, batch: &Self::Batch) -> usize;

    /// Consecutive sub-batches of `size` examples (m-sharpness).
    fn split(&self, batch: &Self::Batch, size: usize) -> Result<Vec<Self::Batch>>;

    fn dim(&self) -> usize {
        self.layout().total_dim()
    }
}

impl Objective for Model {
    type Batch = Batch;

    fn layout(&self) -> &Arc<FilterLayout> {
        Model::layout(self)
    }

    fn loss(&self, w: &[f64], batch: &Batch) -> Result<f64> {
        Model::loss(self, w, batch)
    }

    fn loss_and_grad(&self, w: &[f64], batch: &Batch) -> Result<(f64, Vec<f64>)> {
        Model::loss_and_grad(self, w, batch)
    }

    fn batch_len(&self, batch: &Batch) -> usize {
        batch.len()
    }

    fn split(&self, batch: &Batch, size: usize) -> Result<Vec<Batch>> {
        batch.chunks(size)
    }
}

/// The whole objective; used by data-free problems.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct FullBatch;

/// `L(w) = ½ wᵀ A w` for a symmetric positive semi-definite `A`.
///
/// The minimizer is `w* = 0` with `L* = 0`. The loss is exact, so gradient
/// noise is zero.
#[derive(Debug, Clone)]
pub struct Quadratic {
    a: Vec<f64>,
    dim: usize,
    eigenvalues: Option<Vec<f64>>,
    layout: Arc<FilterLayout>,
}

impl Quadratic {
    /// Row-major `dim × dim` symmetric matrix.
    pub fn new(a: Vec<f64>, dim: usize) -> Result<Self> {
        if dim == 0 || a.len() != dim * dim {
            return Err(Error::Shape(format!("need {dim}x{dim} matrix, got {} values", a.len())));
        }
        for i in 0..dim {
            for j in 0..i {
                if a[i * dim + j] != a[j * dim + i] {
                    return Err(Error::Shape(format!("matrix not symmetric at ({i}, {j})")));
                }
            }
        }
        Ok(Self { a, dim, eigenvalues: None, layout: Arc::new(FilterLayout::single(dim)) })
    }

    pub fn diagonal(eigenvalues: &[f64]) -> Self {
        let dim = eigenvalues.len();
        let mut a = vec![0.0; dim * dim];
        for (i, &e) in eigenvalues.iter().enumerate() {
            a[i * dim + i] = e;
        }
        Self {
            a,
            dim,
            eigenvalues: Some(eigenvalues.to_vec()),
            layout: Arc::new(FilterLayout::single(dim)),
        }
    }

    /// `Q diag(eigenvalues) Qᵀ` with a seeded random orthogonal `Q`.
    pub fn rotated(eigenvalues: &[f64], seed: u64) -> Self {
        let d = eigenvalues.len();
        let q = random_orthogonal(d, seed);
        let mut a = vec![0.0; d * d];
        for i in 0..d {
            for j in 0..=i {
                let v: f64 = (0..d).map(|k| q[i * d + k] * eigenvalues[k] * q[j * d + k]).sum();
                a[i * d + j] = v;
                a[j * d + i] = v;
            }
        }
        Self {
            a,
            dim: d,
            eigenvalues: Some(eigenvalues.to_vec()),
            layout: Arc::new(FilterLayout::single(d)),
        }
    }

    /// Eigenvalues `beta · cond^{-i/(d-1)}`, spanning `[beta/cond, beta]`.
    pub fn log_spaced_spectrum(d: usize, condition_number: f64, beta: f64) -> Vec<f64> {
        if d == 1 {
            return vec![beta];
        }
        (0..d)
            .map(|i| beta * libm::pow(condition_number, -(i as f64) / (d - 1) as f64))
            .collect()
    }

    pub fn with_layout(mut self, layout: Arc<FilterLayout>) -> Result<Self> {
        layout.check(self.dim)?;
        self.layout = layout;
        Ok(self)
    }

    pub fn matrix(&self) -> &[f64] {
        &self.a
    }

    pub fn eigenvalues(&self) -> Option<&[f64]> {
        self.eigenvalues.as_deref()
    }

    pub fn trace(&self) -> f64 {
        (0..self.dim).map(|i| self.a[i * self.dim + i]).sum()
    }

    pub fn apply(&self, v: &[f64]) -> Vec<f64> {
        (0..self.dim)
            .map(|i| crate::dot(&self.a[i * self.dim..(i + 1) * self.dim], v))
            .collect()
    }

    pub fn value(&self, w: &[f64]) -> f64 {
        0.5 * crate::dot(w, &self.apply(w))
    }
}

impl Objective for Quadratic {
    type Batch = FullBatch;

    fn layout(&self) -> &Arc<FilterLayout> {
        &self.layout
    }

    fn loss(&self, w: &[f64], _: &FullBatch) -> Result<f64> {
        self.layout.check(w.len())?;
        Ok(self.value(w))
    }

    fn loss_and_grad(&self, w: &[f64], _: &FullBatch) -> Result<(f64, Vec<f64>)> {
        self.layout.check(w.len())?;
        let g = self.apply(w);
        Ok((0.5 * crate::dot(w, &g), g))
    }

    fn batch_len(&self, _: &FullBatch) -> usize {
        1
    }

    fn split(&self, _: &FullBatch, size: usize) -> Result<Vec<FullBatch>> {
        if size == 1 {
            Ok(vec![FullBatch])
        } else {
            Err(Error::InvalidConfig(format!("full-batch objective cannot split into chunks of {size}")))
        }
    }
}

/// Row-major orthogonal matrix from Gram–Schmidt on Gaussian columns.
fn random_orthogonal(d: usize, seed: u64) -> Vec<f64> {
    let mut g = DrawKey::from_raw(mix64(seed ^ 0xA5A5)).normal(0);
    let mut cols: Vec<Vec<f64>> = Vec::with_capacity(d);
    while cols.len() < d {
        let mut v: Vec<f64> = (0..d).map(|_| g.sample()).collect();
        for _ in 0..2 {
            for c in &cols {
                let p = crate::dot(&v, c);
                v.iter_mut().zip(c).for_each(|(x, y)| *x -= p * y);
            }
        }
        let n = crate::norm2(&v);
        if n > 1e-8 {
            v.iter_mut().for_each(|x| *x /= n);
            cols.push(v);
        }
    }
    let mut q = vec![0.0; d * d];
    for (j, c) in cols.iter().enumerate() {
        for i in 0..d {
            q[i * d + j] = c[i];
        }
    }
    q
}

/// Matrix-free Hessian-vector product by central differences of gradients
/// along `v/‖v‖`, rescaled by `‖v‖`.
pub fn hvp<O: Objective + ?Sized>(
    obj: &O,
    w: &[f64],
    batch: &O::Batch,
    v: &[f64],
    h: f64,
) -> Result<Vec<f64>> {
    if v.len() != w.len() {
        return Err(Error::LayoutMismatch { expected: w.len(), found: v.len() });
    }
    if !(h > 0.0) {
        return Err(Error::InvalidConfig(format!("finite-difference step must be positive, got {h}")));
    }
    let nv = crate::norm2(v);
    if nv == 0.0 {
        return Err(Error::ZeroVector);
    }
    let plus: Vec<f64> = w.iter().zip(v).map(|(a, b)| a + h * b / nv).collect();
    let minus: Vec<f64> = w.iter().zip(v).map(|(a, b)| a - h * b / nv).collect();
    let (_, gp) = obj.loss_and_grad(&plus, batch)?;
    let (_, gm) = obj.loss_and_grad(&minus, batch)?;
    Ok(gp.iter().zip(&gm).map(|(p, m)| (p - m) / (2.0 * h) * nv).collect())
}

/// Default HVP step `1e-4 · (1 + ‖w‖∞)`.
pub fn default_hvp_step(w: &[f64]) -> f64 {
    1e-4 * (1.0 + w.iter().fold(0.0f64, |m, v| m.max(v.abs())))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn log_spectrum_endpoints() {
        let e = Quadratic::log_spaced_spectrum(10, 100.0, 1.0);
        assert_eq!(e[0], 1.0);
        assert!((e[9] - 0.01).abs() < 1e-15);
        assert!(e.windows(2).all(|w| w[0] > w[1]));
    }

    #[test]
    fn rotated_keeps_trace_and_symmetry() {
        let eig = [3.0, 1.0, 0.5, 0.25];
        let q = Quadratic::rotated(&eig, 9);
        assert!((q.trace() - 4.75).abs() < 1e-12);
        assert!(Quadratic::new(q.matrix().to_vec(), 4).is_ok());
    }

    #[test]
    fn hvp_rejects_zero_vector() {
        let q = Quadratic::diagonal(&[1.0, 2.0]);
        assert_eq!(hvp(&q, &[1.0, 1.0], &FullBatch, &[0.0, 0.0], 1e-4), Err(Error::ZeroVector));
    }

    #[test]
    fn split_full_batch() {
        let q = Quadratic::diagonal(&[1.0]);
        assert!(q.split(&FullBatch, 1).is_ok());
        assert!(q.split(&FullBatch, 2).is_err());
    }
}
