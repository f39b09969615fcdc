//! Flat parameter storage and its partition into filter groups.
//!
//! Every trainable parameter of a model lives in one contiguous `f64` buffer.
//! A [`FilterLayout`] splits that buffer into `k` groups: one per output
//! filter of a convolution, one per output-neuron weight row of a dense layer
//! and one per bias vector. Filter-wise perturbations scale each group by its
//! own norm.

use alloc::format;
use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;
use core::ops::Range;

use crate::{Error, Result};

/// Partition of `[0, total_dim)` into contiguous, disjoint index ranges.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FilterLayout {
    groups: Vec<(usize, usize)>,
    total_dim: usize,
}

impl FilterLayout {
    /// Builds a layout from `(start, length)` pairs. The pairs may come in any
    /// order but must cover `[0, total_dim)` exactly once.
    pub fn new(groups: Vec<(usize, usize)>) -> Result<Self> {
        if groups.is_empty() {
            return Err(Error::Shape("layout needs at least one group".into()));
        }
        let total_dim: usize = groups.iter().map(|g| g.1).sum();
        let mut covered = vec![false; total_dim];
        for &(start, len) in &groups {
            if len == 0 {
                return Err(Error::Shape(format!("empty group at {start}")));
            }
            if start + len > total_dim {
                return Err(Error::Shape(format!(
                    "group ({start}, {len}) exceeds dimension {total_dim}"
                )));
            }
            for c in &mut covered[start..start + len] {
                if *c {
                    return Err(Error::Shape(format!("group ({start}, {len}) overlaps")));
                }
                *c = true;
            }
        }
        Ok(Self { groups, total_dim })
    }

    /// A single group spanning all `dim` coordinates.
    pub fn single(dim: usize) -> Self {
        Self { groups: vec![(0, dim)], total_dim: dim }
    }

    /// One group per coordinate.
    pub fn per_coordinate(dim: usize) -> Self {
        Self { groups: (0..dim).map(|i| (i, 1)).collect(), total_dim: dim }
    }

    pub fn k(&self) -> usize {
        self.groups.len()
    }

    pub fn total_dim(&self) -> usize {
        self.total_dim
    }

    pub fn groups(&self) -> &[(usize, usize)] {
        &self.groups
    }

    pub fn range(&self, j: usize) -> Range<usize> {
        let (s, l) = self.groups[j];
        s..s + l
    }

    pub fn ranges(&self) -> impl Iterator<Item = Range<usize>> + '_ {
        self.groups.iter().map(|&(s, l)| s..s + l)
    }

    /// Squared 2-norm of every group of `values`.
    pub fn group_norms_sq(&self, values: &[f64]) -> Result<Vec<f64>> {
        self.check(values.len())?;
        Ok(self
            .ranges()
            .map(|r| values[r].iter().map(|v| v * v).sum())
            .collect())
    }

    pub(crate) fn check(&self, len: usize) -> Result<()> {
        if len != self.total_dim {
            return Err(Error::LayoutMismatch { expected: self.total_dim, found: len });
        }
        Ok(())
    }
}

/// All trainable parameters of a model, paired with their filter layout.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamVector {
    values: Vec<f64>,
    layout: Arc<FilterLayout>,
}

impl ParamVector {
    pub fn new(values: Vec<f64>, layout: Arc<FilterLayout>) -> Result<Self> {
        layout.check(values.len())?;
        Ok(Self { values, layout })
    }

    pub fn zeros(layout: Arc<FilterLayout>) -> Self {
        Self { values: vec![0.0; layout.total_dim()], layout }
    }

    /// Wraps a plain vector with a single-group layout.
    pub fn from_vec(values: Vec<f64>) -> Self {
        let layout = Arc::new(FilterLayout::single(values.len()));
        Self { values, layout }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn layout(&self) -> &Arc<FilterLayout> {
        &self.layout
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn group(&self, j: usize) -> &[f64] {
        &self.values[self.layout.range(j)]
    }

    pub fn norm(&self) -> f64 {
        crate::norm2(&self.values)
    }

    /// Same layout, new values.
    pub fn with_values(&self, values: Vec<f64>) -> Result<Self> {
        Self::new(values, self.layout.clone())
    }

    /// `self + scale * other`, coordinate-wise.
    pub fn added(&self, other: &[f64], scale: f64) -> Result<Self> {
        self.layout.check(other.len())?;
        let values = self.values.iter().zip(other).map(|(a, b)| a + scale * b).collect();
        Ok(Self { values, layout: self.layout.clone() })
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_overlap_and_gaps() {
        assert!(FilterLayout::new(vec![(0, 2), (1, 2)]).is_err());
        assert!(FilterLayout::new(vec![(0, 2), (3, 1)]).is_err());
        assert!(FilterLayout::new(vec![]).is_err());
        let l = FilterLayout::new(vec![(2, 2), (0, 2)]).unwrap();
        assert_eq!(l.total_dim(), 4);
        assert_eq!(l.k(), 2);
    }

    #[test]
    fn group_norms() {
        let l = FilterLayout::new(vec![(0, 2), (2, 1)]).unwrap();
        assert_eq!(l.group_norms_sq(&[3.0, 4.0, 2.0]).unwrap(), vec![25.0, 4.0]);
        assert!(l.group_norms_sq(&[1.0]).is_err());
    }

    #[test]
    fn param_vector_checks_length() {
        let l = Arc::new(FilterLayout::single(3));
        assert!(ParamVector::new(vec![0.0; 2], l.clone()).is_err());
        let p = ParamVector::new(vec![1.0, 2.0, 2.0], l).unwrap();
        assert_eq!(p.norm(), 3.0);
        assert_eq!(p.added(&[1.0, 1.0, 1.0], -1.0).unwrap().values(), &[0.0, 1.0, 1.0]);
    }
}
