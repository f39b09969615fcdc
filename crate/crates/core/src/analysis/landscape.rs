//! Two-dimensional loss surfaces along filter-normalized random directions.

use alloc::format;
use alloc::vec::Vec;

use crate::layout::ParamVector;
use crate::objective::Objective;
use crate::perturb::ZERO_NORM;
use crate::rng::DrawKey;
use crate::{Error, Result};

/// Gaussian direction rescaled so that group `j` has norm `‖w⁽ʲ⁾‖`. Groups of
/// `w` with zero norm get a zero direction.
pub fn filter_normalized_direction(w: &ParamVector, key: DrawKey) -> ParamVector {
    let mut d = alloc::vec![0.0; w.dim()];
    for (j, r) in w.layout().ranges().enumerate() {
        let wn = crate::norm2(&w.values()[r.clone()]);
        if wn < ZERO_NORM {
            continue;
        }
        let mut g = key.normal(j as u64);
        let seg = &mut d[r];
        g.fill(seg);
        let dn = crate::norm2(seg);
        if dn > 0.0 {
            seg.iter_mut().for_each(|v| *v *= wn / dn);
        }
    }
    w.with_values(d).expect("same layout")
}

#[derive(Debug, Clone, PartialEq)]
pub struct LandscapeGrid {
    pub resolution: (usize, usize),
    pub range: (f64, f64),
    pub axis_a: Vec<f64>,
    pub axis_b: Vec<f64>,
    /// Row-major `n₁ × n₂`: `values[i * n₂ + j] = L(w + a_i d₁ + b_j d₂)`.
    pub values: Vec<f64>,
    pub directions: [ParamVector; 2],
}

impl LandscapeGrid {
    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.resolution.1 + j]
    }
}

/// `n` uniform points on `[lo, hi]`, endpoints included.
pub fn grid_axis(n: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect()
}

/// Loss on the grid `w + a d₁ + b d₂` with `a, b ∈ [lo, hi]`. The two
/// directions come from substreams 0 and 1 of `seed`.
pub fn landscape_grid<O: Objective + ?Sized>(
    obj: &O,
    w: &ParamVector,
    data: &O::Batch,
    resolution: (usize, usize),
    range: (f64, f64),
    seed: u64,
) -> Result<LandscapeGrid> {
    let (n1, n2) = resolution;
    if n1 < 2 || n2 < 2 {
        return Err(Error::InvalidConfig(format!("grid resolution must be >= 2 per axis, got {resolution:?}")));
    }
    if !(range.0 < range.1) {
        return Err(Error::InvalidConfig(format!("empty grid range {range:?}")));
    }
    let root = DrawKey::from_raw(crate::rng::mix64(seed));
    let d1 = filter_normalized_direction(w, root.child(0));
    let d2 = filter_normalized_direction(w, root.child(1));
    let axis_a = grid_axis(n1, range.0, range.1);
    let axis_b = grid_axis(n2, range.0, range.1);
    let mut values = Vec::with_capacity(n1 * n2);
    let mut point = w.values().to_vec();
    for &a in &axis_a {
        for &b in &axis_b {
            for (k, p) in point.iter_mut().enumerate() {
                *p = w.values()[k] + a * d1.values()[k] + b * d2.values()[k];
            }
            values.push(obj.loss(&point, data)?);
        }
    }
    Ok(LandscapeGrid { resolution, range, axis_a, axis_b, values, directions: [d1, d2] })
}
