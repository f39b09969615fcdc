//! Lanczos tridiagonalization with full reorthogonalization.
//!
//! Ritz values are the eigenvalues of the tridiagonal matrix; the weight of
//! each Ritz value is the squared first component of its eigenvector.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::rng::DrawKey;
use crate::{Error, Result};

const BREAKDOWN: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectrumResult {
    /// Ascending.
    pub ritz_values: Vec<f64>,
    /// Non-negative, summing to 1.
    pub ritz_weights: Vec<f64>,
    pub iterations: usize,
}

impl SpectrumResult {
    pub fn dominant(&self) -> f64 {
        self.ritz_values.last().copied().unwrap_or(f64::NAN)
    }
}

/// Runs up to `iters` Lanczos steps on the symmetric operator `hvp`. Stops
/// early if the Krylov space is exhausted.
pub fn lanczos_spectrum<F>(mut hvp: F, dim: usize, iters: usize, seed: u64) -> Result<SpectrumResult>
where
    F: FnMut(&[f64]) -> Result<Vec<f64>>,
{
    if iters == 0 || iters > dim {
        return Err(Error::InvalidConfig(format!("need 1 <= iters <= dim, got {iters} for {dim}")));
    }
    let mut q: Vec<f64> = {
        let mut g = DrawKey::from_raw(crate::rng::mix64(seed)).normal(0);
        (0..dim).map(|_| g.sample()).collect()
    };
    let n = crate::norm2(&q);
    q.iter_mut().for_each(|v| *v /= n);

    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(iters);
    let mut alphas = Vec::with_capacity(iters);
    let mut betas: Vec<f64> = Vec::with_capacity(iters);
    loop {
        let mut w = hvp(&q)?;
        if w.len() != dim {
            return Err(Error::LayoutMismatch { expected: dim, found: w.len() });
        }
        let alpha = crate::dot(&q, &w);
        alphas.push(alpha);
        w.iter_mut().zip(&q).for_each(|(x, qi)| *x -= alpha * qi);
        if let (Some(prev), Some(&b)) = (basis.last(), betas.last()) {
            w.iter_mut().zip(prev).for_each(|(x, pi): (&mut f64, &f64)| *x -= b * pi);
        }
        basis.push(q);
        for _ in 0..2 {
            for v in &basis {
                let c = crate::dot(v, &w);
                w.iter_mut().zip(v).for_each(|(x, vi)| *x -= c * vi);
            }
        }
        if alphas.len() == iters {
            break;
        }
        let beta = crate::norm2(&w);
        if beta < BREAKDOWN {
            break;
        }
        betas.push(beta);
        q = w.into_iter().map(|x| x / beta).collect();
    }
    let m = alphas.len();
    let (values, first) = tridiagonal_eigen(&alphas, &betas[..m - 1])?;
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let ritz_values: Vec<f64> = order.iter().map(|&i| values[i]).collect();
    let raw: Vec<f64> = order.iter().map(|&i| first[i] * first[i]).collect();
    let total: f64 = raw.iter().sum();
    let ritz_weights = raw.iter().map(|w| w / total).collect();
    Ok(SpectrumResult { ritz_values, ritz_weights, iterations: m })
}

/// Eigenvalues of the symmetric tridiagonal matrix with diagonal `diag` and
/// off-diagonal `off`, together with the first component of each unit
/// eigenvector. Implicit QL with Wilkinson shifts.
pub fn tridiagonal_eigen(diag: &[f64], off: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
    let n = diag.len();
    if n == 0 || off.len() + 1 != n {
        return Err(Error::Shape(format!(
            "tridiagonal needs n diagonal and n-1 off-diagonal entries, got {} and {}",
            n,
            off.len()
        )));
    }
    let mut d = diag.to_vec();
    let mut e = vec![0.0; n];
    e[..n - 1].copy_from_slice(off);
    // Rotations act on each row of the eigenvector matrix independently, so
    // only row 0 (the first components) is tracked.
    let mut z0 = vec![0.0; n];
    z0[0] = 1.0;
    for l in 0..n {
        let mut iter = 0;
        loop {
            let mut m = l;
            while m + 1 < n {
                let dd = d[m].abs() + d[m + 1].abs();
                if e[m].abs() <= f64::EPSILON * dd {
                    break;
                }
                m += 1;
            }
            if m == l {
                break;
            }
            iter += 1;
            if iter > 60 {
                return Err(Error::InvalidConfig("tridiagonal QL did not converge".into()));
            }
            let mut g = (d[l + 1] - d[l]) / (2.0 * e[l]);
            let mut r = libm::hypot(g, 1.0);
            g = d[m] - d[l] + e[l] / (g + if g >= 0.0 { r.abs() } else { -r.abs() });
            let (mut s, mut c, mut p) = (1.0, 1.0, 0.0);
            let mut i = m;
            let mut deflated = false;
            while i > l {
                i -= 1;
                let f = s * e[i];
                let b = c * e[i];
                r = libm::hypot(f, g);
                e[i + 1] = r;
                if r == 0.0 {
                    d[i + 1] -= p;
                    e[m] = 0.0;
                    deflated = true;
                    break;
                }
                s = f / r;
                c = g / r;
                g = d[i + 1] - p;
                r = (d[i] - g) * s + 2.0 * c * b;
                p = s * r;
                d[i + 1] = g + p;
                g = c * r - b;
                let f0 = z0[i + 1];
                z0[i + 1] = s * z0[i] + c * f0;
                z0[i] = c * z0[i] - s * f0;
            }
            if deflated {
                continue;
            }
            d[l] -= p;
            e[l] = g;
            e[m] = 0.0;
        }
    }
    Ok((d, z0))
}
