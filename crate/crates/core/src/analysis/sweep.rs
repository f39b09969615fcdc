//! Monte-Carlo estimates of the perturbed loss and the radius sweep comparing
//! adversarial with random perturbations.

use alloc::format;
use alloc::vec::Vec;

use crate::layout::ParamVector;
use crate::objective::Objective;
use crate::perturb::{self, PerturbLaw};
use crate::rng::DrawKey;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Sampler {
    /// Random perturbation at standard deviation `sigma`.
    Rwp { sigma: f64, law: PerturbLaw },
    /// Adversarial perturbation from the gradient over all of `data`.
    Awp { rho: f64 },
    /// Adversarial perturbation computed separately on consecutive batches
    /// of `batch_size`; the result averages the per-batch perturbed losses.
    AwpPerBatch { rho: f64, batch_size: usize },
}

/// Individual perturbed-loss values: `n_samples` fresh draws for RWP (draw
/// `i` uses `key.child(i)`), a single value for AWP.
pub fn perturbed_loss_samples<O: Objective + ?Sized>(
    obj: &O,
    w: &ParamVector,
    sampler: Sampler,
    data: &O::Batch,
    n_samples: usize,
    key: DrawKey,
) -> Result<Vec<f64>> {
    match sampler {
        Sampler::Rwp { sigma, law } => {
            if n_samples == 0 {
                return Err(Error::InvalidConfig("need at least one sample".into()));
            }
            (0..n_samples as u64)
                .map(|i| {
                    let eps = perturb::sample_rwp(w, sigma, law, key.child(i));
                    obj.loss(w.added(&eps.epsilon, 1.0)?.values(), data)
                })
                .collect()
        }
        Sampler::Awp { rho } => {
            let (_, g) = obj.loss_and_grad(w.values(), data)?;
            let eps = perturb::awp_direction(&g, rho);
            Ok(alloc::vec![obj.loss(w.added(&eps.epsilon, 1.0)?.values(), data)?])
        }
        Sampler::AwpPerBatch { rho, batch_size } => {
            let chunks = obj.split(data, batch_size)?;
            let mut total = 0.0;
            for chunk in &chunks {
                let (_, g) = obj.loss_and_grad(w.values(), chunk)?;
                let eps = perturb::awp_direction(&g, rho);
                total += obj.loss(w.added(&eps.epsilon, 1.0)?.values(), chunk)?;
            }
            Ok(alloc::vec![total / chunks.len() as f64])
        }
    }
}

fn mean_and_stderr(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, libm::sqrt(var / n))
}

fn median(xs: &[f64]) -> f64 {
    let mut s = xs.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len();
    if n % 2 == 1 {
        s[n / 2]
    } else {
        0.5 * (s[n / 2 - 1] + s[n / 2])
    }
}

/// Mean perturbed loss and its standard error.
pub fn expected_perturbed_loss<O: Objective + ?Sized>(
    obj: &O,
    w: &ParamVector,
    sampler: Sampler,
    data: &O::Batch,
    n_samples: usize,
    key: DrawKey,
) -> Result<(f64, f64)> {
    let xs = perturbed_loss_samples(obj, w, sampler, data, n_samples, key)?;
    Ok(mean_and_stderr(&xs))
}

/// Standard deviation giving `E‖ε‖² = r²` under `law`.
pub fn rwp_sigma_for_radius(w: &ParamVector, radius: f64, law: PerturbLaw) -> f64 {
    let second_moment: f64 = match law {
        PerturbLaw::Isotropic => w.dim() as f64,
        PerturbLaw::FilterWise => w
            .layout()
            .ranges()
            .map(|r| {
                let len = r.len() as f64;
                let n2: f64 = w.values()[r].iter().map(|v| v * v).sum();
                if libm::sqrt(n2) < perturb::ZERO_NORM {
                    0.0
                } else {
                    len * n2
                }
            })
            .sum(),
    };
    if second_moment > 0.0 {
        radius / libm::sqrt(second_moment)
    } else {
        0.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepResult {
    pub radii: Vec<f64>,
    pub awp_loss: Vec<f64>,
    pub rwp_loss: Vec<f64>,
    pub rwp_median: Vec<f64>,
    pub rwp_stderr: Vec<f64>,
    pub rwp_sigma: Vec<f64>,
    pub n_samples: usize,
}

/// AWP loss at `ρ = r` and RWP loss at the σ with `E‖ε‖² = r²`, for every
/// radius. The same draw keys are reused across radii.
pub fn radius_sweep<O: Objective + ?Sized>(
    obj: &O,
    w: &ParamVector,
    data: &O::Batch,
    radii: &[f64],
    n_samples: usize,
    law: PerturbLaw,
    seed: u64,
) -> Result<SweepResult> {
    if radii.is_empty() || radii[0] <= 0.0 || radii.windows(2).any(|p| p[1] <= p[0]) {
        return Err(Error::InvalidConfig(format!("radii must be positive and ascending: {radii:?}")));
    }
    let key = DrawKey::from_raw(crate::rng::mix64(seed));
    let (_, g) = obj.loss_and_grad(w.values(), data)?;
    let mut out = SweepResult {
        radii: radii.to_vec(),
        awp_loss: Vec::new(),
        rwp_loss: Vec::new(),
        rwp_median: Vec::new(),
        rwp_stderr: Vec::new(),
        rwp_sigma: Vec::new(),
        n_samples,
    };
    for &r in radii {
        let eps = perturb::awp_direction(&g, r);
        out.awp_loss.push(obj.loss(w.added(&eps.epsilon, 1.0)?.values(), data)?);
        let sigma = rwp_sigma_for_radius(w, r, law);
        let xs = perturbed_loss_samples(obj, w, Sampler::Rwp { sigma, law }, data, n_samples, key)?;
        let (m, se) = mean_and_stderr(&xs);
        out.rwp_loss.push(m);
        out.rwp_median.push(median(&xs));
        out.rwp_stderr.push(se);
        out.rwp_sigma.push(sigma);
    }
    Ok(out)
}

/// Smallest RWP radius (bisection in radius, common random numbers) whose
/// mean perturbed loss reaches `target`. `None` if even `max_radius` falls
/// short.
#[allow(clippy::too_many_arguments)]
pub fn rwp_radius_to_match<O: Objective + ?Sized>(
    obj: &O,
    w: &ParamVector,
    data: &O::Batch,
    target: f64,
    n_samples: usize,
    law: PerturbLaw,
    seed: u64,
    max_radius: f64,
) -> Result<Option<f64>> {
    let key = DrawKey::from_raw(crate::rng::mix64(seed));
    let mean_at = |r: f64| -> Result<f64> {
        let sigma = rwp_sigma_for_radius(w, r, law);
        expected_perturbed_loss(obj, w, Sampler::Rwp { sigma, law }, data, n_samples, key).map(|p| p.0)
    };
    if obj.loss(w.values(), data)? >= target {
        return Ok(Some(0.0));
    }
    let mut hi = 1e-6 * max_radius.max(1e-300);
    while mean_at(hi)? < target {
        if hi >= max_radius {
            return Ok(None);
        }
        hi = (hi * 2.0).min(max_radius);
    }
    let mut lo = hi / 2.0;
    for _ in 0..50 {
        let mid = 0.5 * (lo + hi);
        if mean_at(mid)? >= target {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(Some(hi))
}
