//! Adversarial and random weight perturbations.
//!
//! * [`awp_direction`]: first-order worst case inside a ρ-ball,
//!   `ε = ρ ∇L / ‖∇L‖`.
//! * [`sample_rwp`]: filter-wise Gaussian, coordinates of group `j` drawn
//!   i.i.d. from `N(0, σ² ‖w⁽ʲ⁾‖²)`.
//! * [`sample_arwp`]: the same law with the variance of group `j` divided by
//!   `sqrt(1 + η S⁽ʲ⁾)`, where `S` is the decayed history of squared
//!   perturbed-gradient norms kept in [`AdaptiveState`].

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::layout::{FilterLayout, ParamVector};
use crate::rng::DrawKey;
use crate::{Error, Result};

/// Groups with a smaller weight norm receive no perturbation.
pub const ZERO_NORM: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Schedule {
    Constant,
    /// Half-cosine ramp from 0 at `t = 0` to `sigma_max` at `t = T`.
    #[default]
    #[serde(alias = "cosine-increase", alias = "cosine_increase")]
    Cosine,
}

/// How the per-coordinate scale of the random perturbation is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PerturbLaw {
    /// Group `j` is scaled by `‖w⁽ʲ⁾‖`.
    #[default]
    FilterWise,
    /// Every coordinate has standard deviation `σ`.
    Isotropic,
}

/// Which history the adaptive variance reads.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Granularity {
    #[default]
    PerGroup,
    PerCoordinate,
}

fn default_rho() -> f64 {
    0.05
}
fn default_sigma() -> f64 {
    0.01
}
fn default_eta() -> f64 {
    0.1
}
fn default_beta_decay() -> f64 {
    0.99
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PerturbConfig {
    #[serde(default = "default_rho")]
    pub rho: f64,
    #[serde(default = "default_sigma")]
    pub sigma_max: f64,
    #[serde(default = "default_eta")]
    pub eta: f64,
    #[serde(default = "default_beta_decay")]
    pub beta_decay: f64,
    #[serde(default)]
    pub schedule: Schedule,
    #[serde(default)]
    pub law: PerturbLaw,
    #[serde(default)]
    pub granularity: Granularity,
}

impl Default for PerturbConfig {
    fn default() -> Self {
        Self {
            rho: default_rho(),
            sigma_max: default_sigma(),
            eta: default_eta(),
            beta_decay: default_beta_decay(),
            schedule: Schedule::Cosine,
            law: PerturbLaw::FilterWise,
            granularity: Granularity::PerGroup,
        }
    }
}

impl PerturbConfig {
    pub fn validate(&self) -> Result<()> {
        let nonneg = |name: &str, v: f64| {
            if v.is_finite() && v >= 0.0 {
                Ok(())
            } else {
                Err(Error::InvalidConfig(format!("{name} must be finite and >= 0, got {v}")))
            }
        };
        nonneg("rho", self.rho)?;
        nonneg("sigma_max", self.sigma_max)?;
        nonneg("eta", self.eta)?;
        if !(0.0..1.0).contains(&self.beta_decay) {
            return Err(Error::InvalidConfig(format!(
                "beta_decay must lie in [0, 1), got {}",
                self.beta_decay
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PerturbKind {
    Awp,
    Rwp,
    Arwp,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PerturbSample {
    pub epsilon: Vec<f64>,
    /// `‖epsilon‖₂`.
    pub radius: f64,
    pub kind: PerturbKind,
}

impl PerturbSample {
    fn new(epsilon: Vec<f64>, kind: PerturbKind) -> Self {
        let radius = crate::norm2(&epsilon);
        Self { epsilon, radius, kind }
    }
}

/// `ρ g / ‖g‖`, or zero when `‖g‖ ≤ 1e-12`.
pub fn awp_direction(grad: &[f64], rho: f64) -> PerturbSample {
    let n = crate::norm2(grad);
    let epsilon = if n > ZERO_NORM {
        grad.iter().map(|g| rho * g / n).collect()
    } else {
        vec![0.0; grad.len()]
    };
    PerturbSample::new(epsilon, PerturbKind::Awp)
}

/// Per-group standard deviation of the plain random perturbation.
pub fn rwp_group_std(w: &ParamVector, sigma: f64, law: PerturbLaw) -> Vec<f64> {
    match law {
        PerturbLaw::Isotropic => vec![sigma; w.layout().k()],
        PerturbLaw::FilterWise => w
            .layout()
            .ranges()
            .map(|r| {
                let n = crate::norm2(&w.values()[r]);
                if n < ZERO_NORM {
                    0.0
                } else {
                    sigma * n
                }
            })
            .collect(),
    }
}

/// Per-coordinate standard deviation of the adaptive perturbation.
pub fn arwp_coord_std(
    w: &ParamVector,
    sigma: f64,
    eta: f64,
    state: &AdaptiveState,
    law: PerturbLaw,
    granularity: Granularity,
) -> Result<Vec<f64>> {
    let layout = w.layout();
    if state.per_group_sum.len() != layout.k() {
        return Err(Error::InvalidConfig(format!(
            "adaptive state has {} groups, layout has {}",
            state.per_group_sum.len(),
            layout.k()
        )));
    }
    let base = rwp_group_std(w, sigma, law);
    let mut std = vec![0.0; w.dim()];
    for (j, r) in layout.ranges().enumerate() {
        match granularity {
            Granularity::PerGroup => {
                let s = base[j] / libm::pow(1.0 + eta * state.per_group_sum[j], 0.25);
                std[r].iter_mut().for_each(|v| *v = s);
            }
            Granularity::PerCoordinate => {
                let coord = state.per_coord_sum.as_ref().ok_or_else(|| {
                    Error::InvalidConfig("per-coordinate history is disabled".into())
                })?;
                for i in r {
                    std[i] = base[j] / libm::pow(1.0 + eta * coord[i], 0.25);
                }
            }
        }
    }
    Ok(std)
}

fn sample_with_std(layout: &FilterLayout, std: &[f64], key: DrawKey, kind: PerturbKind) -> PerturbSample {
    let mut epsilon = vec![0.0; layout.total_dim()];
    for (j, r) in layout.ranges().enumerate() {
        if std[r.clone()].iter().all(|&s| s == 0.0) {
            continue;
        }
        let mut g = key.normal(j as u64);
        for i in r {
            epsilon[i] = std[i] * g.sample();
        }
    }
    PerturbSample::new(epsilon, kind)
}

/// Draws a random weight perturbation. Group `j` uses substream `j` of `key`.
pub fn sample_rwp(w: &ParamVector, sigma: f64, law: PerturbLaw, key: DrawKey) -> PerturbSample {
    let layout = w.layout();
    let group = rwp_group_std(w, sigma, law);
    let mut std = vec![0.0; w.dim()];
    for (j, r) in layout.ranges().enumerate() {
        std[r].iter_mut().for_each(|v| *v = group[j]);
    }
    sample_with_std(layout, &std, key, PerturbKind::Rwp)
}

/// Draws an adaptive random weight perturbation.
pub fn sample_arwp(
    w: &ParamVector,
    sigma: f64,
    cfg: &PerturbConfig,
    state: &AdaptiveState,
    key: DrawKey,
) -> Result<PerturbSample> {
    let std = arwp_coord_std(w, sigma, cfg.eta, state, cfg.law, cfg.granularity)?;
    Ok(sample_with_std(w.layout(), &std, key, PerturbKind::Arwp))
}

/// Exponentially decayed sums of squared perturbed gradients.
///
/// Before update `t`, `per_group_sum[j]` holds
/// `Σ_{i<t} β^{t-i-1} ‖g_i⁽ʲ⁾‖²`.
#[derive(Debug, Clone, PartialEq)]
pub struct AdaptiveState {
    pub per_group_sum: Vec<f64>,
    pub per_coord_sum: Option<Vec<f64>>,
    /// Next iteration index, starting at 1.
    pub t: u64,
    pub beta_decay: f64,
}

impl AdaptiveState {
    pub fn new(layout: &FilterLayout, beta_decay: f64, per_coordinate: bool) -> Self {
        Self {
            per_group_sum: vec![0.0; layout.k()],
            per_coord_sum: per_coordinate.then(|| vec![0.0; layout.total_dim()]),
            t: 1,
            beta_decay,
        }
    }

    /// `S ← β S + ‖g⁽ʲ⁾‖²` per group (and element-wise when enabled).
    pub fn update(&mut self, g: &[f64], layout: &FilterLayout) -> Result<()> {
        if self.per_group_sum.len() != layout.k() {
            return Err(Error::InvalidConfig(format!(
                "adaptive state has {} groups, layout has {}",
                self.per_group_sum.len(),
                layout.k()
            )));
        }
        let norms = layout.group_norms_sq(g)?;
        for (s, n) in self.per_group_sum.iter_mut().zip(norms) {
            *s = self.beta_decay * *s + n;
        }
        if let Some(c) = self.per_coord_sum.as_mut() {
            if c.len() != g.len() {
                return Err(Error::LayoutMismatch { expected: c.len(), found: g.len() });
            }
            for (s, gi) in c.iter_mut().zip(g) {
                *s = self.beta_decay * *s + gi * gi;
            }
        }
        self.t += 1;
        Ok(())
    }

    /// Flat encoding `[t, beta_decay, k, d_or_0, group sums.., coord sums..]`.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = vec![
            self.t as f64,
            self.beta_decay,
            self.per_group_sum.len() as f64,
            self.per_coord_sum.as_ref().map_or(0, |c| c.len()) as f64,
        ];
        out.extend_from_slice(&self.per_group_sum);
        if let Some(c) = &self.per_coord_sum {
            out.extend_from_slice(c);
        }
        out
    }

    pub fn from_flat(flat: &[f64]) -> Result<Self> {
        let bad = || Error::Shape("malformed adaptive-state payload".into());
        if flat.len() < 4 {
            return Err(bad());
        }
        let (t, beta_decay, k, d) = (flat[0], flat[1], flat[2] as usize, flat[3] as usize);
        if flat.len() != 4 + k + d || t < 1.0 {
            return Err(bad());
        }
        Ok(Self {
            per_group_sum: flat[4..4 + k].to_vec(),
            per_coord_sum: (d > 0).then(|| flat[4 + k..].to_vec()),
            t: t as u64,
            beta_decay,
        })
    }
}

/// Functional form of [`AdaptiveState::update`].
pub fn update_adaptive_state(
    state: &AdaptiveState,
    g: &ParamVector,
    layout: &FilterLayout,
) -> Result<AdaptiveState> {
    let mut next = state.clone();
    next.update(g.values(), layout)?;
    Ok(next)
}

/// Perturbation standard deviation at iteration `t` of `total`.
pub fn sigma_at(t: usize, total: usize, cfg: &PerturbConfig) -> f64 {
    match cfg.schedule {
        Schedule::Constant => cfg.sigma_max,
        Schedule::Cosine => {
            let total = total.max(1);
            let frac = t.min(total) as f64 / total as f64;
            cfg.sigma_max * (1.0 - libm::cos(core::f64::consts::PI * frac)) / 2.0
        }
    }
}
