use alloc::format;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Problem constants entering the smoothness and convergence statements.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TheoryConstants {
    /// Lipschitz constant of the loss.
    pub alpha: f64,
    /// Smoothness constant of the loss.
    pub beta: f64,
    /// Bound on the stochastic-gradient variance.
    #[serde(rename = "M")]
    pub m: f64,
    /// Parameter count.
    pub d: usize,
    /// `E[L(w₀)] − E[L(w*)]`.
    #[serde(rename = "L0_minus_Lstar")]
    pub gap: f64,
}

impl TheoryConstants {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.beta > 0.0) {
            return Err(Error::InvalidConfig("alpha and beta must be positive".into()));
        }
        if !(self.m >= 0.0 && self.gap >= 0.0) || self.d == 0 {
            return Err(Error::InvalidConfig("M and L0_minus_Lstar must be >= 0, d >= 1".into()));
        }
        Ok(())
    }
}

fn check_step(c: &TheoryConstants, gamma0: f64, t: usize) -> Result<()> {
    c.validate()?;
    if !(gamma0 > 0.0) || t == 0 {
        return Err(Error::InvalidConfig(format!("need gamma0 > 0 and T >= 1, got {gamma0}, {t}")));
    }
    if gamma0 * c.beta >= 1.0 {
        return Err(Error::Hypothesis(format!(
            "step size gamma0 = {gamma0} must be below 1/beta = {}",
            1.0 / c.beta
        )));
    }
    Ok(())
}

/// Bound on `(1/T) Σ E‖∇L(w_t)‖²` for RWP-SGD with `γ_t = γ₀/√t`:
///
/// `2 gap/(γ₀√T) + (2βM + β³σ²d) γ₀ log T/√T + 2β²σ²d`.
pub fn rwp_bound(c: &TheoryConstants, gamma0: f64, t: usize, sigma: f64) -> Result<f64> {
    check_step(c, gamma0, t)?;
    let (beta, d) = (c.beta, c.d as f64);
    let tt = t as f64;
    let s2 = sigma * sigma;
    let first = 2.0 * c.gap / (gamma0 * libm::sqrt(tt));
    let second = (2.0 * beta * c.m + beta * beta * beta * s2 * d) * gamma0 * libm::log(tt)
        / libm::sqrt(tt);
    let floor = 2.0 * beta * beta * s2 * d;
    Ok(first + second + floor)
}

/// Mixed-objective counterpart of [`rwp_bound`]: the gradient-variance term
/// is scaled by `2λ² − 2λ + 1` and both perturbation terms by `λ²`.
pub fn mrwp_bound(c: &TheoryConstants, gamma0: f64, t: usize, sigma: f64, lambda: f64) -> Result<f64> {
    check_step(c, gamma0, t)?;
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::InvalidConfig(format!("lambda must lie in [0, 1], got {lambda}")));
    }
    let (beta, d) = (c.beta, c.d as f64);
    let tt = t as f64;
    let s2 = sigma * sigma;
    let l2 = lambda * lambda;
    let variance_factor = 2.0 * l2 - 2.0 * lambda + 1.0;
    let first = 2.0 * c.gap / (gamma0 * libm::sqrt(tt));
    let second = (2.0 * beta * c.m * variance_factor + beta * beta * beta * l2 * s2 * d)
        * gamma0
        * libm::log(tt)
        / libm::sqrt(tt);
    let floor = 2.0 * beta * beta * l2 * s2 * d;
    Ok(first + second + floor)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SmoothnessReport {
    /// `min(α/σ, β)`.
    pub rwp_smoothness: f64,
    /// `min(λα/σ + (1−λ)β, β)`.
    pub mrwp_smoothness: f64,
    /// `α < βσ < 2α`.
    pub lemma1_applicable: bool,
    /// `((βσ−α)/α, 1)` when applicable.
    pub lemma1_lambda_window: Option<(f64, f64)>,
    /// Mixed smoothness with the variance raised to `σ/λ`:
    /// `min(λ²α/σ + (1−λ)β, β)`.
    pub mrwp_smoothness_scaled: f64,
    /// Whether `mrwp_smoothness_scaled < α/σ`; set only when the lemma applies
    /// and λ lies inside the window.
    pub lemma1_holds: Option<bool>,
}

pub fn smoothness_report(c: &TheoryConstants, sigma: f64, lambda: f64) -> Result<SmoothnessReport> {
    if !(sigma > 0.0) {
        return Err(Error::InvalidConfig(format!("sigma must be > 0, got {sigma}")));
    }
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::InvalidConfig(format!("lambda must lie in [0, 1], got {lambda}")));
    }
    let (a, b) = (c.alpha, c.beta);
    let rwp = (a / sigma).min(b);
    let mrwp = (lambda * a / sigma + (1.0 - lambda) * b).min(b);
    let scaled = (lambda * lambda * a / sigma + (1.0 - lambda) * b).min(b);
    let applicable = a < b * sigma && b * sigma < 2.0 * a;
    let window = applicable.then(|| ((b * sigma - a) / a, 1.0));
    let holds = window
        .filter(|&(lo, hi)| lambda > lo && lambda < hi)
        .map(|_| scaled < a / sigma);
    Ok(SmoothnessReport {
        rwp_smoothness: rwp,
        mrwp_smoothness: mrwp,
        lemma1_applicable: applicable,
        lemma1_lambda_window: window,
        mrwp_smoothness_scaled: scaled,
        lemma1_holds: holds,
    })
}
