//! One-step update rules.
//!
//! Every step computes a search gradient and hands it to [`BaseUpdate`],
//! which applies momentum and weight decay:
//!
//! ```text
//! v ← μ v + g
//! w ← w − lr (v + wd · w)
//! ```
//!
//! With `μ = 0` the raw gradient is used directly, so a momentum-free step is
//! bit-identical to `w − lr g`.

use alloc::format;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::layout::{FilterLayout, ParamVector};
use crate::model::Batch;
use crate::objective::Objective;
use crate::perturb::{self, AdaptiveState, Granularity, PerturbConfig};
use crate::rng::{DrawKey, NoiseStream};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Sgd,
    Sam,
    Rwp,
    Arwp,
    #[serde(alias = "m-rwp")]
    Mrwp,
    #[serde(alias = "m-arwp")]
    Marwp,
}

impl Method {
    pub const ALL: [Method; 6] =
        [Method::Sgd, Method::Sam, Method::Rwp, Method::Arwp, Method::Mrwp, Method::Marwp];

    pub fn name(self) -> &'static str {
        match self {
            Method::Sgd => "sgd",
            Method::Sam => "sam",
            Method::Rwp => "rwp",
            Method::Arwp => "arwp",
            Method::Mrwp => "mrwp",
            Method::Marwp => "marwp",
        }
    }

    /// Gradient evaluations per step: 1 for sgd/rwp/arwp, 2 for the rest.
    pub fn grad_evals(self) -> usize {
        match self {
            Method::Sgd | Method::Rwp | Method::Arwp => 1,
            Method::Sam | Method::Mrwp | Method::Marwp => 2,
        }
    }

    pub fn is_mixed(self) -> bool {
        matches!(self, Method::Mrwp | Method::Marwp)
    }

    pub fn is_adaptive(self) -> bool {
        matches!(self, Method::Arwp | Method::Marwp)
    }

    pub fn is_random(self) -> bool {
        matches!(self, Method::Rwp | Method::Arwp | Method::Mrwp | Method::Marwp)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LrSchedule {
    Constant,
    #[default]
    #[serde(alias = "cosine-decay", alias = "cosine")]
    CosineDecay,
    #[serde(alias = "inverse-sqrt")]
    InverseSqrt,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BatchPairing {
    #[default]
    Same,
    Different,
}

fn default_gamma0() -> f64 {
    0.1
}
fn default_lambda() -> f64 {
    0.5
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptimizerConfig {
    pub method: Method,
    #[serde(default = "default_gamma0")]
    pub gamma0: f64,
    #[serde(default)]
    pub lr_schedule: LrSchedule,
    /// Weight of the perturbed gradient; read by mrwp and marwp only.
    #[serde(default = "default_lambda")]
    pub lambda: f64,
    /// Read by mrwp and marwp only.
    #[serde(default)]
    pub batch_pairing: BatchPairing,
    /// SAM sub-batch size; 0 disables.
    #[serde(default)]
    pub m_sharpness: usize,
    #[serde(default)]
    pub momentum: f64,
    #[serde(default)]
    pub weight_decay: f64,
    #[serde(default)]
    pub perturb: PerturbConfig,
}

impl OptimizerConfig {
    pub fn new(method: Method) -> Self {
        Self {
            method,
            gamma0: default_gamma0(),
            lr_schedule: LrSchedule::CosineDecay,
            lambda: default_lambda(),
            batch_pairing: BatchPairing::Same,
            m_sharpness: 0,
            momentum: 0.0,
            weight_decay: 0.0,
            perturb: PerturbConfig::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.gamma0.is_finite() && self.gamma0 > 0.0) {
            return Err(Error::InvalidConfig(format!("gamma0 must be > 0, got {}", self.gamma0)));
        }
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(Error::InvalidConfig(format!("lambda must lie in [0, 1], got {}", self.lambda)));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::InvalidConfig(format!(
                "momentum must lie in [0, 1), got {}",
                self.momentum
            )));
        }
        if !(self.weight_decay.is_finite() && self.weight_decay >= 0.0) {
            return Err(Error::InvalidConfig(format!(
                "weight_decay must be >= 0, got {}",
                self.weight_decay
            )));
        }
        self.perturb.validate()
    }

    /// Examples consumed per step for a given batch size.
    pub fn examples_per_step(&self, batch_size: usize) -> usize {
        if self.method.is_mixed() && self.batch_pairing == BatchPairing::Different {
            2 * batch_size
        } else {
            batch_size
        }
    }

    pub fn pairing(&self) -> BatchPairing {
        if self.method.is_mixed() {
            self.batch_pairing
        } else {
            BatchPairing::Same
        }
    }
}

/// Step size at iteration `t ∈ [1, total]`.
pub fn lr_at(t: usize, total: usize, cfg: &OptimizerConfig) -> f64 {
    let t = t.max(1);
    match cfg.lr_schedule {
        LrSchedule::Constant => cfg.gamma0,
        LrSchedule::CosineDecay => {
            let total = total.max(1);
            cfg.gamma0 * (1.0 + libm::cos(core::f64::consts::PI * (t - 1) as f64 / total as f64)) / 2.0
        }
        LrSchedule::InverseSqrt => cfg.gamma0 / libm::sqrt(t as f64),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepResult {
    pub new_w: ParamVector,
    /// Clean-point loss when one was computed, otherwise the perturbed loss.
    pub loss_main: f64,
    pub loss_perturbed: Option<f64>,
    /// `‖∇L_B(w_t)‖` on the unperturbed point, when computed.
    pub grad_norm: Option<f64>,
    pub sigma_used: f64,
    pub epsilon_radius: Option<f64>,
    pub grad_evals: usize,
}

/// Momentum buffer and weight decay shared by all methods.
#[derive(Debug, Clone, PartialEq)]
pub struct BaseUpdate {
    pub momentum: f64,
    pub weight_decay: f64,
    buffer: Option<Vec<f64>>,
}

impl BaseUpdate {
    pub fn new(momentum: f64, weight_decay: f64) -> Self {
        Self { momentum, weight_decay, buffer: None }
    }

    pub fn plain() -> Self {
        Self::new(0.0, 0.0)
    }

    pub fn apply(&mut self, w: &ParamVector, g: &[f64], lr: f64) -> Result<ParamVector> {
        if g.len() != w.dim() {
            return Err(Error::LayoutMismatch { expected: w.dim(), found: g.len() });
        }
        let dir: &[f64] = if self.momentum > 0.0 {
            let buf = self.buffer.get_or_insert_with(|| alloc::vec![0.0; g.len()]);
            for (b, gi) in buf.iter_mut().zip(g) {
                *b = self.momentum * *b + gi;
            }
            buf
        } else {
            g
        };
        let wd = self.weight_decay;
        let values = w
            .values()
            .iter()
            .zip(dir)
            .map(|(&wi, &di)| if wd > 0.0 { wi - lr * (di + wd * wi) } else { wi - lr * di })
            .collect();
        w.with_values(values)
    }
}

/// The two batches of a mixed step. For single-batch methods only `b1` is read.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchPair<B> {
    pub b1: B,
    pub b2: B,
}

impl<B: Clone> BatchPair<B> {
    pub fn same(b: B) -> Self {
        Self { b1: b.clone(), b2: b }
    }
}

/// Runs two independent closures and returns both results.
pub trait Executor {
    fn join<RA, RB, FA, FB>(&self, a: FA, b: FB) -> (RA, RB)
    where
        FA: FnOnce() -> RA + Send,
        FB: FnOnce() -> RB + Send,
        RA: Send,
        RB: Send;
}

/// Evaluates `a` then `b` on the calling thread.
#[derive(Debug, Clone, Copy, Default)]
pub struct Sequential;

impl Executor for Sequential {
    fn join<RA, RB, FA, FB>(&self, a: FA, b: FB) -> (RA, RB)
    where
        FA: FnOnce() -> RA + Send,
        FB: FnOnce() -> RB + Send,
        RA: Send,
        RB: Send,
    {
        let ra = a();
        (ra, b())
    }
}

fn finite(w: ParamVector) -> Result<ParamVector> {
    if w.is_finite() {
        Ok(w)
    } else {
        Err(Error::Divergence { iteration: 0 })
    }
}

pub fn step_sgd<O: Objective + ?Sized>(
    obj: &O,
    w: &ParamVector,
    batch: &O::Batch,
    lr: f64,
    base: &mut BaseUpdate,
) -> Result<StepResult> {
    let (loss, g) = obj.loss_and_grad(w.values(), batch)?;
    let new_w = finite(base.apply(w, &g, lr)?)?;
    Ok(StepResult {
        new_w,
        loss_main: loss,
        loss_perturbed: None,
        grad_norm: Some(crate::norm2(&g)),
        sigma_used: 0.0,
        epsilon_radius: None,
        grad_evals: 1,
    })
}

/// SAM: ascend to `w + ρ g/‖g‖`, descend with the gradient there. With
/// `m_sharpness = m` strictly between 0 and the batch size, each chunk of `m`
/// examples gets its own ascent and the perturbed gradients are averaged.
pub fn step_sam<O: Objective + ?Sized>(
    obj: &O,
    w: &ParamVector,
    batch: &O::Batch,
    lr: f64,
    rho: f64,
    m_sharpness: usize,
    base: &mut BaseUpdate,
) -> Result<StepResult> {
    let n = obj.batch_len(batch);
    let chunks = if m_sharpness == 0 || m_sharpness == n {
        None
    } else {
        Some(obj.split(batch, m_sharpness)?)
    };
    let (loss, clean_norm, lp, radius, gp) = match chunks {
        None => {
            let (loss, g) = obj.loss_and_grad(w.values(), batch)?;
            let eps = perturb::awp_direction(&g, rho);
            let wp = w.added(&eps.epsilon, 1.0)?;
            let (lp, gp) = obj.loss_and_grad(wp.values(), batch)?;
            (loss, crate::norm2(&g), lp, eps.radius, gp)
        }
        Some(chunks) => {
            let c = chunks.len() as f64;
            let mut gp_sum = alloc::vec![0.0; w.dim()];
            let mut g_sum = alloc::vec![0.0; w.dim()];
            let (mut loss, mut lp, mut radius) = (0.0, 0.0, 0.0);
            for chunk in &chunks {
                let (l, g) = obj.loss_and_grad(w.values(), chunk)?;
                let eps = perturb::awp_direction(&g, rho);
                let wp = w.added(&eps.epsilon, 1.0)?;
                let (lpc, gpc) = obj.loss_and_grad(wp.values(), chunk)?;
                gp_sum.iter_mut().zip(&gpc).for_each(|(s, v)| *s += v);
                g_sum.iter_mut().zip(&g).for_each(|(s, v)| *s += v);
                loss += l;
                lp += lpc;
                radius += eps.radius;
            }
            gp_sum.iter_mut().for_each(|v| *v /= c);
            g_sum.iter_mut().for_each(|v| *v /= c);
            (loss / c, crate::norm2(&g_sum), lp / c, radius / c, gp_sum)
        }
    };
    let new_w = finite(base.apply(w, &gp, lr)?)?;
    Ok(StepResult {
        new_w,
        loss_main: loss,
        loss_perturbed: Some(lp),
        grad_norm: Some(clean_norm),
        sigma_used: 0.0,
        epsilon_radius: Some(radius),
        grad_evals: 2,
    })
}

fn draw(
    w: &ParamVector,
    sigma: f64,
    cfg: &PerturbConfig,
    key: DrawKey,
    adaptive: Option<&AdaptiveState>,
) -> Result<perturb::PerturbSample> {
    match adaptive {
        Some(state) => perturb::sample_arwp(w, sigma, cfg, state, key),
        None => Ok(perturb::sample_rwp(w, sigma, cfg.law, key)),
    }
}

/// RWP (ARWP when `adaptive` is given): one gradient at `w + ε`, `ε` freshly
/// drawn from `key` and discarded afterwards.
#[allow(clippy::too_many_arguments)]
pub fn step_rwp<O: Objective + ?Sized>(
    obj: &O,
    w: &ParamVector,
    batch: &O::Batch,
    lr: f64,
    sigma: f64,
    cfg: &PerturbConfig,
    key: DrawKey,
    adaptive: Option<&mut AdaptiveState>,
    base: &mut BaseUpdate,
) -> Result<StepResult> {
    let eps = draw(w, sigma, cfg, key, adaptive.as_deref())?;
    let wp = w.added(&eps.epsilon, 1.0)?;
    let (lp, gp) = obj.loss_and_grad(wp.values(), batch)?;
    let new_w = finite(base.apply(w, &gp, lr)?)?;
    if let Some(state) = adaptive {
        state.update(&gp, w.layout())?;
    }
    Ok(StepResult {
        new_w,
        loss_main: lp,
        loss_perturbed: Some(lp),
        grad_norm: None,
        sigma_used: sigma,
        epsilon_radius: Some(eps.radius),
        grad_evals: 1,
    })
}

/// Mixed step `w − lr [λ ∇L_{B1}(w + ε) + (1 − λ) ∇L_{B2}(w)]`. The two
/// gradients are independent and are dispatched through `exec`; `ε` is drawn
/// before dispatch.
#[allow(clippy::too_many_arguments)]
pub fn step_mrwp<O: Objective + ?Sized, E: Executor>(
    obj: &O,
    w: &ParamVector,
    pair: &BatchPair<O::Batch>,
    lr: f64,
    sigma: f64,
    lambda: f64,
    cfg: &PerturbConfig,
    key: DrawKey,
    adaptive: Option<&mut AdaptiveState>,
    base: &mut BaseUpdate,
    exec: &E,
) -> Result<StepResult> {
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::InvalidConfig(format!("lambda must lie in [0, 1], got {lambda}")));
    }
    let eps = draw(w, sigma, cfg, key, adaptive.as_deref())?;
    let wp = w.added(&eps.epsilon, 1.0)?;
    let (perturbed, clean) = exec.join(
        || obj.loss_and_grad(wp.values(), &pair.b1),
        || obj.loss_and_grad(w.values(), &pair.b2),
    );
    let (lp, gp) = perturbed?;
    let (lc, gc) = clean?;
    let combined: Vec<f64> =
        gp.iter().zip(&gc).map(|(p, c)| lambda * p + (1.0 - lambda) * c).collect();
    let new_w = finite(base.apply(w, &combined, lr)?)?;
    if let Some(state) = adaptive {
        state.update(&gp, w.layout())?;
    }
    Ok(StepResult {
        new_w,
        loss_main: lc,
        loss_perturbed: Some(lp),
        grad_norm: Some(crate::norm2(&gc)),
        sigma_used: sigma,
        epsilon_radius: Some(eps.radius),
        grad_evals: 2,
    })
}

/// A configured optimizer with its momentum buffer, adaptive history and
/// perturbation stream.
#[derive(Debug, Clone)]
pub struct Optimizer {
    cfg: OptimizerConfig,
    base: BaseUpdate,
    adaptive: Option<AdaptiveState>,
    noise: NoiseStream,
}

impl Optimizer {
    pub fn new(cfg: OptimizerConfig, layout: &FilterLayout, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let adaptive = cfg.method.is_adaptive().then(|| {
            AdaptiveState::new(
                layout,
                cfg.perturb.beta_decay,
                cfg.perturb.granularity == Granularity::PerCoordinate,
            )
        });
        Ok(Self {
            cfg,
            base: BaseUpdate::new(cfg.momentum, cfg.weight_decay),
            adaptive,
            noise: NoiseStream::new(seed),
        })
    }

    pub fn config(&self) -> &OptimizerConfig {
        &self.cfg
    }

    pub fn adaptive_state(&self) -> Option<&AdaptiveState> {
        self.adaptive.as_ref()
    }

    /// Iteration `t ∈ [1, total]`. Single-batch methods read `pair.b1`.
    pub fn step<O: Objective + ?Sized, E: Executor>(
        &mut self,
        obj: &O,
        w: &ParamVector,
        pair: &BatchPair<O::Batch>,
        t: usize,
        total: usize,
        exec: &E,
    ) -> Result<StepResult> {
        let cfg = self.cfg;
        let lr = lr_at(t, total, &cfg);
        let sigma = perturb::sigma_at(t, total, &cfg.perturb);
        let res = match cfg.method {
            Method::Sgd => step_sgd(obj, w, &pair.b1, lr, &mut self.base),
            Method::Sam => {
                step_sam(obj, w, &pair.b1, lr, cfg.perturb.rho, cfg.m_sharpness, &mut self.base)
            }
            Method::Rwp | Method::Arwp => {
                let key = self.noise.next_key();
                step_rwp(
                    obj,
                    w,
                    &pair.b1,
                    lr,
                    sigma,
                    &cfg.perturb,
                    key,
                    self.adaptive.as_mut(),
                    &mut self.base,
                )
            }
            Method::Mrwp | Method::Marwp => {
                let key = self.noise.next_key();
                step_mrwp(
                    obj,
                    w,
                    pair,
                    lr,
                    sigma,
                    cfg.lambda,
                    &cfg.perturb,
                    key,
                    self.adaptive.as_mut(),
                    &mut self.base,
                    exec,
                )
            }
        };
        res.map_err(|e| match e {
            Error::Divergence { .. } => Error::Divergence { iteration: t },
            other => other,
        })
    }
}

/// Shuffled index stream for one epoch at a time.
#[derive(Debug, Clone)]
pub struct EpochSampler {
    n: usize,
    order: Vec<usize>,
    cursor: usize,
    rng: ChaCha8Rng,
}

impl EpochSampler {
    pub fn new(n: usize, seed: u64) -> Self {
        let mut s = Self {
            n,
            order: (0..n).collect(),
            cursor: 0,
            rng: ChaCha8Rng::seed_from_u64(crate::rng::mix64(seed ^ 0x00B4_7C4E)),
        };
        s.order.shuffle(&mut s.rng);
        s
    }

    /// Starts a new epoch with a fresh shuffle.
    pub fn reshuffle(&mut self) {
        self.order.clear();
        self.order.extend(0..self.n);
        self.order.shuffle(&mut self.rng);
        self.cursor = 0;
    }

    /// Index sets for the next step of the current epoch, or `None` when the
    /// epoch has too few examples left. "different" takes two consecutive
    /// disjoint slices.
    pub fn next_pair(&mut self, batch_size: usize, mode: BatchPairing) -> Option<(Vec<usize>, Vec<usize>)> {
        let need = match mode {
            BatchPairing::Same => batch_size,
            BatchPairing::Different => 2 * batch_size,
        };
        if batch_size == 0 || self.cursor + need > self.n {
            return None;
        }
        let a = self.order[self.cursor..self.cursor + batch_size].to_vec();
        let b = match mode {
            BatchPairing::Same => a.clone(),
            BatchPairing::Different => {
                self.order[self.cursor + batch_size..self.cursor + need].to_vec()
            }
        };
        self.cursor += need;
        Some((a, b))
    }

    /// Steps that fit in one epoch.
    pub fn steps_per_epoch(n: usize, batch_size: usize, mode: BatchPairing) -> usize {
        match mode {
            BatchPairing::Same => n / batch_size.max(1),
            BatchPairing::Different => n / (2 * batch_size.max(1)),
        }
    }
}

/// One batch pair drawn from a fresh shuffle of `data`.
pub fn make_batch_pair(
    data: &Batch,
    batch_size: usize,
    mode: BatchPairing,
    seed: u64,
) -> Result<BatchPair<Batch>> {
    let need = match mode {
        BatchPairing::Same => batch_size,
        BatchPairing::Different => 2 * batch_size,
    };
    if batch_size == 0 || data.len() < need {
        return Err(Error::InvalidConfig(format!(
            "need {need} examples for a {mode:?} batch pair of size {batch_size}, dataset has {}",
            data.len()
        )));
    }
    let mut sampler = EpochSampler::new(data.len(), seed);
    let (a, b) = sampler.next_pair(batch_size, mode).expect("size checked");
    Ok(BatchPair { b1: data.select(&a)?, b2: data.select(&b)? })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Activation, Layer, LossHead, Model, ModelSpec, Targets};
    use crate::perturb::{PerturbLaw, Schedule};
    use crate::tensor::Tensor;
    use alloc::vec;

    /// `L(w) = ½ w²` as a one-weight linear model with input 1, target 0.
    fn half_square() -> (Model, Batch) {
        let m = Model::new(ModelSpec {
            input: None,
            layers: vec![Layer::Dense {
                input: 1,
                output: 1,
                activation: Activation::Identity,
                bias: false,
            }],
            loss_head: LossHead::MeanSquaredError,
        })
        .unwrap();
        let b = Batch::new(
            Tensor::new(vec![1, 1], vec![1.0]).unwrap(),
            Targets::Values(Tensor::new(vec![1, 1], vec![0.0]).unwrap()),
        )
        .unwrap();
        (m, b)
    }

    fn pv(m: &Model, v: &[f64]) -> ParamVector {
        ParamVector::new(v.to_vec(), m.layout().clone()).unwrap()
    }

    #[test]
    fn lr_schedules() {
        let mut cfg = OptimizerConfig::new(Method::Sgd);
        cfg.gamma0 = 0.2;
        cfg.lr_schedule = LrSchedule::InverseSqrt;
        assert_eq!(lr_at(1, 10, &cfg), 0.2);
        assert_eq!(lr_at(4, 10, &cfg), 0.1);
        cfg.lr_schedule = LrSchedule::CosineDecay;
        assert_eq!(lr_at(1, 10, &cfg), 0.2);
        let end = lr_at(1000, 1000, &cfg);
        let expected = 0.2 * (1.0 + libm::cos(core::f64::consts::PI * 999.0 / 1000.0)) / 2.0;
        assert_eq!(end, expected);
        assert!(end < 1e-6);
        cfg.lr_schedule = LrSchedule::Constant;
        assert_eq!(lr_at(7, 10, &cfg), 0.2);
    }

    #[test]
    fn sgd_on_half_square() {
        let (m, b) = half_square();
        let r = step_sgd(&m, &pv(&m, &[1.0]), &b, 0.1, &mut BaseUpdate::plain()).unwrap();
        assert!((r.new_w.values()[0] - 0.9).abs() < 1e-15);
        assert_eq!(r.grad_evals, 1);
        let z = step_sgd(&m, &pv(&m, &[0.0]), &b, 0.1, &mut BaseUpdate::plain()).unwrap();
        assert_eq!(z.new_w.values()[0], 0.0);
    }

    #[test]
    fn momentum_buffer_recursion() {
        let mut base = BaseUpdate::new(0.9, 0.0);
        let w = ParamVector::from_vec(vec![0.0]);
        let g = [2.0];
        let w1 = base.apply(&w, &g, 0.1).unwrap();
        let w2 = base.apply(&w1, &g, 0.1).unwrap();
        let second = w1.values()[0] - w2.values()[0];
        assert!((second - 0.1 * 1.9 * 2.0).abs() < 1e-15);
    }

    #[test]
    fn weight_decay_pulls_towards_zero() {
        let mut base = BaseUpdate::new(0.0, 0.5);
        let w = ParamVector::from_vec(vec![2.0]);
        let w1 = base.apply(&w, &[0.0], 0.1).unwrap();
        assert!((w1.values()[0] - (2.0 - 0.1 * 0.5 * 2.0)).abs() < 1e-15);
    }

    #[test]
    fn sam_on_half_square() {
        let (m, b) = half_square();
        let r = step_sam(&m, &pv(&m, &[1.0]), &b, 0.1, 0.1, 0, &mut BaseUpdate::plain()).unwrap();
        assert!((r.epsilon_radius.unwrap() - 0.1).abs() < 1e-15);
        assert!((r.new_w.values()[0] - 0.89).abs() < 1e-15);
        assert!((r.loss_perturbed.unwrap() - 0.5 * 1.1 * 1.1).abs() < 1e-15);
        assert_eq!(r.grad_evals, 2);
    }

    fn toy_batch() -> (Model, Batch, ParamVector) {
        let m = Model::new(ModelSpec::mlp(&[2, 4, 3], Activation::Tanh, LossHead::SoftmaxCrossEntropy))
            .unwrap();
        let x: Vec<f64> = (0..16).map(|i| (i as f64 * 0.37).sin()).collect();
        let b = Batch::new(
            Tensor::new(vec![8, 2], x).unwrap(),
            Targets::Labels(vec![0, 1, 2, 0, 1, 2, 0, 1]),
        )
        .unwrap();
        let w = m.init_params(3);
        (m, b, w)
    }

    #[test]
    fn sam_zero_rho_is_sgd() {
        let (m, b, w) = toy_batch();
        let s = step_sgd(&m, &w, &b, 0.1, &mut BaseUpdate::plain()).unwrap();
        let a = step_sam(&m, &w, &b, 0.1, 0.0, 0, &mut BaseUpdate::plain()).unwrap();
        assert_eq!(s.new_w, a.new_w);
    }

    #[test]
    fn sam_full_chunk_equals_unchunked() {
        let (m, b, w) = toy_batch();
        let a = step_sam(&m, &w, &b, 0.1, 0.05, 0, &mut BaseUpdate::plain()).unwrap();
        let c = step_sam(&m, &w, &b, 0.1, 0.05, 8, &mut BaseUpdate::plain()).unwrap();
        assert_eq!(a, c);
        let split = step_sam(&m, &w, &b, 0.1, 0.05, 4, &mut BaseUpdate::plain()).unwrap();
        assert_ne!(split.new_w, a.new_w);
        assert!(step_sam(&m, &w, &b, 0.1, 0.05, 3, &mut BaseUpdate::plain()).is_err());
    }

    #[test]
    fn sam_chunked_matches_manual_average() {
        let (m, b, w) = toy_batch();
        let r = step_sam(&m, &w, &b, 0.1, 0.05, 4, &mut BaseUpdate::plain()).unwrap();
        let mut avg = vec![0.0; w.dim()];
        for chunk in b.chunks(4).unwrap() {
            let (_, g) = m.loss_and_grad(w.values(), &chunk).unwrap();
            let n = crate::norm2(&g);
            let wp: Vec<f64> = w.values().iter().zip(&g).map(|(a, gi)| a + 0.05 * gi / n).collect();
            let (_, gp) = m.loss_and_grad(&wp, &chunk).unwrap();
            avg.iter_mut().zip(&gp).for_each(|(s, v)| *s += v / 2.0);
        }
        for (i, v) in r.new_w.values().iter().enumerate() {
            assert!((v - (w.values()[i] - 0.1 * avg[i])).abs() < 1e-14);
        }
    }

    fn constant_perturb(sigma: f64) -> PerturbConfig {
        PerturbConfig {
            sigma_max: sigma,
            schedule: Schedule::Constant,
            law: PerturbLaw::Isotropic,
            ..Default::default()
        }
    }

    #[test]
    fn rwp_zero_sigma_is_sgd() {
        let (m, b, w) = toy_batch();
        let cfg = constant_perturb(0.0);
        let s = step_sgd(&m, &w, &b, 0.1, &mut BaseUpdate::plain()).unwrap();
        let r = step_rwp(&m, &w, &b, 0.1, 0.0, &cfg, DrawKey::from_raw(1), None, &mut BaseUpdate::plain())
            .unwrap();
        assert_eq!(s.new_w, r.new_w);
    }

    #[test]
    fn rwp_closed_form_on_half_square() {
        let (m, b) = half_square();
        let cfg = constant_perturb(0.3);
        let key = DrawKey::from_raw(21);
        let eps = perturb::sample_rwp(&pv(&m, &[1.0]), 0.3, PerturbLaw::Isotropic, key).epsilon[0];
        assert!(eps != 0.0);
        let r = step_rwp(&m, &pv(&m, &[1.0]), &b, 0.1, 0.3, &cfg, key, None, &mut BaseUpdate::plain())
            .unwrap();
        assert_eq!(r.new_w.values()[0], 1.0 - 0.1 * (1.0 + eps));
    }

    #[test]
    fn arwp_fresh_state_equals_rwp_step() {
        let (m, b, w) = toy_batch();
        let cfg = PerturbConfig { schedule: Schedule::Constant, sigma_max: 0.2, ..Default::default() };
        let key = DrawKey::from_raw(5);
        let mut st = AdaptiveState::new(m.layout(), 0.99, false);
        let a = step_rwp(&m, &w, &b, 0.1, 0.2, &cfg, key, Some(&mut st), &mut BaseUpdate::plain())
            .unwrap();
        let r = step_rwp(&m, &w, &b, 0.1, 0.2, &cfg, key, None, &mut BaseUpdate::plain()).unwrap();
        assert_eq!(a.new_w, r.new_w);
        assert_eq!(st.t, 2);
        assert!(st.per_group_sum.iter().any(|&s| s > 0.0));
    }

    #[test]
    fn mrwp_limits() {
        let (m, b, w) = toy_batch();
        let other = b.select(&[7, 6, 5, 4, 3, 2, 1, 0]).unwrap().select(&[0, 1, 2, 3]).unwrap();
        let pair = BatchPair { b1: b.clone(), b2: other.clone() };
        let cfg = PerturbConfig { schedule: Schedule::Constant, sigma_max: 0.1, ..Default::default() };
        let key = DrawKey::from_raw(8);
        let base = || BaseUpdate::plain();

        let zero = step_mrwp(&m, &w, &pair, 0.1, 0.1, 0.0, &cfg, key, None, &mut base(), &Sequential)
            .unwrap();
        let sgd = step_sgd(&m, &w, &other, 0.1, &mut base()).unwrap();
        assert_eq!(zero.new_w, sgd.new_w);

        let one = step_mrwp(&m, &w, &pair, 0.1, 0.1, 1.0, &cfg, key, None, &mut base(), &Sequential)
            .unwrap();
        let rwp = step_rwp(&m, &w, &b, 0.1, 0.1, &cfg, key, None, &mut base()).unwrap();
        assert_eq!(one.new_w, rwp.new_w);
        assert!(step_mrwp(&m, &w, &pair, 0.1, 0.1, 1.5, &cfg, key, None, &mut base(), &Sequential)
            .is_err());
    }

    #[test]
    fn mrwp_half_lambda_closed_form() {
        let (m, b) = half_square();
        let cfg = constant_perturb(0.4);
        let key = DrawKey::from_raw(99);
        let w = pv(&m, &[1.0]);
        let eps = perturb::sample_rwp(&w, 0.4, PerturbLaw::Isotropic, key).epsilon[0];
        let r = step_mrwp(
            &m,
            &w,
            &BatchPair::same(b),
            0.1,
            0.4,
            0.5,
            &cfg,
            key,
            None,
            &mut BaseUpdate::plain(),
            &Sequential,
        )
        .unwrap();
        assert!((r.new_w.values()[0] - (1.0 - 0.1 * (1.0 + 0.5 * eps))).abs() < 1e-15);
    }

    #[test]
    fn divergence_is_reported() {
        let (m, b) = half_square();
        let mut base = BaseUpdate::plain();
        let r = step_sgd(&m, &pv(&m, &[1e200]), &b, 1e200, &mut base);
        assert!(matches!(r, Err(Error::Divergence { .. })));
    }

    #[test]
    fn batch_pair_modes() {
        let (_, b, _) = toy_batch();
        let same = make_batch_pair(&b, 3, BatchPairing::Same, 1).unwrap();
        assert_eq!(same.b1, same.b2);
        let diff = make_batch_pair(&b, 4, BatchPairing::Different, 1).unwrap();
        assert_ne!(diff.b1, diff.b2);
        assert!(make_batch_pair(&b, 5, BatchPairing::Different, 1).is_err());
        assert!(make_batch_pair(&b, 9, BatchPairing::Same, 1).is_err());
    }

    #[test]
    fn different_pairs_partition_an_epoch() {
        let mut s = EpochSampler::new(103, 4);
        let mut seen = vec![0u32; 103];
        let mut steps = 0;
        while let Some((a, b)) = s.next_pair(10, BatchPairing::Different) {
            assert!(a.iter().all(|i| !b.contains(i)));
            for i in a.into_iter().chain(b) {
                seen[i] += 1;
            }
            steps += 1;
        }
        assert_eq!(steps, EpochSampler::steps_per_epoch(103, 10, BatchPairing::Different));
        assert!(seen.iter().all(|&c| c <= 1));
        assert_eq!(seen.iter().sum::<u32>(), 100);
    }

    #[test]
    fn config_validation() {
        let mut c = OptimizerConfig::new(Method::Mrwp);
        assert!(c.validate().is_ok());
        c.lambda = 1.2;
        assert!(c.validate().is_err());
        c.lambda = 0.5;
        c.momentum = 1.0;
        assert!(c.validate().is_err());
        c.momentum = 0.0;
        c.gamma0 = 0.0;
        assert!(c.validate().is_err());
        assert_eq!(Method::Sam.grad_evals(), 2);
        assert_eq!(Method::Arwp.grad_evals(), 1);
    }
}
