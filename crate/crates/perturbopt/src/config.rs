use std::fs;
use std::path::{Path, PathBuf};

use perturbopt_core::optim::{BatchPairing, OptimizerConfig};
use perturbopt_core::perturb::PerturbLaw;
use perturbopt_core::ModelSpec;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::data::{DatasetSpec, Source};
use crate::error::{HarnessError, Result};

fn one() -> usize {
    1
}
fn default_outputs() -> PathBuf {
    PathBuf::from("out")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dataset: DatasetSpec,
    /// Required for labelled datasets; the quadratic source has no model.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<ModelSpec>,
    pub optimizer: OptimizerConfig,
    pub epochs: usize,
    pub batch_size: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "one")]
    pub telemetry_stride: usize,
    #[serde(default = "default_outputs")]
    pub outputs: PathBuf,
    #[serde(default)]
    pub analysis: AnalysisConfig,
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let cfg: Self = read_json(path)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Checks everything that does not need the data on hand.
    pub fn validate(&self) -> Result<()> {
        self.dataset.validate()?;
        self.optimizer.validate()?;
        let bad = |m: &str| Err(HarnessError::Invalid(m.into()));
        if self.epochs == 0 {
            return bad("epochs must be >= 1");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be >= 1");
        }
        if self.telemetry_stride == 0 {
            return bad("telemetry_stride must be >= 1");
        }
        let is_quadratic = matches!(self.dataset.source, Source::Quadratic { .. });
        if !is_quadratic && self.model.is_none() {
            return bad("a model is required for labelled datasets");
        }
        if is_quadratic && self.model.is_some() {
            return bad("the quadratic dataset takes no model");
        }
        self.analysis.validate()
    }

    /// Batch size against the realised training-set size.
    pub fn check_batch_size(&self, n_train: usize) -> Result<()> {
        let need = self.optimizer.examples_per_step(self.batch_size);
        if need > n_train {
            let pairing = match self.optimizer.pairing() {
                BatchPairing::Same => "same",
                BatchPairing::Different => "different",
            };
            return Err(HarnessError::Invalid(format!(
                "batch_size {} with {pairing} pairing needs {need} training examples, have {n_train}",
                self.batch_size
            )));
        }
        Ok(())
    }
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
    serde_json::from_str(&text).map_err(|source| HarnessError::Json { path: path.into(), source })
}

/// Parameters of the post-training diagnostics.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnalysisConfig {
    pub landscape: LandscapeConfig,
    pub spectrum: SpectrumConfig,
    pub radius: RadiusConfig,
}

impl AnalysisConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(HarnessError::Invalid(m));
        let l = &self.landscape;
        if l.resolution < 2 {
            return bad(format!("landscape resolution must be >= 2, got {}", l.resolution));
        }
        if !(l.range[0] < l.range[1]) {
            return bad(format!("landscape range must be increasing, got {:?}", l.range));
        }
        if self.spectrum.iters == 0 {
            return bad("spectrum iters must be >= 1".into());
        }
        if self.spectrum.hvp_step.is_some_and(|h| !(h > 0.0)) {
            return bad("spectrum hvp_step must be > 0".into());
        }
        let r = &self.radius;
        if r.radii.is_empty() || r.radii[0] <= 0.0 || r.radii.windows(2).any(|p| p[1] <= p[0]) {
            return bad(format!("radii must be positive and ascending, got {:?}", r.radii));
        }
        if r.n_samples == 0 {
            return bad("radius n_samples must be >= 1".into());
        }
        if !(r.match_rho > 0.0 && r.max_radius > 0.0) {
            return bad("match_rho and max_radius must be > 0".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LandscapeConfig {
    pub resolution: usize,
    pub range: [f64; 2],
    pub seed: u64,
}

impl Default for LandscapeConfig {
    fn default() -> Self {
        Self { resolution: 50, range: [-1.0, 1.0], seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SpectrumConfig {
    pub iters: usize,
    pub seed: u64,
    /// Finite-difference step for Hessian-vector products; scaled to the
    /// weights when absent.
    pub hvp_step: Option<f64>,
}

impl Default for SpectrumConfig {
    fn default() -> Self {
        Self { iters: 30, seed: 0, hvp_step: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RadiusConfig {
    pub radii: Vec<f64>,
    pub n_samples: usize,
    pub law: PerturbLaw,
    pub seed: u64,
    /// AWP radius whose loss the RWP radius search tries to reach.
    pub match_rho: f64,
    pub max_radius: f64,
}

impl Default for RadiusConfig {
    fn default() -> Self {
        Self {
            radii: log_grid(1e-3, 1.0, 10),
            n_samples: 200,
            law: PerturbLaw::FilterWise,
            seed: 0,
            match_rho: 0.05,
            max_radius: 100.0,
        }
    }
}

/// `n` log-spaced points from `lo` to `hi` inclusive.
pub fn log_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![lo];
    }
    let (a, b) = (lo.ln(), hi.ln());
    (0..n).map(|i| (a + (b - a) * i as f64 / (n - 1) as f64).exp()).collect()
}
