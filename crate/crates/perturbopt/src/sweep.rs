//! Grids of runs over σ and λ.

use std::fs;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::thread;

use perturbopt_core::optim::Method;
use serde::{Deserialize, Serialize};

use crate::config::{read_json, ExperimentConfig};
use crate::error::{HarnessError, Result};
use crate::run::{run_experiment_with, RunOptions, RunRecord};

pub const SWEEP_CSV: &str = "sweep.csv";

/// One run's overrides of the base configuration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Variation {
    pub method: Method,
    #[serde(default)]
    pub sigma: Option<f64>,
    #[serde(default)]
    pub lambda: Option<f64>,
    #[serde(default)]
    pub seed: Option<u64>,
}

/// Cartesian product, expanded methods → sigmas → lambdas → seeds. Empty
/// lists keep the base value; λ is only varied for the mixed methods and σ
/// only for the random ones.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepGrid {
    pub methods: Vec<Method>,
    pub sigmas: Vec<f64>,
    pub lambdas: Vec<f64>,
    pub seeds: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub base: ExperimentConfig,
    /// Explicit runs, in order, followed by the grid expansion.
    #[serde(default)]
    pub variations: Vec<Variation>,
    #[serde(default)]
    pub grid: SweepGrid,
}

impl SweepConfig {
    pub fn load(path: &Path) -> Result<Self> {
        read_json(path)
    }

    pub fn expand(&self) -> Vec<Variation> {
        let mut out = self.variations.clone();
        let g = &self.grid;
        let opt = |v: &[f64]| -> Vec<Option<f64>> {
            if v.is_empty() {
                vec![None]
            } else {
                v.iter().copied().map(Some).collect()
            }
        };
        let seeds: Vec<Option<u64>> =
            if g.seeds.is_empty() { vec![None] } else { g.seeds.iter().copied().map(Some).collect() };
        for &method in &g.methods {
            let sigmas = if method.is_random() { opt(&g.sigmas) } else { vec![None] };
            let lambdas = if method.is_mixed() { opt(&g.lambdas) } else { vec![None] };
            for &sigma in &sigmas {
                for &lambda in &lambdas {
                    for &seed in &seeds {
                        out.push(Variation { method, sigma, lambda, seed });
                    }
                }
            }
        }
        out
    }
}

impl Variation {
    pub fn apply(&self, base: &ExperimentConfig) -> ExperimentConfig {
        let mut c = base.clone();
        c.optimizer.method = self.method;
        if let Some(s) = self.sigma {
            c.optimizer.perturb.sigma_max = s;
        }
        if let Some(l) = self.lambda {
            c.optimizer.lambda = l;
        }
        if let Some(s) = self.seed {
            c.seed = s;
        }
        c
    }

    fn label(&self, index: usize) -> String {
        let mut s = format!("{index:03}_{}", self.method.name());
        if let Some(v) = self.sigma {
            s += &format!("_s{v}");
        }
        if let Some(v) = self.lambda {
            s += &format!("_l{v}");
        }
        if let Some(v) = self.seed {
            s += &format!("_seed{v}");
        }
        s
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub method: String,
    /// Empty for methods that do not sample σ.
    pub sigma: Option<f64>,
    /// Empty for single-gradient methods.
    pub lambda: Option<f64>,
    pub seed: u64,
    pub final_train_loss: f64,
    pub final_test_acc: Option<f64>,
    pub gen_gap: Option<f64>,
}

#[derive(Debug)]
pub struct SweepOutcome {
    pub rows: Vec<SweepRow>,
    pub records: Vec<RunRecord>,
    /// Variations dropped by validation, with the reason.
    pub skipped: Vec<(Variation, String)>,
}

impl SweepOutcome {
    pub fn csv(&self) -> Vec<u8> {
        let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
        w.write_record([
            "method",
            "sigma",
            "lambda",
            "seed",
            "final_train_loss",
            "final_test_acc",
            "gen_gap",
        ])
        .expect("in-memory write");
        for r in &self.rows {
            w.serialize(r).expect("in-memory write");
        }
        w.into_inner().expect("in-memory flush")
    }
}

/// Runs every valid variation, up to `workers` at a time, each into its own
/// subdirectory of `base.outputs/runs`. Rows follow declaration order. The
/// first failing run (in declaration order) is returned as the error.
pub fn sweep(cfg: &SweepConfig, workers: usize, persist: bool) -> Result<SweepOutcome> {
    let mut jobs = Vec::new();
    let mut skipped = Vec::new();
    for (i, v) in cfg.expand().into_iter().enumerate() {
        let mut c = v.apply(&cfg.base);
        c.outputs = cfg.base.outputs.join("runs").join(v.label(i));
        match c.validate() {
            Ok(()) => jobs.push((v, c)),
            Err(e) => skipped.push((v, e.to_string())),
        }
    }
    if jobs.is_empty() {
        let list: Vec<String> =
            skipped.iter().map(|(v, why)| format!("{} σ={:?} λ={:?}: {why}", v.method.name(), v.sigma, v.lambda)).collect();
        return Err(HarnessError::Invalid(format!(
            "no valid sweep variations; offenders: [{}]",
            list.join("; ")
        )));
    }
    let results: Vec<Mutex<Option<Result<RunRecord>>>> = jobs.iter().map(|_| Mutex::new(None)).collect();
    let next = AtomicUsize::new(0);
    let opts = RunOptions { workers: 1, persist };
    thread::scope(|s| {
        for _ in 0..workers.clamp(1, jobs.len()) {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some((_, c)) = jobs.get(i) else { break };
                let r = run_experiment_with(c, opts);
                *results[i].lock().expect("no poisoning") = Some(r);
            });
        }
    });
    let mut rows = Vec::with_capacity(jobs.len());
    let mut records = Vec::with_capacity(jobs.len());
    for ((v, c), slot) in jobs.iter().zip(results) {
        let rec = slot.into_inner().expect("no poisoning").expect("every job ran")?;
        let last = rec.final_epoch().expect("epochs >= 1");
        rows.push(SweepRow {
            method: v.method.name().to_string(),
            sigma: v.method.is_random().then_some(c.optimizer.perturb.sigma_max),
            lambda: v.method.is_mixed().then_some(c.optimizer.lambda),
            seed: c.seed,
            final_train_loss: last.train_loss,
            final_test_acc: last.test_acc,
            gen_gap: last.gen_gap,
        });
        records.push(rec);
    }
    let out = SweepOutcome { rows, records, skipped };
    if persist {
        let dir = &cfg.base.outputs;
        fs::create_dir_all(dir).map_err(|e| HarnessError::io(dir, e))?;
        let p = dir.join(SWEEP_CSV);
        fs::write(&p, out.csv()).map_err(|e| HarnessError::io(p, e))?;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn base() -> ExperimentConfig {
        serde_json::from_str(
            r#"{
                "dataset": {"source": {"quadratic": {"d": 4, "condition_number": 10}}},
                "optimizer": {"method": "sgd"},
                "epochs": 3,
                "batch_size": 1
            }"#,
        )
        .unwrap()
    }

    #[test]
    fn grid_expands_in_declaration_order() {
        let cfg = SweepConfig {
            base: base(),
            variations: vec![],
            grid: SweepGrid {
                methods: vec![Method::Sgd, Method::Rwp, Method::Mrwp],
                sigmas: vec![0.01, 0.02],
                lambdas: vec![0.1, 0.9],
                seeds: vec![],
            },
        };
        let v = cfg.expand();
        let summary: Vec<_> = v.iter().map(|v| (v.method, v.sigma, v.lambda)).collect();
        assert_eq!(
            summary,
            vec![
                (Method::Sgd, None, None),
                (Method::Rwp, Some(0.01), None),
                (Method::Rwp, Some(0.02), None),
                (Method::Mrwp, Some(0.01), Some(0.1)),
                (Method::Mrwp, Some(0.01), Some(0.9)),
                (Method::Mrwp, Some(0.02), Some(0.1)),
                (Method::Mrwp, Some(0.02), Some(0.9)),
            ]
        );
    }

    #[test]
    fn all_invalid_lists_offenders() {
        let cfg = SweepConfig {
            base: base(),
            variations: vec![
                Variation { method: Method::Mrwp, sigma: None, lambda: Some(1.5), seed: None },
                Variation { method: Method::Rwp, sigma: Some(-1.0), lambda: None, seed: None },
            ],
            grid: SweepGrid::default(),
        };
        let err = sweep(&cfg, 1, false).unwrap_err().to_string();
        assert!(err.contains("mrwp") && err.contains("rwp") && err.contains("1.5"), "{err}");
    }

    #[test]
    fn invalid_variations_are_skipped() {
        let cfg = SweepConfig {
            base: base(),
            variations: vec![
                Variation { method: Method::Sgd, sigma: None, lambda: None, seed: Some(1) },
                Variation { method: Method::Mrwp, sigma: None, lambda: Some(2.0), seed: None },
                Variation { method: Method::Rwp, sigma: Some(0.01), lambda: None, seed: Some(2) },
            ],
            grid: SweepGrid::default(),
        };
        let out = sweep(&cfg, 2, false).unwrap();
        assert_eq!(out.rows.len(), 2);
        assert_eq!(out.skipped.len(), 1);
        assert_eq!((out.rows[0].method.as_str(), out.rows[1].method.as_str()), ("sgd", "rwp"));
        assert_eq!(out.rows[1].seed, 2);
    }
}
