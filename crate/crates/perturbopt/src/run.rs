//! Training runs and their telemetry.

use std::fs;
use std::path::Path;
use std::time::Instant;

use perturbopt_core::analysis::generalization_gap;
use perturbopt_core::model::Model;
use perturbopt_core::optim::{
    BatchPair, BatchPairing, EpochSampler, Executor, Method, Optimizer, StepResult,
};
use perturbopt_core::perturb::AdaptiveState;
use perturbopt_core::rng::DrawKey;
use perturbopt_core::{Batch, FullBatch, Objective, ParamVector};
use serde::{Deserialize, Serialize};

use crate::checkpoint;
use crate::config::ExperimentConfig;
use crate::data::{generate_dataset, Dataset, QuadraticProblem, Split};
use crate::error::{HarnessError, Result};
use crate::exec::Threaded;

pub const RUN_CSV: &str = "run.csv";
pub const EPOCHS_CSV: &str = "epochs.csv";
pub const FINAL_PVEC: &str = "final.pvec";
pub const ADAPTIVE_STATE: &str = "adaptive.asta";
pub const SUMMARY_JSON: &str = "summary.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRow {
    pub t: usize,
    pub sigma: f64,
    pub lr: f64,
    /// Clean loss when the method computes one, otherwise the perturbed loss.
    pub train_loss: f64,
    pub perturbed_loss: Option<f64>,
    /// `‖∇L(w_t)‖` at the unperturbed point.
    pub grad_norm: Option<f64>,
    pub epsilon_radius: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRow {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_acc: Option<f64>,
    pub test_loss: f64,
    pub test_acc: Option<f64>,
    /// Train accuracy minus test accuracy.
    pub gen_gap: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunRecord {
    pub method: Method,
    pub iterations: Vec<IterationRow>,
    pub epochs: Vec<EpochRow>,
    /// Weights after the last finite step.
    pub final_params: ParamVector,
    pub adaptive_state: Option<AdaptiveState>,
    pub steps: usize,
    pub grad_evals: u64,
    pub wall_clock_seconds: f64,
    pub diverged_at: Option<usize>,
}

/// The non-tabular part of a run, written as JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub method: Method,
    pub steps: usize,
    pub grad_evals: u64,
    pub grad_evals_per_step: usize,
    pub wall_clock_seconds: f64,
    pub final_train_loss: Option<f64>,
    pub final_test_acc: Option<f64>,
    pub diverged_at: Option<usize>,
    pub last_finite_iteration: usize,
}

fn to_csv<T: Serialize>(rows: &[T], header: &[&str]) -> Vec<u8> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
    w.write_record(header).expect("in-memory write");
    for r in rows {
        w.serialize(r).expect("in-memory write");
    }
    w.into_inner().expect("in-memory flush")
}

impl RunRecord {
    pub fn last_finite_iteration(&self) -> usize {
        self.diverged_at.map_or(self.steps, |t| t - 1)
    }

    pub fn final_epoch(&self) -> Option<&EpochRow> {
        self.epochs.last()
    }

    pub fn iterations_csv(&self) -> Vec<u8> {
        to_csv(
            &self.iterations,
            &["t", "sigma", "lr", "train_loss", "perturbed_loss", "grad_norm", "epsilon_radius"],
        )
    }

    pub fn epochs_csv(&self) -> Vec<u8> {
        to_csv(&self.epochs, &["epoch", "train_loss", "train_acc", "test_loss", "test_acc", "gen_gap"])
    }

    pub fn summary(&self) -> RunSummary {
        RunSummary {
            method: self.method,
            steps: self.steps,
            grad_evals: self.grad_evals,
            grad_evals_per_step: self.method.grad_evals(),
            wall_clock_seconds: self.wall_clock_seconds,
            final_train_loss: self.final_epoch().map(|e| e.train_loss),
            final_test_acc: self.final_epoch().and_then(|e| e.test_acc),
            diverged_at: self.diverged_at,
            last_finite_iteration: self.last_finite_iteration(),
        }
    }

    /// Writes the CSVs, summary, and (for completed runs) the final weights
    /// and adaptive state into `dir`.
    pub fn persist(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| HarnessError::io(dir, e))?;
        let write = |name: &str, bytes: &[u8]| {
            let p = dir.join(name);
            fs::write(&p, bytes).map_err(|e| HarnessError::io(p, e))
        };
        write(RUN_CSV, &self.iterations_csv())?;
        write(EPOCHS_CSV, &self.epochs_csv())?;
        let summary = serde_json::to_vec_pretty(&self.summary()).expect("plain data serializes");
        write(SUMMARY_JSON, &summary)?;
        if self.diverged_at.is_none() {
            checkpoint::save_params(&dir.join(FINAL_PVEC), &self.final_params)?;
            if let Some(s) = &self.adaptive_state {
                checkpoint::save_adaptive_state(&dir.join(ADAPTIVE_STATE), s)?;
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy)]
pub struct RunOptions {
    /// Worker cap for the mixed methods' two gradient evaluations.
    pub workers: usize,
    /// Write outputs to the configured directory.
    pub persist: bool,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self { workers: crate::exec::worker_count(), persist: true }
    }
}

/// Seeds for the independent random streams of a run.
fn stream_seed(seed: u64, stream: u64) -> u64 {
    DrawKey::from_raw(seed).child(stream).raw()
}

pub fn run_experiment(cfg: &ExperimentConfig) -> Result<RunRecord> {
    run_experiment_with(cfg, RunOptions::default())
}

pub fn run_experiment_with(cfg: &ExperimentConfig, opts: RunOptions) -> Result<RunRecord> {
    cfg.validate()?;
    let exec = Threaded::new(opts.workers);
    let result = match generate_dataset(&cfg.dataset)? {
        Dataset::Supervised(split) => {
            let spec = cfg.model.clone().expect("validated");
            let model = Model::new(spec)?;
            check_split(&model, &split)?;
            cfg.check_batch_size(split.train.len())?;
            train_supervised(cfg, &model, &split, &exec)
        }
        Dataset::Quadratic(q) => train_quadratic(cfg, &q, &exec),
    };
    match result {
        Ok(rec) => {
            if opts.persist {
                rec.persist(&cfg.outputs)?;
            }
            Ok(rec)
        }
        Err(HarnessError::Divergence { iteration, last_finite, record }) => {
            if opts.persist {
                record.persist(&cfg.outputs)?;
            }
            Err(HarnessError::Divergence { iteration, last_finite, record })
        }
        Err(e) => Err(e),
    }
}

fn check_split(model: &Model, split: &Split) -> Result<()> {
    for (name, b) in [("train", &split.train), ("test", &split.test)] {
        if b.inputs().row_len() != model.input_len() {
            return Err(HarnessError::Invalid(format!(
                "{name} inputs have {} features, model expects {}",
                b.inputs().row_len(),
                model.input_len()
            )));
        }
        if let Some(l) = b.labels().and_then(|l| l.iter().max()) {
            if *l >= model.output_dim() {
                return Err(HarnessError::Invalid(format!(
                    "{name} label {l} needs more than the model's {} outputs",
                    model.output_dim()
                )));
            }
        }
    }
    Ok(())
}

fn train_supervised(
    cfg: &ExperimentConfig,
    model: &Model,
    split: &Split,
    exec: &Threaded,
) -> Result<RunRecord> {
    let pairing = cfg.optimizer.pairing();
    let n = split.train.len();
    let per_epoch = EpochSampler::steps_per_epoch(n, cfg.batch_size, pairing);
    let mut sampler = EpochSampler::new(n, stream_seed(cfg.seed, 1));
    let eval = |w: &ParamVector, epoch: usize| -> Result<EpochRow> {
        let v = w.values();
        let train_acc = model.accuracy(v, &split.train)?;
        let test_acc = model.accuracy(v, &split.test)?;
        Ok(EpochRow {
            epoch,
            train_loss: model.loss(v, &split.train)?,
            train_acc: Some(train_acc),
            test_loss: model.loss(v, &split.test)?,
            test_acc: Some(test_acc),
            gen_gap: Some(generalization_gap(model, v, &split.train, &split.test)?),
        })
    };
    let next_pair = |fresh_epoch: bool| -> Result<BatchPair<Batch>> {
        if fresh_epoch {
            sampler.reshuffle();
        }
        let (a, b) = sampler.next_pair(cfg.batch_size, pairing).expect("steps_per_epoch fits");
        let b1 = split.train.select(&a)?;
        let b2 = match pairing {
            BatchPairing::Same => b1.clone(),
            BatchPairing::Different => split.train.select(&b)?,
        };
        Ok(BatchPair { b1, b2 })
    };
    train_loop(
        cfg,
        model,
        model.init_params(stream_seed(cfg.seed, 0)),
        per_epoch,
        next_pair,
        eval,
        |_| None,
        exec,
    )
}

fn train_quadratic(cfg: &ExperimentConfig, q: &QuadraticProblem, exec: &Threaded) -> Result<RunRecord> {
    let obj = &q.objective;
    let eval = |w: &ParamVector, epoch: usize| -> Result<EpochRow> {
        let l = obj.value(w.values());
        Ok(EpochRow { epoch, train_loss: l, train_acc: None, test_loss: l, test_acc: None, gen_gap: None })
    };
    let grad_norm = |w: &ParamVector| {
        Some(obj.apply(w.values()).iter().map(|g| g * g).sum::<f64>().sqrt())
    };
    train_loop(
        cfg,
        obj,
        q.w0.clone(),
        q.steps_per_epoch,
        |_| Ok(BatchPair::same(FullBatch)),
        eval,
        grad_norm,
        exec,
    )
}

/// Shared epoch/step loop. `next_pair(true)` marks the first step of an
/// epoch after the first. `clean_grad_norm` fills in `‖∇L(w_t)‖` when the
/// step itself did not compute it.
#[allow(clippy::too_many_arguments)]
fn train_loop<O: Objective + ?Sized>(
    cfg: &ExperimentConfig,
    obj: &O,
    w0: ParamVector,
    steps_per_epoch: usize,
    mut next_pair: impl FnMut(bool) -> Result<BatchPair<O::Batch>>,
    eval: impl Fn(&ParamVector, usize) -> Result<EpochRow>,
    clean_grad_norm: impl Fn(&ParamVector) -> Option<f64>,
    exec: &impl Executor,
) -> Result<RunRecord> {
    let start = Instant::now();
    let total = cfg.epochs * steps_per_epoch;
    let mut opt = Optimizer::new(cfg.optimizer, obj.layout(), stream_seed(cfg.seed, 2))?;
    let mut rec = RunRecord {
        method: cfg.optimizer.method,
        iterations: Vec::new(),
        epochs: Vec::new(),
        final_params: w0,
        adaptive_state: None,
        steps: 0,
        grad_evals: 0,
        wall_clock_seconds: 0.0,
        diverged_at: None,
    };
    let mut t = 0;
    for epoch in 1..=cfg.epochs {
        for s in 0..steps_per_epoch {
            t += 1;
            let pair = next_pair(epoch > 1 && s == 0)?;
            let w = &rec.final_params;
            let step = opt.step(obj, w, &pair, t, total, exec);
            let res: StepResult = match step {
                Ok(r) if r.loss_main.is_finite() => r,
                Ok(_) | Err(perturbopt_core::Error::Divergence { .. }) => {
                    return Err(diverged(rec, t, start));
                }
                Err(e) => return Err(e.into()),
            };
            if t % cfg.telemetry_stride == 0 {
                let grad_norm = res.grad_norm.or_else(|| clean_grad_norm(w));
                rec.iterations.push(IterationRow {
                    t,
                    sigma: res.sigma_used,
                    lr: perturbopt_core::optim::lr_at(t, total, &cfg.optimizer),
                    train_loss: res.loss_main,
                    perturbed_loss: res.loss_perturbed,
                    grad_norm,
                    epsilon_radius: res.epsilon_radius,
                });
            }
            rec.grad_evals += res.grad_evals as u64;
            rec.steps = t;
            rec.final_params = res.new_w;
        }
        let row = eval(&rec.final_params, epoch)?;
        if !(row.train_loss.is_finite() && row.test_loss.is_finite()) {
            return Err(diverged(rec, t, start));
        }
        rec.epochs.push(row);
    }
    rec.adaptive_state = opt.adaptive_state().cloned();
    rec.wall_clock_seconds = start.elapsed().as_secs_f64();
    Ok(rec)
}

fn diverged(mut rec: RunRecord, t: usize, start: Instant) -> HarnessError {
    rec.diverged_at = Some(t);
    rec.wall_clock_seconds = start.elapsed().as_secs_f64();
    HarnessError::Divergence { iteration: t, last_finite: t - 1, record: Box::new(rec) }
}
