//! The `perturbopt` command line.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Parser, Subcommand};
use perturbopt_core::analysis::{landscape_grid, lanczos_spectrum, radius_sweep, rwp_radius_to_match};
use perturbopt_core::model::Model;
use perturbopt_core::objective::{default_hvp_step, hvp};
use perturbopt_core::perturb::awp_direction;
use perturbopt_core::{FullBatch, Objective, ParamVector};
use serde::Serialize;

use crate::checkpoint;
use crate::config::{read_json, ExperimentConfig};
use crate::data::{generate_dataset, Dataset};
use crate::error::{HarnessError, Result};
use crate::exec::worker_count;
use crate::report::{self, BoundsInput};
use crate::run::run_experiment;
use crate::sweep::{sweep, SweepConfig};

pub const LANDSCAPE_CSV: &str = "landscape.csv";
pub const SPECTRUM_CSV: &str = "spectrum.csv";
pub const RADIUS_CSV: &str = "radius.csv";
pub const RADIUS_MATCH_JSON: &str = "radius_match.json";
pub const BOUNDS_JSON: &str = "bounds.json";

#[derive(Debug, Parser)]
#[command(name = "perturbopt", version, about = "Random-weight-perturbation training and diagnostics")]
pub struct Cli {
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    pub out: PathBuf,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train one configuration; writes run.csv, epochs.csv, summary.json, final.pvec.
    Train { config: PathBuf },
    /// Run a grid of configurations; writes sweep.csv and one directory per run.
    Sweep { config: PathBuf },
    /// Loss on a filter-normalized 2-D slice around a checkpoint.
    Landscape { checkpoint: PathBuf, config: PathBuf },
    /// Lanczos estimate of the Hessian spectrum at a checkpoint.
    Spectrum { checkpoint: PathBuf, config: PathBuf },
    /// Adversarial vs random perturbed loss over a radius grid.
    Radius { checkpoint: PathBuf, config: PathBuf },
    /// Evaluate the convergence bounds for a constants file.
    Bounds { constants: PathBuf },
}

/// Parses `args` (program name first), runs the command and returns the
/// process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn execute(cli: &Cli) -> Result<()> {
    let out = &cli.out;
    match &cli.command {
        Command::Train { config } => {
            let mut cfg = ExperimentConfig::load(config)?;
            cfg.outputs = out.clone();
            let rec = run_experiment(&cfg)?;
            let s = rec.summary();
            println!(
                "{}: {} steps, {} gradient evaluations, {:.3} s",
                s.method.name(),
                s.steps,
                s.grad_evals,
                s.wall_clock_seconds
            );
            if let Some(e) = rec.final_epoch() {
                print!("final train loss {:.6}", e.train_loss);
                if let Some(acc) = e.test_acc {
                    print!(", test accuracy {acc:.4}");
                }
                println!();
            }
            println!("wrote {}", out.display());
        }
        Command::Sweep { config } => {
            let mut cfg = SweepConfig::load(config)?;
            cfg.base.outputs = out.clone();
            let res = sweep(&cfg, worker_count(), true)?;
            for (v, why) in &res.skipped {
                eprintln!("skipped {} σ={:?} λ={:?}: {why}", v.method.name(), v.sigma, v.lambda);
            }
            println!("{} runs; wrote {}", res.rows.len(), out.join(crate::sweep::SWEEP_CSV).display());
        }
        Command::Landscape { checkpoint, config } => {
            analyse(Analysis::Landscape, checkpoint, config, out)?;
        }
        Command::Spectrum { checkpoint, config } => {
            analyse(Analysis::Spectrum, checkpoint, config, out)?;
        }
        Command::Radius { checkpoint, config } => {
            analyse(Analysis::Radius, checkpoint, config, out)?;
        }
        Command::Bounds { constants } => {
            let input: BoundsInput = read_json(constants)?;
            input.constants.validate()?;
            let rep = report::bounds_report(&input)?;
            write(out, BOUNDS_JSON, &serde_json::to_vec_pretty(&rep).expect("plain data"))?;
            println!("rwp_bound {:.6}", rep.rwp_bound);
            if let Some(m) = rep.mrwp_bound {
                println!("mrwp_bound {m:.6}");
            }
        }
    }
    Ok(())
}

/// The RWP radius whose mean loss reaches the AWP loss at `match_rho`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RadiusMatch {
    pub rho: f64,
    pub awp_loss: f64,
    pub rwp_radius: Option<f64>,
    pub ratio: Option<f64>,
}

pub fn radius_match<O: Objective + ?Sized>(
    obj: &O,
    w: &ParamVector,
    data: &O::Batch,
    cfg: &ExperimentConfig,
) -> Result<RadiusMatch> {
    let r = &cfg.analysis.radius;
    let (_, g) = obj.loss_and_grad(w.values(), data)?;
    let eps = awp_direction(&g, r.match_rho);
    let awp_loss = obj.loss(w.added(&eps.epsilon, 1.0)?.values(), data)?;
    let found = rwp_radius_to_match(obj, w, data, awp_loss, r.n_samples, r.law, r.seed, r.max_radius)?;
    Ok(RadiusMatch { rho: r.match_rho, awp_loss, rwp_radius: found, ratio: found.map(|x| x / r.match_rho) })
}

fn write(dir: &Path, name: &str, bytes: &[u8]) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| HarnessError::io(dir, e))?;
    let p = dir.join(name);
    fs::write(&p, bytes).map_err(|e| HarnessError::io(p, e))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Analysis {
    Landscape,
    Spectrum,
    Radius,
}

impl Analysis {
    fn run<O: Objective>(
        self,
        obj: &O,
        w: &ParamVector,
        data: &O::Batch,
        cfg: &ExperimentConfig,
        out: &Path,
    ) -> Result<()> {
        match self {
            Analysis::Landscape => {
                let l = &cfg.analysis.landscape;
                let res = (l.resolution, l.resolution);
                let g = landscape_grid(obj, w, data, res, (l.range[0], l.range[1]), l.seed)?;
                write(out, LANDSCAPE_CSV, &report::landscape_csv(&g))?;
                println!("{}x{} grid, centre loss {:.6}", res.0, res.1, obj.loss(w.values(), data)?);
            }
            Analysis::Spectrum => {
                let s = &cfg.analysis.spectrum;
                let h = s.hvp_step.unwrap_or_else(|| default_hvp_step(w.values()));
                let iters = s.iters.min(obj.dim());
                let r = lanczos_spectrum(|v| hvp(obj, w.values(), data, v, h), obj.dim(), iters, s.seed)?;
                write(out, SPECTRUM_CSV, &report::spectrum_csv(&r))?;
                println!("{} Lanczos steps, dominant eigenvalue {:.6}", r.iterations, r.dominant());
            }
            Analysis::Radius => {
                let r = &cfg.analysis.radius;
                let res = radius_sweep(obj, w, data, &r.radii, r.n_samples, r.law, r.seed)?;
                write(out, RADIUS_CSV, &report::radius_csv(&res))?;
                let m = radius_match(obj, w, data, cfg)?;
                write(out, RADIUS_MATCH_JSON, &serde_json::to_vec_pretty(&m).expect("plain data"))?;
                match m.ratio {
                    Some(x) => println!("RWP needs {x:.1}x the AWP radius {} to match its loss", m.rho),
                    None => println!(
                        "RWP did not reach the AWP loss at rho={} within radius {}",
                        m.rho, r.max_radius
                    ),
                }
            }
        }
        Ok(())
    }
}

/// Rebuilds the objective and training data named by the config, loads the
/// checkpoint against its layout, and runs `a` on them.
fn analyse(a: Analysis, ckpt: &Path, config: &Path, out: &Path) -> Result<()> {
    let cfg = ExperimentConfig::load(config)?;
    match generate_dataset(&cfg.dataset)? {
        Dataset::Supervised(split) => {
            let model = Model::new(cfg.model.clone().expect("validated"))?;
            let w = checkpoint::load_params(ckpt, model.layout().clone())?;
            a.run(&model, &w, &split.train, &cfg, out)
        }
        Dataset::Quadratic(q) => {
            let w = checkpoint::load_params(ckpt, Arc::clone(q.objective.layout()))?;
            a.run(&q.objective, &w, &FullBatch, &cfg, out)
        }
    }
}
