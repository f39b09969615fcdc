//! Synthetic and on-disk datasets.

use std::fs;
use std::path::{Path, PathBuf};

use perturbopt_core::rng::DrawKey;
use perturbopt_core::{Batch, ParamVector, Quadratic, Targets, Tensor};
use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{HarnessError, Result};

fn default_noise_std() -> f64 {
    0.1
}
fn default_spread() -> f64 {
    0.5
}
fn default_steps_per_epoch() -> usize {
    1
}
fn default_train_fraction() -> f64 {
    0.8
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub enum Source {
    /// `n` training examples; labels of `⌊label_noise_frac·n⌋` of them are
    /// flipped.
    TwoMoons {
        n: usize,
        #[serde(default = "default_noise_std")]
        noise_std: f64,
        #[serde(default)]
        label_noise_frac: f64,
        #[serde(default)]
        seed: u64,
    },
    Blobs {
        n: usize,
        classes: usize,
        #[serde(default = "default_spread")]
        spread: f64,
        #[serde(default)]
        seed: u64,
    },
    /// `L = ½wᵀAw` with a seeded eigenbasis and log-spaced spectrum in
    /// `[1/condition_number, 1]`. One epoch is `steps_per_epoch` full-batch
    /// steps.
    Quadratic {
        d: usize,
        condition_number: f64,
        #[serde(default)]
        seed: u64,
        #[serde(default = "default_steps_per_epoch")]
        steps_per_epoch: usize,
    },
    IdxFiles {
        images_path: PathBuf,
        labels_path: PathBuf,
        #[serde(default)]
        limit: Option<usize>,
    },
    CifarBinary {
        path: PathBuf,
        #[serde(default)]
        limit: Option<usize>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSpec {
    pub source: Source,
    /// Synthetic sources generate a clean test set sized so that train and
    /// test keep this proportion; file sources are split in file order.
    #[serde(default = "default_train_fraction")]
    pub train_fraction: f64,
}

impl DatasetSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(HarnessError::Invalid(m));
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return bad(format!("train_fraction must lie in (0, 1), got {}", self.train_fraction));
        }
        match &self.source {
            Source::TwoMoons { n, noise_std, label_noise_frac, .. } => {
                if *n < 4 {
                    return bad(format!("two-moons needs n >= 4, got {n}"));
                }
                if !(0.0..=0.5).contains(label_noise_frac) {
                    return bad(format!("label_noise_frac must lie in [0, 0.5], got {label_noise_frac}"));
                }
                if !(*noise_std >= 0.0 && noise_std.is_finite()) {
                    return bad(format!("noise_std must be >= 0, got {noise_std}"));
                }
            }
            Source::Blobs { n, classes, spread, .. } => {
                if *n < 4 {
                    return bad(format!("blobs needs n >= 4, got {n}"));
                }
                if *classes < 2 {
                    return bad(format!("blobs needs at least 2 classes, got {classes}"));
                }
                if !(*spread >= 0.0 && spread.is_finite()) {
                    return bad(format!("spread must be >= 0, got {spread}"));
                }
            }
            Source::Quadratic { d, condition_number, steps_per_epoch, .. } => {
                if *d == 0 {
                    return bad("quadratic needs d >= 1".into());
                }
                if !(*condition_number >= 1.0 && condition_number.is_finite()) {
                    return bad(format!("condition_number must be >= 1, got {condition_number}"));
                }
                if *steps_per_epoch == 0 {
                    return bad("steps_per_epoch must be >= 1".into());
                }
            }
            Source::IdxFiles { limit, .. } | Source::CifarBinary { limit, .. } => {
                if *limit == Some(0) {
                    return bad("limit must be >= 1".into());
                }
            }
        }
        Ok(())
    }
}

/// Labelled train/test split.
#[derive(Debug, Clone, PartialEq)]
pub struct Split {
    pub train: Batch,
    pub test: Batch,
}

/// The synthetic quadratic with its seeded starting point `w₀ ~ N(0, I)`.
#[derive(Debug, Clone)]
pub struct QuadraticProblem {
    pub objective: Quadratic,
    pub w0: ParamVector,
    pub steps_per_epoch: usize,
}

#[derive(Debug, Clone)]
pub enum Dataset {
    Supervised(Split),
    Quadratic(QuadraticProblem),
}

pub fn generate_dataset(spec: &DatasetSpec) -> Result<Dataset> {
    spec.validate()?;
    let n_test = |n: usize| {
        let m = (n as f64 * (1.0 - spec.train_fraction) / spec.train_fraction).ceil() as usize;
        m.max(1)
    };
    Ok(match &spec.source {
        Source::TwoMoons { n, noise_std, label_noise_frac, seed } => {
            let mut rng = ChaCha8Rng::seed_from_u64(*seed);
            let mut train = two_moons(*n, *noise_std, &mut rng)?;
            let test = two_moons(n_test(*n), *noise_std, &mut rng)?;
            train = flip_labels(&train, 2, *label_noise_frac, &mut rng)?;
            Dataset::Supervised(Split { train, test })
        }
        Source::Blobs { n, classes, spread, seed } => {
            let mut rng = ChaCha8Rng::seed_from_u64(*seed);
            let train = blobs(*n, *classes, *spread, &mut rng)?;
            let test = blobs(n_test(*n), *classes, *spread, &mut rng)?;
            Dataset::Supervised(Split { train, test })
        }
        Source::Quadratic { d, condition_number, seed, steps_per_epoch } => {
            let eigs = Quadratic::log_spaced_spectrum(*d, *condition_number, 1.0);
            let objective = Quadratic::rotated(&eigs, *seed);
            let mut w0 = vec![0.0; *d];
            DrawKey::from_raw(*seed).child(1).normal(0).fill(&mut w0);
            Dataset::Quadratic(QuadraticProblem {
                objective,
                w0: ParamVector::from_vec(w0),
                steps_per_epoch: *steps_per_epoch,
            })
        }
        Source::IdxFiles { images_path, labels_path, limit } => {
            split_in_order(load_idx(images_path, labels_path, *limit)?, spec.train_fraction)?
        }
        Source::CifarBinary { path, limit } => {
            split_in_order(load_cifar_binary(path, *limit)?, spec.train_fraction)?
        }
    })
}

fn split_in_order(all: Batch, train_fraction: f64) -> Result<Dataset> {
    let n = all.len();
    let n_train = (n as f64 * train_fraction).floor() as usize;
    if n_train == 0 || n_train == n {
        return Err(HarnessError::Invalid(format!(
            "train_fraction {train_fraction} leaves an empty split of {n} examples"
        )));
    }
    let idx: Vec<usize> = (0..n).collect();
    Ok(Dataset::Supervised(Split {
        train: all.select(&idx[..n_train])?,
        test: all.select(&idx[n_train..])?,
    }))
}

/// Alternating labels; class 0 on the upper unit half-circle, class 1 on the
/// lower one shifted by `(1, 0.5)`.
fn two_moons<R: Rng>(n: usize, noise_std: f64, rng: &mut R) -> Result<Batch> {
    let mut x = Vec::with_capacity(2 * n);
    let mut y = Vec::with_capacity(n);
    for i in 0..n {
        let label = i % 2;
        let theta = std::f64::consts::PI * rng.random::<f64>();
        let (px, py) = if label == 0 {
            (theta.cos(), theta.sin())
        } else {
            (1.0 - theta.cos(), 0.5 - theta.sin())
        };
        x.push(px + noise_std * rng.sample::<f64, _>(StandardNormal));
        x.push(py + noise_std * rng.sample::<f64, _>(StandardNormal));
        y.push(label);
    }
    Ok(Batch::new(Tensor::new(vec![n, 2], x)?, Targets::Labels(y))?)
}

/// Isotropic Gaussian clusters with centres evenly spaced on a circle of
/// radius 2.
fn blobs<R: Rng>(n: usize, classes: usize, spread: f64, rng: &mut R) -> Result<Batch> {
    let mut x = Vec::with_capacity(2 * n);
    let mut y = Vec::with_capacity(n);
    for i in 0..n {
        let c = i % classes;
        let angle = std::f64::consts::TAU * c as f64 / classes as f64;
        x.push(2.0 * angle.cos() + spread * rng.sample::<f64, _>(StandardNormal));
        x.push(2.0 * angle.sin() + spread * rng.sample::<f64, _>(StandardNormal));
        y.push(c);
    }
    Ok(Batch::new(Tensor::new(vec![n, 2], x)?, Targets::Labels(y))?)
}

/// Flips exactly `⌊frac·n⌋` labels, chosen without replacement, each to a
/// uniformly drawn different class.
pub fn flip_labels<R: Rng>(batch: &Batch, classes: usize, frac: f64, rng: &mut R) -> Result<Batch> {
    let labels = batch
        .labels()
        .ok_or_else(|| HarnessError::Invalid("label noise needs a classification dataset".into()))?;
    let n = labels.len();
    let k = (frac * n as f64).floor() as usize;
    let mut out = labels.to_vec();
    for i in index::sample(rng, n, k) {
        let shift = 1 + rng.random_range(0..classes - 1);
        out[i] = (out[i] + shift) % classes;
    }
    Ok(Batch::new(batch.inputs().clone(), Targets::Labels(out))?)
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| HarnessError::io(path, e))
}

fn be_u32(bytes: &[u8], at: usize) -> u32 {
    u32::from_be_bytes(bytes[at..at + 4].try_into().expect("4 bytes"))
}

fn check_limit(path: &Path, limit: Option<usize>) -> Result<()> {
    if limit == Some(0) {
        return Err(HarnessError::format(path, "limit 0 would produce an empty batch"));
    }
    Ok(())
}

/// IDX image/label pair, pixels scaled to `[0, 1]`, inputs shaped
/// `(n, rows·cols)`.
pub fn load_idx(images_path: &Path, labels_path: &Path, limit: Option<usize>) -> Result<Batch> {
    check_limit(images_path, limit)?;
    let img = read_file(images_path)?;
    let lab = read_file(labels_path)?;
    let header = |bytes: &[u8], path: &Path, magic: u32, dims: usize| -> Result<Vec<usize>> {
        let need = 4 + 4 * dims;
        if bytes.len() < need {
            return Err(HarnessError::format(path, format!("header needs {need} bytes, file has {}", bytes.len())));
        }
        let found = be_u32(bytes, 0);
        if found != magic {
            return Err(HarnessError::format(
                path,
                format!("bad IDX magic: expected 0x{magic:08x}, found 0x{found:08x}"),
            ));
        }
        Ok((0..dims).map(|i| be_u32(bytes, 4 + 4 * i) as usize).collect())
    };
    let d = header(&img, images_path, 0x0000_0803, 3)?;
    let (n_img, rows, cols) = (d[0], d[1], d[2]);
    let n_lab = header(&lab, labels_path, 0x0000_0801, 1)?[0];
    if n_img != n_lab {
        return Err(HarnessError::format(
            labels_path,
            format!("label count {n_lab} does not match image count {n_img}"),
        ));
    }
    let px = rows * cols;
    if img.len() != 16 + n_img * px {
        return Err(HarnessError::format(
            images_path,
            format!("expected {} bytes for {n_img}x{rows}x{cols}, found {}", 16 + n_img * px, img.len()),
        ));
    }
    if lab.len() != 8 + n_lab {
        return Err(HarnessError::format(
            labels_path,
            format!("expected {} bytes for {n_lab} labels, found {}", 8 + n_lab, lab.len()),
        ));
    }
    let n = limit.map_or(n_img, |l| l.min(n_img));
    if n == 0 {
        return Err(HarnessError::format(images_path, "file holds no images"));
    }
    let labels = lab[8..8 + n].iter().map(|&b| b as usize).collect::<Vec<_>>();
    if let Some((i, l)) = labels.iter().enumerate().find(|(_, &l)| l > 9) {
        return Err(HarnessError::format(labels_path, format!("label {l} at index {i} is outside [0, 9]")));
    }
    let pixels = img[16..16 + n * px].iter().map(|&b| b as f64 / 255.0).collect();
    Ok(Batch::new(Tensor::new(vec![n, px], pixels)?, Targets::Labels(labels))?)
}

pub const CIFAR_RECORD: usize = 1 + 3 * 32 * 32;

/// CIFAR-10 binary records, inputs shaped `(n, 3, 32, 32)` channel-major.
pub fn load_cifar_binary(path: &Path, limit: Option<usize>) -> Result<Batch> {
    check_limit(path, limit)?;
    let bytes = read_file(path)?;
    if bytes.is_empty() || bytes.len() % CIFAR_RECORD != 0 {
        return Err(HarnessError::format(
            path,
            format!("{} bytes is not a whole number of {CIFAR_RECORD}-byte records", bytes.len()),
        ));
    }
    let total = bytes.len() / CIFAR_RECORD;
    let n = limit.map_or(total, |l| l.min(total));
    let mut labels = Vec::with_capacity(n);
    let mut pixels = Vec::with_capacity(n * (CIFAR_RECORD - 1));
    for (i, rec) in bytes.chunks_exact(CIFAR_RECORD).take(n).enumerate() {
        if rec[0] > 9 {
            return Err(HarnessError::format(path, format!("label {} in record {i} is outside [0, 9]", rec[0])));
        }
        labels.push(rec[0] as usize);
        pixels.extend(rec[1..].iter().map(|&b| b as f64 / 255.0));
    }
    Ok(Batch::new(Tensor::new(vec![n, 3, 32, 32], pixels)?, Targets::Labels(labels))?)
}
