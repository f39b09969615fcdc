//! Small feed-forward models: dense and valid-padding conv layers with exact
//! reverse-mode gradients.
//!
//! Parameters are stored layer by layer, weights first and then the bias.
//! Dense weights are row-major `(out, in)`; conv weights are
//! `(out_ch, in_ch, k, k)`.

use alloc::format;
use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::layout::{FilterLayout, ParamVector};
use crate::rng::{mix64, uniform01, DrawKey};
use crate::tensor::Tensor;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Tanh,
    #[default]
    Identity,
}

impl Activation {
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    z
                } else {
                    0.0
                }
            }
            Activation::Tanh => libm::tanh(z),
            Activation::Identity => z,
        }
    }

    /// Derivative given the pre-activation `z` and output `a`. ReLU uses 0 at 0.
    fn derivative(self, z: f64, a: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - a * a,
            Activation::Identity => 1.0,
        }
    }
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Layer {
    Dense {
        #[serde(rename = "in")]
        input: usize,
        #[serde(rename = "out")]
        output: usize,
        #[serde(default)]
        activation: Activation,
        #[serde(default = "yes")]
        bias: bool,
    },
    Conv2d {
        in_ch: usize,
        out_ch: usize,
        /// Square kernel side.
        kernel: usize,
        #[serde(default)]
        activation: Activation,
        #[serde(default = "yes")]
        bias: bool,
    },
    Flatten,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossHead {
    SoftmaxCrossEntropy,
    MeanSquaredError,
}

/// Declarative model description, serialized as
/// `{"input": [...], "layers": [...], "loss_head": "..."}`.
///
/// `input` is the per-example input shape. It may be omitted when the first
/// layer is dense.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub input: Option<Vec<usize>>,
    pub layers: Vec<Layer>,
    pub loss_head: LossHead,
}

impl ModelSpec {
    /// Dense MLP `sizes[0] -> sizes[1] -> ...` with `hidden` activation on every
    /// layer except the last, which is linear.
    pub fn mlp(sizes: &[usize], hidden: Activation, loss_head: LossHead) -> Self {
        let n = sizes.len();
        let layers = sizes
            .windows(2)
            .enumerate()
            .map(|(i, w)| Layer::Dense {
                input: w[0],
                output: w[1],
                activation: if i + 2 == n { Activation::Identity } else { hidden },
                bias: true,
            })
            .collect();
        Self { input: None, layers, loss_head }
    }
}

/// Regression or classification targets for a batch.
#[derive(Debug, Clone, PartialEq)]
pub enum Targets {
    Labels(Vec<usize>),
    /// `n × out` regression targets.
    Values(Tensor),
}

impl Targets {
    pub fn len(&self) -> usize {
        match self {
            Targets::Labels(l) => l.len(),
            Targets::Values(t) => t.rows(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn select(&self, indices: &[usize]) -> Self {
        match self {
            Targets::Labels(l) => Targets::Labels(indices.iter().map(|&i| l[i]).collect()),
            Targets::Values(t) => Targets::Values(t.select_rows(indices)),
        }
    }
}

/// Inputs and targets for `n ≥ 1` examples.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    inputs: Tensor,
    targets: Targets,
}

impl Batch {
    pub fn new(inputs: Tensor, targets: Targets) -> Result<Self> {
        let n = inputs.rows();
        if n == 0 || inputs.shape().len() < 2 {
            return Err(Error::Shape("batch needs n >= 1 examples with a leading axis".into()));
        }
        if targets.len() != n {
            return Err(Error::Shape(format!(
                "{} inputs but {} targets",
                n,
                targets.len()
            )));
        }
        Ok(Self { inputs, targets })
    }

    pub fn len(&self) -> usize {
        self.inputs.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn inputs(&self) -> &Tensor {
        &self.inputs
    }

    pub fn targets(&self) -> &Targets {
        &self.targets
    }

    pub fn labels(&self) -> Option<&[usize]> {
        match &self.targets {
            Targets::Labels(l) => Some(l),
            Targets::Values(_) => None,
        }
    }

    /// Sub-batch in the given example order. Panics on out-of-range indices.
    pub fn select(&self, indices: &[usize]) -> Result<Self> {
        Self::new(self.inputs.select_rows(indices), self.targets.select(indices))
    }

    /// Consecutive chunks of `size` examples; `size` must divide the batch.
    pub fn chunks(&self, size: usize) -> Result<Vec<Self>> {
        let n = self.len();
        if size == 0 || !n.is_multiple_of(size) {
            return Err(Error::InvalidConfig(format!(
                "chunk size {size} does not divide batch size {n}"
            )));
        }
        (0..n / size)
            .map(|c| {
                let idx: Vec<usize> = (c * size..(c + 1) * size).collect();
                self.select(&idx)
            })
            .collect()
    }

    /// Concatenates two batches with compatible shapes.
    pub fn concat(&self, other: &Self) -> Result<Self> {
        if self.inputs.shape()[1..] != other.inputs.shape()[1..] {
            return Err(Error::Shape("cannot concatenate batches of different shapes".into()));
        }
        let mut shape = self.inputs.shape().to_vec();
        shape[0] += other.len();
        let mut data = self.inputs.data().to_vec();
        data.extend_from_slice(other.inputs.data());
        let targets = match (&self.targets, &other.targets) {
            (Targets::Labels(a), Targets::Labels(b)) => {
                Targets::Labels(a.iter().chain(b).copied().collect())
            }
            (Targets::Values(a), Targets::Values(b)) => {
                let mut s = a.shape().to_vec();
                s[0] += b.rows();
                let mut d = a.data().to_vec();
                d.extend_from_slice(b.data());
                Targets::Values(Tensor::new(s, d)?)
            }
            _ => return Err(Error::Shape("mixed target kinds".into())),
        };
        Self::new(Tensor::new(shape, data)?, targets)
    }
}

#[derive(Debug, Clone)]
enum Op {
    Dense { input: usize, output: usize },
    Conv { in_ch: usize, out_ch: usize, k: usize, h: usize, w: usize },
    Flatten,
}

#[derive(Debug, Clone)]
struct Stage {
    op: Op,
    activation: Activation,
    w_off: usize,
    w_len: usize,
    bias_off: Option<usize>,
    out_len: usize,
    fan_in: usize,
    fan_out: usize,
}

/// A validated [`ModelSpec`] with its parameter layout.
#[derive(Debug, Clone)]
pub struct Model {
    spec: ModelSpec,
    stages: Vec<Stage>,
    layout: Arc<FilterLayout>,
    input_len: usize,
    output_dim: usize,
}

impl Model {
    pub fn new(spec: ModelSpec) -> Result<Self> {
        if spec.layers.is_empty() {
            return Err(Error::InvalidModel("model needs at least one layer".into()));
        }
        let mut shape = match (&spec.input, &spec.layers[0]) {
            (Some(s), _) => s.clone(),
            (None, Layer::Dense { input, .. }) => vec![*input],
            (None, _) => {
                return Err(Error::InvalidModel(
                    "input shape is required when the first layer is not dense".into(),
                ))
            }
        };
        if shape.is_empty() || shape.contains(&0) {
            return Err(Error::InvalidModel(format!("bad input shape {shape:?}")));
        }
        let input_len = shape.iter().product();
        let mut stages = Vec::new();
        let mut groups = Vec::new();
        let mut off = 0usize;
        for (i, layer) in spec.layers.iter().enumerate() {
            let stage = match *layer {
                Layer::Dense { input, output, activation, bias } => {
                    if shape.len() != 1 || shape[0] != input {
                        return Err(Error::InvalidModel(format!(
                            "layer {i}: dense expects [{input}], got {shape:?}"
                        )));
                    }
                    if output == 0 {
                        return Err(Error::InvalidModel(format!("layer {i}: zero outputs")));
                    }
                    for r in 0..output {
                        groups.push((off + r * input, input));
                    }
                    let w_off = off;
                    off += input * output;
                    let bias_off = bias.then(|| {
                        groups.push((off, output));
                        off += output;
                        off - output
                    });
                    shape = vec![output];
                    Stage {
                        op: Op::Dense { input, output },
                        activation,
                        w_off,
                        w_len: input * output,
                        bias_off,
                        out_len: output,
                        fan_in: input,
                        fan_out: output,
                    }
                }
                Layer::Conv2d { in_ch, out_ch, kernel: k, activation, bias } => {
                    if shape.len() != 3 || shape[0] != in_ch || shape[1] < k || shape[2] < k {
                        return Err(Error::InvalidModel(format!(
                            "layer {i}: conv2d expects [{in_ch}, >={k}, >={k}], got {shape:?}"
                        )));
                    }
                    if out_ch == 0 || k == 0 {
                        return Err(Error::InvalidModel(format!("layer {i}: empty conv")));
                    }
                    let (h, w) = (shape[1], shape[2]);
                    let flen = in_ch * k * k;
                    for f in 0..out_ch {
                        groups.push((off + f * flen, flen));
                    }
                    let w_off = off;
                    off += out_ch * flen;
                    let bias_off = bias.then(|| {
                        groups.push((off, out_ch));
                        off += out_ch;
                        off - out_ch
                    });
                    shape = vec![out_ch, h - k + 1, w - k + 1];
                    Stage {
                        op: Op::Conv { in_ch, out_ch, k, h, w },
                        activation,
                        w_off,
                        w_len: out_ch * flen,
                        bias_off,
                        out_len: shape.iter().product(),
                        fan_in: flen,
                        fan_out: out_ch * k * k,
                    }
                }
                Layer::Flatten => {
                    let n = shape.iter().product();
                    shape = vec![n];
                    Stage {
                        op: Op::Flatten,
                        activation: Activation::Identity,
                        w_off: off,
                        w_len: 0,
                        bias_off: None,
                        out_len: n,
                        fan_in: 0,
                        fan_out: 0,
                    }
                }
            };
            stages.push(stage);
        }
        if shape.len() != 1 {
            return Err(Error::InvalidModel(format!(
                "model output must be a vector, got shape {shape:?}"
            )));
        }
        if groups.is_empty() {
            return Err(Error::InvalidModel("model has no parameters".into()));
        }
        let layout = Arc::new(FilterLayout::new(groups)?);
        Ok(Self { spec, stages, layout, input_len, output_dim: shape[0] })
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn layout(&self) -> &Arc<FilterLayout> {
        &self.layout
    }

    pub fn dim(&self) -> usize {
        self.layout.total_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.output_dim
    }

    pub fn input_len(&self) -> usize {
        self.input_len
    }

    /// Glorot-uniform weights, zero biases. Layer `i` draws from its own
    /// substream of the seed.
    pub fn init_params(&self, seed: u64) -> ParamVector {
        let mut values = vec![0.0; self.dim()];
        let key = DrawKey::from_raw(mix64(seed));
        for (i, st) in self.stages.iter().enumerate() {
            if st.w_len == 0 {
                continue;
            }
            let a = libm::sqrt(6.0 / (st.fan_in + st.fan_out) as f64);
            let mut rng = key.rng(i as u64);
            for v in &mut values[st.w_off..st.w_off + st.w_len] {
                // open interval (0, 1) keeps draws strictly inside (-a, a)
                let u = uniform01(&mut rng) + 0.5 / (1u64 << 53) as f64;
                *v = a * (2.0 * u - 1.0);
            }
        }
        ParamVector::new(values, self.layout.clone()).expect("layout length")
    }

    fn check(&self, w: &[f64], batch: &Batch) -> Result<()> {
        self.layout.check(w.len())?;
        if batch.inputs.row_len() != self.input_len {
            return Err(Error::Shape(format!(
                "model expects {} input values per example, batch has {}",
                self.input_len,
                batch.inputs.row_len()
            )));
        }
        match (&batch.targets, self.spec.loss_head) {
            (Targets::Labels(l), LossHead::SoftmaxCrossEntropy) => {
                if let Some(&bad) = l.iter().find(|&&y| y >= self.output_dim) {
                    return Err(Error::Shape(format!(
                        "label {bad} outside [0, {})",
                        self.output_dim
                    )));
                }
            }
            (Targets::Values(t), LossHead::MeanSquaredError) => {
                if t.row_len() != self.output_dim {
                    return Err(Error::Shape(format!(
                        "targets have {} values per example, model outputs {}",
                        t.row_len(),
                        self.output_dim
                    )));
                }
            }
            _ => return Err(Error::Shape("target kind does not match loss head".into())),
        }
        Ok(())
    }

    /// Forward pass for one example. Returns pre-activations and activations
    /// for every stage; `acts[0]` is the input.
    fn forward(&self, w: &[f64], x: &[f64]) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
        let mut pre = Vec::with_capacity(self.stages.len());
        let mut acts = Vec::with_capacity(self.stages.len() + 1);
        acts.push(x.to_vec());
        for st in &self.stages {
            let prev = acts.last().expect("input present");
            let mut z = vec![0.0; st.out_len];
            match st.op {
                Op::Dense { input, output } => {
                    let wm = &w[st.w_off..st.w_off + st.w_len];
                    for (o, zo) in z.iter_mut().enumerate().take(output) {
                        let row = &wm[o * input..(o + 1) * input];
                        *zo = crate::dot(row, prev);
                    }
                }
                Op::Conv { in_ch, out_ch, k, h, w: wd } => {
                    let (oh, ow) = (h - k + 1, wd - k + 1);
                    let flen = in_ch * k * k;
                    for f in 0..out_ch {
                        let filt = &w[st.w_off + f * flen..st.w_off + (f + 1) * flen];
                        for i in 0..oh {
                            for j in 0..ow {
                                let mut s = 0.0;
                                for c in 0..in_ch {
                                    for p in 0..k {
                                        let xr = &prev[c * h * wd + (i + p) * wd + j..][..k];
                                        let fr = &filt[c * k * k + p * k..][..k];
                                        s += crate::dot(fr, xr);
                                    }
                                }
                                z[f * oh * ow + i * ow + j] = s;
                            }
                        }
                    }
                }
                Op::Flatten => z.copy_from_slice(prev),
            }
            if let Some(b) = st.bias_off {
                let per = st.out_len / self.bias_len(st);
                for (idx, zi) in z.iter_mut().enumerate() {
                    *zi += w[b + idx / per];
                }
            }
            let a: Vec<f64> = z.iter().map(|&v| st.activation.apply(v)).collect();
            pre.push(z);
            acts.push(a);
        }
        (pre, acts)
    }

    fn bias_len(&self, st: &Stage) -> usize {
        match st.op {
            Op::Dense { output, .. } => output,
            Op::Conv { out_ch, .. } => out_ch,
            Op::Flatten => st.out_len,
        }
    }

    /// Per-example loss and its gradient with respect to the model output.
    fn head(&self, out: &[f64], batch: &Batch, i: usize) -> (f64, Vec<f64>) {
        match &batch.targets {
            Targets::Labels(l) => {
                let y = l[i];
                let m = out.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let exps: Vec<f64> = out.iter().map(|&v| libm::exp(v - m)).collect();
                let s: f64 = exps.iter().sum();
                let loss = libm::log(s) + m - out[y];
                let mut d: Vec<f64> = exps.iter().map(|e| e / s).collect();
                d[y] -= 1.0;
                (loss, d)
            }
            Targets::Values(t) => {
                let tr = t.row(i);
                let d: Vec<f64> = out.iter().zip(tr).map(|(a, b)| a - b).collect();
                (0.5 * crate::dot(&d, &d), d)
            }
        }
    }

    /// Mean per-example loss.
    pub fn loss(&self, w: &[f64], batch: &Batch) -> Result<f64> {
        self.check(w, batch)?;
        let n = batch.len();
        let mut total = 0.0;
        for i in 0..n {
            let (_, acts) = self.forward(w, batch.inputs.row(i));
            total += self.head(acts.last().expect("output"), batch, i).0;
        }
        Ok(total / n as f64)
    }

    /// Mean loss and its exact gradient by reverse-mode accumulation.
    pub fn loss_and_grad(&self, w: &[f64], batch: &Batch) -> Result<(f64, Vec<f64>)> {
        self.check(w, batch)?;
        let n = batch.len();
        let mut grad = vec![0.0; w.len()];
        let mut total = 0.0;
        for i in 0..n {
            let (pre, acts) = self.forward(w, batch.inputs.row(i));
            let (l, mut delta) = self.head(acts.last().expect("output"), batch, i);
            total += l;
            for (s, st) in self.stages.iter().enumerate().rev() {
                let z = &pre[s];
                let a = &acts[s + 1];
                let prev = &acts[s];
                let dz: Vec<f64> = delta
                    .iter()
                    .zip(z.iter().zip(a))
                    .map(|(d, (&zv, &av))| d * st.activation.derivative(zv, av))
                    .collect();
                if let Some(b) = st.bias_off {
                    let per = st.out_len / self.bias_len(st);
                    for (idx, d) in dz.iter().enumerate() {
                        grad[b + idx / per] += d;
                    }
                }
                let mut dprev = vec![0.0; prev.len()];
                match st.op {
                    Op::Dense { input, .. } => {
                        let wm = &w[st.w_off..st.w_off + st.w_len];
                        let gm = &mut grad[st.w_off..st.w_off + st.w_len];
                        for (o, &d) in dz.iter().enumerate() {
                            if d == 0.0 {
                                continue;
                            }
                            let row = &wm[o * input..(o + 1) * input];
                            let grow = &mut gm[o * input..(o + 1) * input];
                            for c in 0..input {
                                grow[c] += d * prev[c];
                                dprev[c] += d * row[c];
                            }
                        }
                    }
                    Op::Conv { in_ch, out_ch, k, h, w: wd } => {
                        let (oh, ow) = (h - k + 1, wd - k + 1);
                        let flen = in_ch * k * k;
                        for f in 0..out_ch {
                            let base = st.w_off + f * flen;
                            for i in 0..oh {
                                for j in 0..ow {
                                    let d = dz[f * oh * ow + i * ow + j];
                                    if d == 0.0 {
                                        continue;
                                    }
                                    for c in 0..in_ch {
                                        for p in 0..k {
                                            for q in 0..k {
                                                let xi = c * h * wd + (i + p) * wd + j + q;
                                                let wi = base + c * k * k + p * k + q;
                                                grad[wi] += d * prev[xi];
                                                dprev[xi] += d * w[wi];
                                            }
                                        }
                                    }
                                }
                            }
                        }
                    }
                    Op::Flatten => dprev.copy_from_slice(&dz),
                }
                delta = dprev;
            }
        }
        let inv = 1.0 / n as f64;
        grad.iter_mut().for_each(|g| *g *= inv);
        Ok((total * inv, grad))
    }

    /// Raw model outputs (logits for classification) for every example.
    pub fn predict(&self, w: &[f64], inputs: &Tensor) -> Result<Vec<Vec<f64>>> {
        self.layout.check(w.len())?;
        if inputs.row_len() != self.input_len {
            return Err(Error::Shape(format!(
                "model expects {} input values per example, got {}",
                self.input_len,
                inputs.row_len()
            )));
        }
        Ok((0..inputs.rows())
            .map(|i| self.forward(w, inputs.row(i)).1.pop().expect("output"))
            .collect())
    }

    /// Fraction of examples whose argmax output equals the label. Ties go to
    /// the lowest class index.
    pub fn accuracy(&self, w: &[f64], batch: &Batch) -> Result<f64> {
        if self.spec.loss_head != LossHead::SoftmaxCrossEntropy {
            return Err(Error::NotClassification);
        }
        self.check(w, batch)?;
        let labels = batch.labels().ok_or(Error::NotClassification)?;
        let outs = self.predict(w, &batch.inputs)?;
        let correct = outs
            .iter()
            .zip(labels)
            .filter(|(o, &y)| argmax(o) == y)
            .count();
        Ok(correct as f64 / batch.len() as f64)
    }
}

/// Index of the largest value, lowest index on ties.
pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate().skip(1) {
        if x > v[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dense(input: usize, output: usize, bias: bool) -> Layer {
        Layer::Dense { input, output, activation: Activation::Identity, bias }
    }

    #[test]
    fn dense_layout_groups() {
        let m = Model::new(ModelSpec {
            input: None,
            layers: vec![dense(2, 3, true)],
            loss_head: LossHead::MeanSquaredError,
        })
        .unwrap();
        let l = m.layout();
        assert_eq!(l.k(), 4);
        assert_eq!(l.groups(), &[(0, 2), (2, 2), (4, 2), (6, 3)]);
        assert_eq!(l.total_dim(), 9);
    }

    #[test]
    fn conv_layout_groups() {
        let m = Model::new(ModelSpec {
            input: Some(vec![1, 3, 3]),
            layers: vec![
                Layer::Conv2d {
                    in_ch: 1,
                    out_ch: 2,
                    kernel: 3,
                    activation: Activation::Relu,
                    bias: true,
                },
                Layer::Flatten,
            ],
            loss_head: LossHead::SoftmaxCrossEntropy,
        })
        .unwrap();
        assert_eq!(m.layout().groups(), &[(0, 9), (9, 9), (18, 2)]);
        assert_eq!(m.output_dim(), 2);
    }

    #[test]
    fn single_weight_layout() {
        let m = Model::new(ModelSpec {
            input: None,
            layers: vec![dense(1, 1, false)],
            loss_head: LossHead::MeanSquaredError,
        })
        .unwrap();
        assert_eq!(m.layout().k(), 1);
        assert_eq!(m.dim(), 1);
    }

    #[test]
    fn rejects_bad_models() {
        let empty = ModelSpec { input: None, layers: vec![], loss_head: LossHead::MeanSquaredError };
        assert!(Model::new(empty).is_err());
        let mismatched = ModelSpec {
            input: None,
            layers: vec![dense(2, 3, true), dense(4, 1, true)],
            loss_head: LossHead::MeanSquaredError,
        };
        assert!(Model::new(mismatched).is_err());
        let conv_no_flatten = ModelSpec {
            input: Some(vec![1, 4, 4]),
            layers: vec![Layer::Conv2d {
                in_ch: 1,
                out_ch: 1,
                kernel: 3,
                activation: Activation::Relu,
                bias: false,
            }],
            loss_head: LossHead::MeanSquaredError,
        };
        assert!(Model::new(conv_no_flatten).is_err());
    }

    #[test]
    fn init_is_deterministic_with_zero_bias() {
        let m = Model::new(ModelSpec::mlp(&[4, 4, 2], Activation::Tanh, LossHead::SoftmaxCrossEntropy))
            .unwrap();
        let a = m.init_params(5);
        let b = m.init_params(5);
        assert_eq!(a, b);
        assert_ne!(a, m.init_params(6));
        let bound = libm::sqrt(6.0 / 8.0);
        for (j, r) in m.layout().ranges().enumerate() {
            let is_bias = j == 4 || j == 7;
            for &v in &a.values()[r] {
                if is_bias {
                    assert_eq!(v, 0.0);
                } else if j < 4 {
                    assert!(v > -bound && v < bound);
                }
            }
        }
    }

    #[test]
    fn uniform_logits_give_log_c() {
        let m = Model::new(ModelSpec {
            input: None,
            layers: vec![dense(3, 5, true)],
            loss_head: LossHead::SoftmaxCrossEntropy,
        })
        .unwrap();
        let w = vec![0.0; m.dim()];
        let batch = Batch::new(
            Tensor::new(vec![2, 3], vec![1., 2., 3., -1., 0., 4.]).unwrap(),
            Targets::Labels(vec![0, 4]),
        )
        .unwrap();
        let l = m.loss(&w, &batch).unwrap();
        assert!((l - libm::log(5.0)).abs() < 1e-15);
    }

    #[test]
    fn mse_exact_prediction_is_zero() {
        let m = Model::new(ModelSpec {
            input: None,
            layers: vec![dense(1, 1, false)],
            loss_head: LossHead::MeanSquaredError,
        })
        .unwrap();
        let batch = Batch::new(
            Tensor::new(vec![1, 1], vec![2.0]).unwrap(),
            Targets::Values(Tensor::new(vec![1, 1], vec![6.0]).unwrap()),
        )
        .unwrap();
        assert_eq!(m.loss(&[3.0], &batch).unwrap(), 0.0);
    }

    #[test]
    fn two_class_linear_matches_scalar_evaluation() {
        let m = Model::new(ModelSpec {
            input: None,
            layers: vec![dense(2, 2, true)],
            loss_head: LossHead::SoftmaxCrossEntropy,
        })
        .unwrap();
        let w = [0.5, -1.0, 2.0, 0.25, 0.1, -0.3];
        let x = [1.5, -2.0];
        let batch =
            Batch::new(Tensor::new(vec![1, 2], x.to_vec()).unwrap(), Targets::Labels(vec![1]))
                .unwrap();
        // logits by hand: z0 = 0.75 + 2 + 0.1, z1 = 3 - 0.5 - 0.3
        let z0: f64 = 2.85;
        let z1: f64 = 2.2;
        let expected = -(z1.exp() / (z0.exp() + z1.exp())).ln();
        assert!((m.loss(&w, &batch).unwrap() - expected).abs() < 1e-14);
    }

    #[test]
    fn zero_linear_model_has_zero_gradient() {
        let m = Model::new(ModelSpec {
            input: None,
            layers: vec![dense(2, 1, true)],
            loss_head: LossHead::MeanSquaredError,
        })
        .unwrap();
        let batch = Batch::new(
            Tensor::zeros(vec![1, 2]),
            Targets::Values(Tensor::zeros(vec![1, 1])),
        )
        .unwrap();
        let (l, g) = m.loss_and_grad(&[0.0; 3], &batch).unwrap();
        assert_eq!(l, 0.0);
        assert!(g.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn accuracy_counts_and_tie_break() {
        let m = Model::new(ModelSpec {
            input: None,
            layers: vec![dense(1, 3, false)],
            loss_head: LossHead::SoftmaxCrossEntropy,
        })
        .unwrap();
        let inputs = Tensor::new(vec![3, 1], vec![1.0, 1.0, 1.0]).unwrap();
        // weights: class scores (0.1, 0.5, 0.2) for input 1 -> argmax 1
        let w = [0.1, 0.5, 0.2];
        let b = Batch::new(inputs.clone(), Targets::Labels(vec![1, 1, 0])).unwrap();
        assert!((m.accuracy(&w, &b).unwrap() - 2.0 / 3.0).abs() < 1e-15);
        let all = Batch::new(inputs.clone(), Targets::Labels(vec![1, 1, 1])).unwrap();
        assert_eq!(m.accuracy(&w, &all).unwrap(), 1.0);
        let ties = Batch::new(inputs, Targets::Labels(vec![0, 0, 0])).unwrap();
        assert_eq!(m.accuracy(&[0.0; 3], &ties).unwrap(), 1.0);
    }

    #[test]
    fn accuracy_rejects_regression_head() {
        let m = Model::new(ModelSpec {
            input: None,
            layers: vec![dense(1, 1, false)],
            loss_head: LossHead::MeanSquaredError,
        })
        .unwrap();
        let b = Batch::new(
            Tensor::zeros(vec![1, 1]),
            Targets::Values(Tensor::zeros(vec![1, 1])),
        )
        .unwrap();
        assert_eq!(m.accuracy(&[1.0], &b), Err(Error::NotClassification));
    }

    #[test]
    fn rejects_dimension_mismatch_and_bad_labels() {
        let m = Model::new(ModelSpec::mlp(&[2, 2], Activation::Identity, LossHead::SoftmaxCrossEntropy))
            .unwrap();
        let w = vec![0.0; m.dim()];
        let wide = Batch::new(Tensor::zeros(vec![1, 3]), Targets::Labels(vec![0])).unwrap();
        assert!(m.loss(&w, &wide).is_err());
        let bad = Batch::new(Tensor::zeros(vec![1, 2]), Targets::Labels(vec![2])).unwrap();
        assert!(m.loss(&w, &bad).is_err());
        assert!(m.loss(&w[..3], &Batch::new(Tensor::zeros(vec![1, 2]), Targets::Labels(vec![0])).unwrap()).is_err());
    }

    #[test]
    fn batch_chunks_and_concat() {
        let b = Batch::new(
            Tensor::new(vec![4, 1], vec![0., 1., 2., 3.]).unwrap(),
            Targets::Labels(vec![0, 1, 0, 1]),
        )
        .unwrap();
        let c = b.chunks(2).unwrap();
        assert_eq!(c.len(), 2);
        assert_eq!(c[1].inputs().data(), &[2., 3.]);
        assert!(b.chunks(3).is_err());
        assert_eq!(c[0].concat(&c[1]).unwrap(), b);
    }
}
