//! Reverse-mode gradients and Hessian-vector products against independent
//! finite-difference and closed-form oracles.

use perturbopt_core::model::Model;
use perturbopt_core::objective::hvp;
use perturbopt_core::{
    Activation, Batch, FullBatch, Layer, LossHead, ModelSpec, Quadratic, Targets, Tensor,
};

/// Central difference of the loss along coordinate `i`.
fn fd_grad(m: &Model, w: &[f64], b: &Batch, h: f64) -> Vec<f64> {
    let mut p = w.to_vec();
    (0..w.len())
        .map(|i| {
            p[i] = w[i] + h;
            let up = m.loss(&p, b).unwrap();
            p[i] = w[i] - h;
            let down = m.loss(&p, b).unwrap();
            p[i] = w[i];
            (up - down) / (2.0 * h)
        })
        .collect()
}

fn assert_matches_fd(m: &Model, w: &[f64], b: &Batch) {
    let (_, g) = m.loss_and_grad(w, b).unwrap();
    let fd = fd_grad(m, w, b, 1e-5);
    for (i, (a, e)) in g.iter().zip(&fd).enumerate() {
        let rel = (a - e).abs() / e.abs().max(1e-8);
        assert!(rel < 1e-5, "coordinate {i}: autodiff {a}, finite difference {e}, rel {rel}");
    }
}

fn inputs(n: usize, per: usize, phase: f64) -> Tensor {
    let x = (0..n * per).map(|i| ((i as f64) * 0.731 + phase).sin()).collect();
    let mut shape = vec![n];
    shape.push(per);
    Tensor::new(shape, x).unwrap()
}

#[test]
fn dense_tanh_cross_entropy() {
    let m = Model::new(ModelSpec::mlp(&[3, 5, 4, 3], Activation::Tanh, LossHead::SoftmaxCrossEntropy))
        .unwrap();
    let b = Batch::new(inputs(6, 3, 0.2), Targets::Labels(vec![0, 1, 2, 2, 1, 0])).unwrap();
    assert_matches_fd(&m, m.init_params(1).values(), &b);
}

#[test]
fn dense_relu_mse() {
    let m = Model::new(ModelSpec::mlp(&[2, 6, 2], Activation::Relu, LossHead::MeanSquaredError)).unwrap();
    let t = inputs(5, 2, 1.3);
    let b = Batch::new(inputs(5, 2, 0.4), Targets::Values(t)).unwrap();
    assert_matches_fd(&m, m.init_params(2).values(), &b);
}

fn conv_spec(head: LossHead) -> ModelSpec {
    ModelSpec {
        input: Some(vec![2, 5, 5]),
        layers: vec![
            Layer::Conv2d { in_ch: 2, out_ch: 3, kernel: 3, activation: Activation::Tanh, bias: true },
            Layer::Conv2d { in_ch: 3, out_ch: 2, kernel: 2, activation: Activation::Identity, bias: true },
            Layer::Flatten,
            Layer::Dense { input: 8, output: 3, activation: Activation::Identity, bias: true },
        ],
        loss_head: head,
    }
}

#[test]
fn conv_cross_entropy() {
    let m = Model::new(conv_spec(LossHead::SoftmaxCrossEntropy)).unwrap();
    let x = inputs(3, 50, 0.0);
    let x = Tensor::new(vec![3, 2, 5, 5], x.into_data()).unwrap();
    let b = Batch::new(x, Targets::Labels(vec![2, 0, 1])).unwrap();
    assert_matches_fd(&m, m.init_params(3).values(), &b);
}

#[test]
fn conv_mse() {
    let m = Model::new(conv_spec(LossHead::MeanSquaredError)).unwrap();
    let x = Tensor::new(vec![2, 2, 5, 5], inputs(2, 50, 0.9).into_data()).unwrap();
    let b = Batch::new(x, Targets::Values(inputs(2, 3, 2.0))).unwrap();
    assert_matches_fd(&m, m.init_params(4).values(), &b);
}

#[test]
fn duplicated_batch_gives_same_gradient() {
    let m = Model::new(ModelSpec::mlp(&[3, 4, 2], Activation::Tanh, LossHead::SoftmaxCrossEntropy)).unwrap();
    let b = Batch::new(inputs(4, 3, 0.5), Targets::Labels(vec![0, 1, 1, 0])).unwrap();
    let doubled = b.concat(&b).unwrap();
    let w = m.init_params(9);
    let (l1, g1) = m.loss_and_grad(w.values(), &b).unwrap();
    let (l2, g2) = m.loss_and_grad(w.values(), &doubled).unwrap();
    assert!((l1 - l2).abs() < 1e-15);
    for (a, c) in g1.iter().zip(&g2) {
        assert!((a - c).abs() < 1e-15);
    }
}

#[test]
fn forward_is_pure() {
    let m = Model::new(ModelSpec::mlp(&[3, 4, 2], Activation::Relu, LossHead::SoftmaxCrossEntropy)).unwrap();
    let b = Batch::new(inputs(4, 3, 0.5), Targets::Labels(vec![0, 1, 1, 0])).unwrap();
    let w = m.init_params(1);
    let a = m.loss(w.values(), &b).unwrap();
    let c = m.loss(w.values(), &b).unwrap();
    assert_eq!(a.to_bits(), c.to_bits());
    assert!(a >= 0.0);
}

#[test]
fn hvp_on_quadratic_is_matrix_action() {
    let q = Quadratic::rotated(&[4.0, 2.5, 1.0, 0.3, 0.01], 17);
    let w = [0.2, -1.0, 0.5, 3.0, -0.7];
    let v = [1.0, 0.5, -2.0, 0.1, 0.0];
    let got = hvp(&q, &w, &FullBatch, &v, 1e-4).unwrap();
    let want = q.apply(&v);
    for (a, b) in got.iter().zip(&want) {
        assert!((a - b).abs() < 1e-8, "{a} vs {b}");
    }
}

#[test]
fn hvp_linear_and_symmetric_on_network() {
    let m = Model::new(ModelSpec::mlp(&[3, 5, 3], Activation::Tanh, LossHead::SoftmaxCrossEntropy)).unwrap();
    let b = Batch::new(inputs(6, 3, 0.1), Targets::Labels(vec![0, 1, 2, 0, 1, 2])).unwrap();
    let w = m.init_params(6);
    let d = m.dim();
    let u: Vec<f64> = (0..d).map(|i| (i as f64 * 1.7).cos()).collect();
    let v: Vec<f64> = (0..d).map(|i| (i as f64 * 0.3 + 1.0).sin()).collect();
    let v2: Vec<f64> = v.iter().map(|x| 2.0 * x).collect();
    let h = 1e-4;
    let hv = hvp(&m, w.values(), &b, &v, h).unwrap();
    let hv2 = hvp(&m, w.values(), &b, &v2, h).unwrap();
    let hu = hvp(&m, w.values(), &b, &u, h).unwrap();
    let scale = hv.iter().fold(0.0f64, |a, x| a.max(x.abs()));
    for (a, c) in hv.iter().zip(&hv2) {
        assert!((2.0 * a - c).abs() <= 1e-9 * scale.max(1.0));
    }
    let vhu: f64 = v.iter().zip(&hu).map(|(a, b)| a * b).sum();
    let uhv: f64 = u.iter().zip(&hv).map(|(a, b)| a * b).sum();
    assert!((vhu - uhv).abs() <= 1e-6 * vhu.abs().max(uhv.abs()), "{vhu} vs {uhv}");
}
