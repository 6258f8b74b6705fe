mod common;

use common::grads::{composed_checks, primitive_checks, H, TOL};
use common::rand_tensor;
use geomsynth::nn::{activation, mean_log_prob, Activation};
use geomsynth::tensor::{grad_check, BackwardRule};
use geomsynth::Tensor;

#[test]
fn every_primitive_matches_finite_differences() {
    for (name, r) in primitive_checks() {
        assert!(r.pass, "{name}: {r:?}");
    }
}

#[test]
fn composed_losses_match_finite_differences() {
    let all = composed_checks();
    for (name, r) in &all {
        eprintln!("{name}: {r:?}");
    }
    for (name, r) in all {
        assert!(r.pass, "{name}: {r:?}");
        assert!(r.checked > 100, "{name} checked only {} elements", r.checked);
    }
}

#[test]
fn layer_activations_and_clamped_log() {
    for a in [Activation::Relu, Activation::TanhUnit, Activation::LeakyRelu { alpha: 0.2 }] {
        let r = grad_check(
            |g, v| {
                let y = activation(g, v[0], a)?;
                g.sum(y)
            },
            &[rand_tensor(1, &[3, 4])],
            H,
            TOL,
        )
        .unwrap();
        assert!(r.pass, "{a:?}: {r:?}");
    }
    let p = Tensor::new(&[4], vec![0.1, 0.4, 0.7, 0.95]).unwrap();
    for complement in [false, true] {
        let r = grad_check(|g, v| mean_log_prob(g, v[0], complement), &[p.clone()], H, TOL).unwrap();
        assert!(r.pass, "{r:?}");
    }
}

#[test]
fn tanh_gradient_at_zero_is_one() {
    let r = grad_check(
        |g, v| {
            let y = g.tanh(v[0])?;
            g.sum(y)
        },
        &[Tensor::zeros(&[1])],
        H,
        1e-8,
    )
    .unwrap();
    assert!(r.pass, "{r:?}");
    let mut g = geomsynth::Graph::new();
    let x = g.param(Tensor::zeros(&[1]));
    let y = g.tanh(x).unwrap();
    let s = g.sum(y).unwrap();
    g.backward(s).unwrap();
    assert_eq!(g.grad(x).unwrap(), &[1.0]);
}

/// Square with its backward rule scaled by two.
struct DoubledSquare;

impl BackwardRule for DoubledSquare {
    fn backward(&self, inputs: &[&Tensor], _: &Tensor, grad_out: &[f64]) -> Vec<Vec<f64>> {
        vec![inputs[0].data().iter().zip(grad_out).map(|(x, g)| 2.0 * 2.0 * x * g).collect()]
    }
}

#[test]
fn corrupted_backward_rule_is_caught() {
    let r = grad_check(
        |g, v| {
            let x = g.value(v[0]).clone();
            let sq = Tensor::new(x.shape(), x.data().iter().map(|a| a * a).collect())?;
            let y = g.custom(&[v[0]], sq, Box::new(DoubledSquare))?;
            g.sum(y)
        },
        &[rand_tensor(2, &[5])],
        H,
        TOL,
    )
    .unwrap();
    assert!(!r.pass);
    assert!((r.max_rel_err - 0.5).abs() < 1e-6, "{r:?}");
}
