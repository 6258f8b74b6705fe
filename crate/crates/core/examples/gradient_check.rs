//! Finite-difference check of a small conv stack and of a custom op whose
//! backward rule is deliberately wrong.
//!
//! cargo run --release --example gradient_check

use geomsynth::rng::{normal_vec, rng_for};
use geomsynth::tensor::{grad_check, BackwardRule};
use geomsynth::{Graph, Result, Tensor, Var};

fn rand(seed: u64, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape, normal_vec(&mut rng_for(seed, "example"), n)).unwrap()
}

fn conv_stack(g: &mut Graph, v: &[Var]) -> Result<Var> {
    let h = g.conv2d(v[0], v[1], v[2], 2, 1)?;
    let h = g.leaky_relu(h, 0.2)?;
    let y = g.conv_transpose2d(h, v[3], v[4], 2, 1)?;
    let y = g.tanh(y)?;
    let y = g.mul(y, y)?;
    g.mean(y, None)
}

/// `x²` with a backward rule that is off by a factor of two.
struct BuggySquare;

impl BackwardRule for BuggySquare {
    fn backward(&self, inputs: &[&Tensor], _: &Tensor, grad_out: &[f64]) -> Vec<Vec<f64>> {
        vec![inputs[0].data().iter().zip(grad_out).map(|(x, g)| 4.0 * x * g).collect()]
    }
}

fn main() -> Result<()> {
    let params = [
        rand(1, &[2, 1, 8, 8]),
        rand(2, &[3, 1, 4, 4]),
        rand(3, &[3]),
        rand(4, &[3, 1, 4, 4]),
        rand(5, &[1]),
    ];
    let report = grad_check(conv_stack, &params, 1e-5, 1e-4)?;
    println!(
        "conv -> leaky -> conv_transpose: {} elements, max relative error {:.2e}, pass {}",
        report.checked, report.max_rel_err, report.pass
    );

    let x = [rand(6, &[4, 4])];
    let report = grad_check(
        |g, v| {
            let x = g.value(v[0]).clone();
            let sq = Tensor::new(x.shape(), x.data().iter().map(|a| a * a).collect())?;
            let y = g.custom(&[v[0]], sq, Box::new(BuggySquare))?;
            g.sum(y)
        },
        &x,
        1e-5,
        1e-4,
    )?;
    println!(
        "custom square with a wrong backward rule: max relative error {:.2e}, pass {}",
        report.max_rel_err, report.pass
    );
    Ok(())
}
