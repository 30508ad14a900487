//! Shared test support: finite-difference gradient checking and small
//! independent oracles. Used by the unit and acceptance suites only; nothing
//! here is part of the production pipeline.

use rand::Rng;
use rand_chacha::ChaCha12Rng;

use crate::autodiff::{Tape, Var};
use crate::tensor::Tensor;

pub fn random_tensor(shape: &[usize], rng: &mut ChaCha12Rng) -> Tensor {
    let n: usize = shape.iter().product();
    Tensor::new(
        shape.to_vec(),
        (0..n).map(|_| rng.random_range(-1.0..1.0)).collect(),
    )
    .expect("random tensor")
}

/// Central finite differences with step h.
pub fn finite_difference_grad<F>(leaves: &[Tensor], which: usize, f: F, h: f64) -> Tensor
where
    F: Fn(&[Tensor]) -> f64,
{
    let mut grad = Tensor::zeros(leaves[which].shape());
    for i in 0..leaves[which].numel() {
        let mut plus = leaves.to_vec();
        plus[which].data_mut()[i] += h;
        let mut minus = leaves.to_vec();
        minus[which].data_mut()[i] -= h;
        grad.data_mut()[i] = (f(&plus) - f(&minus)) / (2.0 * h);
    }
    grad
}

/// Relative-error comparison with an absolute floor for near-zero gradients.
pub fn grad_close(analytic: f64, numeric: f64, rel_tol: f64) -> bool {
    let denom = analytic.abs().max(numeric.abs());
    if denom < 1e-7 {
        return (analytic - numeric).abs() < 1e-7;
    }
    (analytic - numeric).abs() / denom < rel_tol
}

/// Pair-counting Mann-Whitney AUC: the fraction of (positive, negative)
/// pairs where the positive outscores the negative, ties counted half.
/// O(n^2) oracle for the trapezoidal ROC implementation.
pub fn mann_whitney_auc(scores: &[f64], labels: &[usize]) -> f64 {
    let mut concordant = 0.0;
    let mut pairs = 0.0;
    for (i, &si) in scores.iter().enumerate() {
        if labels[i] != 1 {
            continue;
        }
        for (j, &sj) in scores.iter().enumerate() {
            if labels[j] != 0 {
                continue;
            }
            pairs += 1.0;
            if si > sj {
                concordant += 1.0;
            } else if si == sj {
                concordant += 0.5;
            }
        }
    }
    concordant / pairs
}

/// Build a scalar graph from `leaves`, then check every analytic leaf
/// gradient against central finite differences (h = 1e-5, relative error
/// below 1e-4). Panics with context on the first mismatch.
pub fn finite_difference_check<F>(leaves: &[Tensor], build: F)
where
    F: for<'t> Fn(&'t Tape, &[Var<'t>]) -> Var<'t>,
{
    let tape = Tape::new();
    let vars: Vec<Var> = leaves.iter().map(|t| tape.leaf(t.clone())).collect();
    let loss = build(&tape, &vars);
    let grads = tape.backward(loss).expect("backward");

    let eval = |tensors: &[Tensor]| -> f64 {
        let tape = Tape::new();
        let vars: Vec<Var> = tensors.iter().map(|t| tape.leaf(t.clone())).collect();
        build(&tape, &vars).value().scalar_value()
    };

    for (which, leaf) in leaves.iter().enumerate() {
        let analytic = grads.get_or_zeros(vars[which]);
        let numeric = finite_difference_grad(leaves, which, eval, 1e-5);
        for i in 0..leaf.numel() {
            let a = analytic.data()[i];
            let n = numeric.data()[i];
            assert!(
                grad_close(a, n, 1e-4),
                "leaf {which} element {i}: analytic {a} vs finite-difference {n}"
            );
        }
    }
}
