//! Central finite-difference oracle for gradient rules.
//!
//! Runs the computation twice per input element with ±h perturbations and
//! compares the slope to the tape gradient. Always in f64: with h = 1e-4 the
//! truncation error sits far below the 1e-4 acceptance tolerance.

use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

pub const FD_STEP: f64 = 1e-4;
pub const FD_TOLERANCE: f64 = 1e-4;

/// Max relative disagreement between tape gradients and finite differences
/// over all elements of all inputs.
///
/// `f` must build a scalar loss from the given leaves (plus whatever
/// constants it captures).
pub fn finite_diff_max_rel_err<F>(inputs: &[Tensor<f64>], f: F) -> f64
where
    F: Fn(&Tape<f64>, &[Var<f64>]) -> Var<f64>,
{
    let tape = Tape::<f64>::new();
    let leaves: Vec<Var<f64>> = inputs
        .iter()
        .map(|t| tape.leaf(t.clone(), true))
        .collect();
    let loss = f(&tape, &leaves);
    assert!(
        loss.value().is_scalar(),
        "gradcheck loss must be scalar, got {:?}",
        loss.value().shape()
    );
    let grads = tape.backward(&loss).expect("backward");
    let analytic: Vec<Tensor<f64>> = leaves.iter().map(|l| grads.get_or_zeros(l)).collect();

    let eval = |perturbed: &[Tensor<f64>]| -> f64 {
        let tape = Tape::<f64>::inference();
        let leaves: Vec<Var<f64>> = perturbed
            .iter()
            .map(|t| tape.leaf(t.clone(), false))
            .collect();
        f(&tape, &leaves).value().item()
    };

    let mut worst = 0.0f64;
    for (which, input) in inputs.iter().enumerate() {
        for idx in 0..input.numel() {
            let mut plus: Vec<Tensor<f64>> = inputs.to_vec();
            let mut minus: Vec<Tensor<f64>> = inputs.to_vec();
            let mut pd = input.data().to_vec();
            pd[idx] += FD_STEP;
            plus[which] = Tensor::from_vec(input.shape().to_vec(), pd).unwrap();
            let mut md = input.data().to_vec();
            md[idx] -= FD_STEP;
            minus[which] = Tensor::from_vec(input.shape().to_vec(), md).unwrap();
            let fd = (eval(&plus) - eval(&minus)) / (2.0 * FD_STEP);
            let a = analytic[which].data()[idx];
            let rel = (a - fd).abs() / (a.abs() + fd.abs()).max(1e-6);
            if rel > worst {
                worst = rel;
            }
        }
    }
    worst
}

/// Assert helper used across the op test suites.
pub fn assert_gradcheck<F>(inputs: &[Tensor<f64>], f: F)
where
    F: Fn(&Tape<f64>, &[Var<f64>]) -> Var<f64>,
{
    let err = finite_diff_max_rel_err(inputs, f);
    assert!(
        err < FD_TOLERANCE,
        "finite-difference check failed: max rel err {err:.3e} >= {FD_TOLERANCE:e}"
    );
}
