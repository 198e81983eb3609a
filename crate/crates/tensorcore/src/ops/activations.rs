//! Pointwise nonlinearities, softmax, and the classification loss.

use crate::element::{el, Element};
use crate::error::{arg_err, shape_err, Result};
use crate::tape::Var;
use crate::tensor::Tensor;

#[inline]
fn sigmoid_scalar<E: Element>(x: E) -> E {
    E::ONE / (E::ONE + (-x).exp())
}

pub fn sigmoid<E: Element>(x: &Var<E>) -> Result<Var<E>> {
    let out = x.value().map(sigmoid_scalar);
    let y = out.clone();
    Ok(x.tape().record(
        &[x],
        out,
        Box::new(move |g, needs| {
            vec![needs[0].then(|| {
                g.zip_map(&y, |gi, yi| gi * yi * (E::ONE - yi)).expect("same shape")
            })]
        }),
    ))
}

/// `x * sigmoid(x)`.
pub fn silu<E: Element>(x: &Var<E>) -> Result<Var<E>> {
    let xv = x.tensor();
    let out = xv.map(|v| v * sigmoid_scalar(v));
    Ok(x.tape().record(
        &[x],
        out,
        Box::new(move |g, needs| {
            vec![needs[0].then(|| {
                g.zip_map(&xv, |gi, v| {
                    let s = sigmoid_scalar(v);
                    gi * (s + v * s * (E::ONE - s))
                })
                .expect("same shape")
            })]
        }),
    ))
}

/// Softmax over the last axis, max-subtracted for stability.
pub fn softmax_last<E: Element>(x: &Var<E>) -> Result<Var<E>> {
    let xs = x.shape().to_vec();
    let d = *xs.last().unwrap_or(&0);
    if d == 0 {
        return shape_err("softmax_last", format!("x {:?}", xs));
    }
    let rows = x.value().numel() / d;
    let xd = x.value().data();
    let mut out = vec![E::ZERO; xd.len()];
    for r in 0..rows {
        let row = &xd[r * d..(r + 1) * d];
        let mut mx = row[0];
        for &v in row.iter().skip(1) {
            mx = mx.maximum(v);
        }
        let dst = &mut out[r * d..(r + 1) * d];
        let mut sum = E::ZERO;
        for (o, &v) in dst.iter_mut().zip(row) {
            let e = (v - mx).exp();
            *o = e;
            sum += e;
        }
        let inv = E::ONE / sum;
        for o in dst.iter_mut() {
            *o *= inv;
        }
    }
    let out = Tensor::from_vec(xs, out)?;
    let y = out.clone();
    Ok(x.tape().record(
        &[x],
        out,
        Box::new(move |g, needs| {
            vec![needs[0].then(|| {
                let gd = g.data();
                let yd = y.data();
                let mut buf = vec![E::ZERO; yd.len()];
                for r in 0..rows {
                    let base = r * d;
                    let mut dot = E::ZERO;
                    for j in 0..d {
                        dot += gd[base + j] * yd[base + j];
                    }
                    for j in 0..d {
                        buf[base + j] = yd[base + j] * (gd[base + j] - dot);
                    }
                }
                Tensor::from_vec(y.shape().to_vec(), buf).expect("dx shape")
            })]
        }),
    ))
}

/// Mean cross-entropy of `logits[n, classes]` against integer targets.
pub fn cross_entropy_logits<E: Element>(logits: &Var<E>, targets: &[usize]) -> Result<Var<E>> {
    let ls = logits.shape();
    if ls.len() != 2 {
        return shape_err("cross_entropy_logits", format!("logits {:?}", ls));
    }
    let (n, classes) = (ls[0], ls[1]);
    if targets.len() != n {
        return arg_err(
            "cross_entropy_logits",
            format!("{} targets for {} rows", targets.len(), n),
        );
    }
    if let Some(&bad) = targets.iter().find(|&&t| t >= classes) {
        return arg_err("cross_entropy_logits", format!("target {} out of {}", bad, classes));
    }
    let xd = logits.value().data();
    let mut probs = vec![E::ZERO; xd.len()];
    let mut loss = 0.0f64;
    for r in 0..n {
        let row = &xd[r * classes..(r + 1) * classes];
        let mut mx = row[0];
        for &v in row.iter().skip(1) {
            mx = mx.maximum(v);
        }
        let mut sum = E::ZERO;
        for (o, &v) in probs[r * classes..(r + 1) * classes].iter_mut().zip(row) {
            let e = (v - mx).exp();
            *o = e;
            sum += e;
        }
        let inv = E::ONE / sum;
        for o in probs[r * classes..(r + 1) * classes].iter_mut() {
            *o *= inv;
        }
        let p = probs[r * classes + targets[r]];
        loss -= p.to_f64().max(1e-300).ln();
    }
    let loss = el::<E>(loss / n as f64);
    let probs = Tensor::from_vec([n, classes], probs)?;
    let targets = targets.to_vec();
    Ok(logits.tape().record(
        &[logits],
        Tensor::scalar(loss),
        Box::new(move |g, needs| {
            vec![needs[0].then(|| {
                let coeff = g.item() * el::<E>(1.0 / n as f64);
                let pd = probs.data();
                let mut buf = pd.to_vec();
                for (r, &t) in targets.iter().enumerate() {
                    buf[r * classes + t] -= E::ONE;
                }
                for v in buf.iter_mut() {
                    *v *= coeff;
                }
                Tensor::from_vec([n, classes], buf).expect("dlogits shape")
            })]
        }),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tape::Tape;

    #[test]
    fn softmax_rows_sum_to_one() {
        let tape = Tape::<f64>::inference();
        let x = tape.constant(Tensor::from_vec([2, 3], vec![1.0, 2.0, 3.0, -5.0, 0.0, 5.0]).unwrap());
        let y = softmax_last(&x).unwrap();
        for r in 0..2 {
            let s: f64 = y.value().data()[r * 3..(r + 1) * 3].iter().sum();
            assert!((s - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn softmax_of_identical_logits_is_uniform() {
        let tape = Tape::<f64>::inference();
        let x = tape.constant(Tensor::from_vec([1, 4], vec![2.5; 4]).unwrap());
        let y = softmax_last(&x).unwrap();
        for &v in y.value().data() {
            assert!((v - 0.25).abs() < 1e-12);
        }
    }

    #[test]
    fn cross_entropy_of_uniform_logits_is_log_classes() {
        let tape = Tape::<f64>::inference();
        let x = tape.constant(Tensor::zeros([2, 4]));
        let loss = cross_entropy_logits(&x, &[0, 3]).unwrap();
        assert!((loss.value().item() - 4.0f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn silu_matches_definition() {
        let tape = Tape::<f64>::inference();
        let x = tape.constant(Tensor::from_vec([3], vec![-1.0, 0.0, 2.0]).unwrap());
        let y = silu(&x).unwrap();
        for (i, &v) in [-1.0f64, 0.0, 2.0].iter().enumerate() {
            let want = v / (1.0 + (-v).exp());
            assert!((y.value().data()[i] - want).abs() < 1e-12);
        }
    }
}
