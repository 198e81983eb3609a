//! The differentiable operation catalog.
//!
//! Every op validates shapes, computes a fresh output tensor, and registers a
//! local gradient rule on the tape. Reductions accumulate sequentially so
//! repeat runs are bit-identical.

mod activations;
mod blur;
mod conv;
mod linalg;
mod norm;
mod shape;

pub use activations::{cross_entropy_logits, sigmoid, silu, softmax_last};
pub use blur::{gaussian_blur, gaussian_kernel};
pub use conv::conv2d;
pub use linalg::{bmm, gather_rows, linear, matmul};
pub use norm::{group_norm, layer_norm};
pub use shape::{avg_pool_2x, concat, narrow, reshape, upsample_nearest_2x};

use crate::element::{el, Element};
use crate::error::{shape_err, Result};
use crate::tape::Var;
use crate::tensor::Tensor;

fn check_same_shape<E: Element>(op: &'static str, a: &Var<E>, b: &Var<E>) -> Result<()> {
    if a.shape() != b.shape() {
        return shape_err(op, format!("{:?} vs {:?}", a.shape(), b.shape()));
    }
    Ok(())
}

pub fn add<E: Element>(a: &Var<E>, b: &Var<E>) -> Result<Var<E>> {
    a.tape().check_same_tape("add", &[b])?;
    check_same_shape("add", a, b)?;
    let out = a.value().zip_map(b.value(), |x, y| x + y)?;
    Ok(a.tape().record(
        &[a, b],
        out,
        Box::new(move |g, needs| {
            vec![
                needs[0].then(|| g.clone()),
                needs[1].then(|| g.clone()),
            ]
        }),
    ))
}

pub fn sub<E: Element>(a: &Var<E>, b: &Var<E>) -> Result<Var<E>> {
    a.tape().check_same_tape("sub", &[b])?;
    check_same_shape("sub", a, b)?;
    let out = a.value().zip_map(b.value(), |x, y| x - y)?;
    Ok(a.tape().record(
        &[a, b],
        out,
        Box::new(move |g, needs| {
            vec![
                needs[0].then(|| g.clone()),
                needs[1].then(|| g.map(|x| -x)),
            ]
        }),
    ))
}

pub fn mul<E: Element>(a: &Var<E>, b: &Var<E>) -> Result<Var<E>> {
    a.tape().check_same_tape("mul", &[b])?;
    check_same_shape("mul", a, b)?;
    let out = a.value().zip_map(b.value(), |x, y| x * y)?;
    let (av, bv) = (a.tensor(), b.tensor());
    Ok(a.tape().record(
        &[a, b],
        out,
        Box::new(move |g, needs| {
            vec![
                needs[0].then(|| g.zip_map(&bv, |gi, bi| gi * bi).expect("same shape")),
                needs[1].then(|| g.zip_map(&av, |gi, ai| gi * ai).expect("same shape")),
            ]
        }),
    ))
}

pub fn scale<E: Element>(a: &Var<E>, c: f64) -> Result<Var<E>> {
    let ce = el::<E>(c);
    let out = a.value().scale(ce);
    Ok(a.tape().record(
        &[a],
        out,
        Box::new(move |g, needs| vec![needs[0].then(|| g.scale(ce))]),
    ))
}

pub fn add_scalar<E: Element>(a: &Var<E>, c: f64) -> Result<Var<E>> {
    let ce = el::<E>(c);
    let out = a.value().map(|x| x + ce);
    Ok(a.tape().record(
        &[a],
        out,
        Box::new(move |g, needs| vec![needs[0].then(|| g.clone())]),
    ))
}

/// `x[n,c,h,w] + bias[c]` — conv bias.
pub fn add_bias_channels<E: Element>(x: &Var<E>, bias: &Var<E>) -> Result<Var<E>> {
    x.tape().check_same_tape("add_bias_channels", &[bias])?;
    let xs = x.shape();
    if xs.len() != 4 || bias.shape() != [xs[1]] {
        return shape_err(
            "add_bias_channels",
            format!("x {:?}, bias {:?}", xs, bias.shape()),
        );
    }
    let (n, c, h, w) = (xs[0], xs[1], xs[2], xs[3]);
    let hw = h * w;
    let mut out = x.value().data().to_vec();
    let bdata = bias.value().data();
    for ni in 0..n {
        for ci in 0..c {
            let base = (ni * c + ci) * hw;
            let bv = bdata[ci];
            for v in &mut out[base..base + hw] {
                *v += bv;
            }
        }
    }
    let out = Tensor::from_vec(xs.to_vec(), out)?;
    Ok(x.tape().record(
        &[x, bias],
        out,
        Box::new(move |g, needs| {
            let gx = needs[0].then(|| g.clone());
            let gb = needs[1].then(|| {
                let gd = g.data();
                let mut acc = vec![E::ZERO; c];
                for ni in 0..n {
                    for ci in 0..c {
                        let base = (ni * c + ci) * hw;
                        let mut s = E::ZERO;
                        for &v in &gd[base..base + hw] {
                            s += v;
                        }
                        acc[ci] += s;
                    }
                }
                Tensor::from_vec(vec![c], acc).expect("bias shape")
            });
            vec![gx, gb]
        }),
    ))
}

/// `x[..., d] + bias[d]` — linear bias over the last axis.
pub fn add_bias_last<E: Element>(x: &Var<E>, bias: &Var<E>) -> Result<Var<E>> {
    x.tape().check_same_tape("add_bias_last", &[bias])?;
    let xs = x.shape();
    let d = *xs.last().unwrap_or(&0);
    if bias.shape() != [d] || d == 0 {
        return shape_err(
            "add_bias_last",
            format!("x {:?}, bias {:?}", xs, bias.shape()),
        );
    }
    let rows = x.value().numel() / d;
    let mut out = x.value().data().to_vec();
    let bdata = bias.value().data();
    for r in 0..rows {
        for (v, b) in out[r * d..(r + 1) * d].iter_mut().zip(bdata) {
            *v += *b;
        }
    }
    let out = Tensor::from_vec(xs.to_vec(), out)?;
    Ok(x.tape().record(
        &[x, bias],
        out,
        Box::new(move |g, needs| {
            let gx = needs[0].then(|| g.clone());
            let gb = needs[1].then(|| {
                let gd = g.data();
                let mut acc = vec![E::ZERO; d];
                for r in 0..rows {
                    for (a, &v) in acc.iter_mut().zip(&gd[r * d..(r + 1) * d]) {
                        *a += v;
                    }
                }
                Tensor::from_vec(vec![d], acc).expect("bias shape")
            });
            vec![gx, gb]
        }),
    ))
}

/// `x[n,c,h,w] + f[n,c]` broadcast over the spatial axes — timestep features.
pub fn add_per_sample_channel<E: Element>(x: &Var<E>, f: &Var<E>) -> Result<Var<E>> {
    x.tape().check_same_tape("add_per_sample_channel", &[f])?;
    let xs = x.shape();
    if xs.len() != 4 || f.shape() != [xs[0], xs[1]] {
        return shape_err(
            "add_per_sample_channel",
            format!("x {:?}, f {:?}", xs, f.shape()),
        );
    }
    let (n, c, h, w) = (xs[0], xs[1], xs[2], xs[3]);
    let hw = h * w;
    let mut out = x.value().data().to_vec();
    let fdata = f.value().data();
    for ni in 0..n {
        for ci in 0..c {
            let base = (ni * c + ci) * hw;
            let fv = fdata[ni * c + ci];
            for v in &mut out[base..base + hw] {
                *v += fv;
            }
        }
    }
    let out = Tensor::from_vec(xs.to_vec(), out)?;
    Ok(x.tape().record(
        &[x, f],
        out,
        Box::new(move |g, needs| {
            let gx = needs[0].then(|| g.clone());
            let gf = needs[1].then(|| {
                let gd = g.data();
                let mut acc = vec![E::ZERO; n * c];
                for (i, a) in acc.iter_mut().enumerate() {
                    let base = i * hw;
                    let mut s = E::ZERO;
                    for &v in &gd[base..base + hw] {
                        s += v;
                    }
                    *a = s;
                }
                Tensor::from_vec(vec![n, c], acc).expect("f shape")
            });
            vec![gx, gf]
        }),
    ))
}

pub fn sum_all<E: Element>(x: &Var<E>) -> Result<Var<E>> {
    let mut acc = E::ZERO;
    for &v in x.value().data() {
        acc += v;
    }
    let shape = x.shape().to_vec();
    Ok(x.tape().record(
        &[x],
        Tensor::scalar(acc),
        Box::new(move |g, needs| {
            vec![needs[0].then(|| Tensor::full(shape.clone(), g.item()))]
        }),
    ))
}

pub fn mean_all<E: Element>(x: &Var<E>) -> Result<Var<E>> {
    let n = x.value().numel();
    if n == 0 {
        return shape_err("mean_all", "empty tensor");
    }
    let inv = el::<E>(1.0 / n as f64);
    let mut acc = E::ZERO;
    for &v in x.value().data() {
        acc += v;
    }
    let shape = x.shape().to_vec();
    Ok(x.tape().record(
        &[x],
        Tensor::scalar(acc * inv),
        Box::new(move |g, needs| {
            vec![needs[0].then(|| Tensor::full(shape.clone(), g.item() * inv))]
        }),
    ))
}

/// `mean((a - b)^2)` with an analytic gradient.
pub fn mse_loss<E: Element>(a: &Var<E>, b: &Var<E>) -> Result<Var<E>> {
    a.tape().check_same_tape("mse_loss", &[b])?;
    check_same_shape("mse_loss", a, b)?;
    let n = a.value().numel();
    let mut acc = E::ZERO;
    for (&x, &y) in a.value().data().iter().zip(b.value().data()) {
        let d = x - y;
        acc += d * d;
    }
    let inv = el::<E>(1.0 / n as f64);
    let (av, bv) = (a.tensor(), b.tensor());
    Ok(a.tape().record(
        &[a, b],
        Tensor::scalar(acc * inv),
        Box::new(move |g, needs| {
            let two = el::<E>(2.0);
            let coeff = g.item() * inv * two;
            let diff = |sgn: E| {
                av.zip_map(&bv, |x, y| (x - y) * coeff * sgn)
                    .expect("same shape")
            };
            vec![
                needs[0].then(|| diff(E::ONE)),
                needs[1].then(|| diff(-E::ONE)),
            ]
        }),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tape::Tape;

    #[test]
    fn concat_then_narrow_round_trips_exactly() {
        let tape = Tape::<f32>::inference();
        let a = tape.constant(Tensor::from_vec([1, 2, 2, 2], (0..8).map(|i| i as f32).collect()).unwrap());
        let b = tape.constant(Tensor::from_vec([1, 3, 2, 2], (8..20).map(|i| i as f32).collect()).unwrap());
        let cat = concat(1, &[&a, &b]).unwrap();
        assert_eq!(cat.shape(), &[1, 5, 2, 2]);
        let a2 = narrow(&cat, 1, 0, 2).unwrap();
        let b2 = narrow(&cat, 1, 2, 3).unwrap();
        assert_eq!(a2.value(), a.value());
        assert_eq!(b2.value(), b.value());
    }

    #[test]
    fn mse_of_identical_tensors_is_zero() {
        let tape = Tape::<f32>::inference();
        let a = tape.constant(Tensor::from_vec([4], vec![1.0, 2.0, 3.0, 4.0]).unwrap());
        let loss = mse_loss(&a, &a).unwrap();
        assert_eq!(loss.value().item(), 0.0);
    }
}
