//! Group and layer normalization.
//!
//! Statistics accumulate in f64 regardless of the element type so the
//! normalized output is stable and run-to-run deterministic.

use crate::element::{el, Element};
use crate::error::{arg_err, shape_err, Result};
use crate::tape::Var;
use crate::tensor::Tensor;

const EPS: f64 = 1e-6;

fn moments<E: Element>(chunk: &[E]) -> (f64, f64) {
    let n = chunk.len() as f64;
    let mut sum = 0.0f64;
    for &v in chunk {
        sum += v.to_f64();
    }
    let mean = sum / n;
    let mut var = 0.0f64;
    for &v in chunk {
        let d = v.to_f64() - mean;
        var += d * d;
    }
    (mean, var / n)
}

/// Normalize `x[n,c,h,w]` per (sample, group), then apply the per-channel
/// affine `gamma/beta`.
pub fn group_norm<E: Element>(
    x: &Var<E>,
    gamma: &Var<E>,
    beta: &Var<E>,
    groups: usize,
) -> Result<Var<E>> {
    x.tape().check_same_tape("group_norm", &[gamma, beta])?;
    let xs = x.shape();
    if xs.len() != 4 {
        return shape_err("group_norm", format!("x {:?}", xs));
    }
    let (n, c, h, w) = (xs[0], xs[1], xs[2], xs[3]);
    if groups == 0 || c % groups != 0 {
        return arg_err("group_norm", format!("{} channels not divisible into {} groups", c, groups));
    }
    if gamma.shape() != [c] || beta.shape() != [c] {
        return shape_err(
            "group_norm",
            format!("gamma {:?}, beta {:?}, c={}", gamma.shape(), beta.shape(), c),
        );
    }
    let cg = c / groups;
    let group_len = cg * h * w;
    let hw = h * w;

    let xd = x.value().data();
    let mut xhat = vec![E::ZERO; xd.len()];
    let mut rstd = vec![0.0f64; n * groups];
    for ni in 0..n {
        for gi in 0..groups {
            let base = ni * c * hw + gi * group_len;
            let chunk = &xd[base..base + group_len];
            let (mean, var) = moments(chunk);
            let r = 1.0 / (var + EPS).sqrt();
            rstd[ni * groups + gi] = r;
            for (dst, &v) in xhat[base..base + group_len].iter_mut().zip(chunk) {
                *dst = el::<E>((v.to_f64() - mean) * r);
            }
        }
    }
    let gd = gamma.value().data();
    let bd = beta.value().data();
    let mut out = vec![E::ZERO; xd.len()];
    for ni in 0..n {
        for ci in 0..c {
            let base = (ni * c + ci) * hw;
            let (ga, be) = (gd[ci], bd[ci]);
            for (dst, &xh) in out[base..base + hw].iter_mut().zip(&xhat[base..base + hw]) {
                *dst = xh * ga + be;
            }
        }
    }
    let out = Tensor::from_vec(xs.to_vec(), out)?;
    let xhat = Tensor::from_vec(xs.to_vec(), xhat)?;
    let gamma_v = gamma.tensor();
    Ok(x.tape().record(
        &[x, gamma, beta],
        out,
        Box::new(move |g, needs| {
            let gdat = g.data();
            let xh = xhat.data();
            let gx = needs[0].then(|| {
                let gv = gamma_v.data();
                let mut buf = vec![E::ZERO; xh.len()];
                let m = group_len as f64;
                for ni in 0..n {
                    for gi in 0..groups {
                        let base = ni * c * hw + gi * group_len;
                        // dxhat = g * gamma (gamma indexed per channel)
                        let mut sum_dxhat = 0.0f64;
                        let mut sum_dxhat_xhat = 0.0f64;
                        for j in 0..group_len {
                            let ci = gi * cg + j / hw;
                            let dxh = (gdat[base + j] * gv[ci]).to_f64();
                            sum_dxhat += dxh;
                            sum_dxhat_xhat += dxh * xh[base + j].to_f64();
                        }
                        let r = rstd[ni * groups + gi];
                        let mean_dxhat = sum_dxhat / m;
                        let mean_dxhat_xhat = sum_dxhat_xhat / m;
                        for j in 0..group_len {
                            let ci = gi * cg + j / hw;
                            let dxh = (gdat[base + j] * gv[ci]).to_f64();
                            let v = (dxh - mean_dxhat - xh[base + j].to_f64() * mean_dxhat_xhat) * r;
                            buf[base + j] = el::<E>(v);
                        }
                    }
                }
                Tensor::from_vec(vec![n, c, h, w], buf).expect("dx shape")
            });
            let ggamma = needs[1].then(|| {
                let mut acc = vec![E::ZERO; c];
                for ni in 0..n {
                    for ci in 0..c {
                        let base = (ni * c + ci) * hw;
                        let mut s = E::ZERO;
                        for j in 0..hw {
                            s += gdat[base + j] * xh[base + j];
                        }
                        acc[ci] += s;
                    }
                }
                Tensor::from_vec(vec![c], acc).expect("gamma shape")
            });
            let gbeta = needs[2].then(|| {
                let mut acc = vec![E::ZERO; c];
                for ni in 0..n {
                    for ci in 0..c {
                        let base = (ni * c + ci) * hw;
                        let mut s = E::ZERO;
                        for j in 0..hw {
                            s += gdat[base + j];
                        }
                        acc[ci] += s;
                    }
                }
                Tensor::from_vec(vec![c], acc).expect("beta shape")
            });
            vec![gx, ggamma, gbeta]
        }),
    ))
}

/// Normalize over the last axis of `x[..., d]`, then apply `gamma/beta[d]`.
pub fn layer_norm<E: Element>(
    x: &Var<E>,
    gamma: &Var<E>,
    beta: &Var<E>,
) -> Result<Var<E>> {
    x.tape().check_same_tape("layer_norm", &[gamma, beta])?;
    let xs = x.shape().to_vec();
    let d = *xs.last().unwrap_or(&0);
    if d == 0 || gamma.shape() != [d] || beta.shape() != [d] {
        return shape_err(
            "layer_norm",
            format!("x {:?}, gamma {:?}, beta {:?}", xs, gamma.shape(), beta.shape()),
        );
    }
    let rows = x.value().numel() / d;
    let xd = x.value().data();
    let mut xhat = vec![E::ZERO; xd.len()];
    let mut rstd = vec![0.0f64; rows];
    for r in 0..rows {
        let chunk = &xd[r * d..(r + 1) * d];
        let (mean, var) = moments(chunk);
        let rs = 1.0 / (var + EPS).sqrt();
        rstd[r] = rs;
        for (dst, &v) in xhat[r * d..(r + 1) * d].iter_mut().zip(chunk) {
            *dst = el::<E>((v.to_f64() - mean) * rs);
        }
    }
    let gd = gamma.value().data();
    let bd = beta.value().data();
    let mut out = vec![E::ZERO; xd.len()];
    for r in 0..rows {
        for j in 0..d {
            out[r * d + j] = xhat[r * d + j] * gd[j] + bd[j];
        }
    }
    let out = Tensor::from_vec(xs.clone(), out)?;
    let xhat = Tensor::from_vec(xs.clone(), xhat)?;
    let gamma_v = gamma.tensor();
    Ok(x.tape().record(
        &[x, gamma, beta],
        out,
        Box::new(move |g, needs| {
            let gdat = g.data();
            let xh = xhat.data();
            let gx = needs[0].then(|| {
                let gv = gamma_v.data();
                let mut buf = vec![E::ZERO; xh.len()];
                let m = d as f64;
                for r in 0..rows {
                    let base = r * d;
                    let mut sum_dxhat = 0.0f64;
                    let mut sum_dxhat_xhat = 0.0f64;
                    for j in 0..d {
                        let dxh = (gdat[base + j] * gv[j]).to_f64();
                        sum_dxhat += dxh;
                        sum_dxhat_xhat += dxh * xh[base + j].to_f64();
                    }
                    let mean_dxhat = sum_dxhat / m;
                    let mean_dxhat_xhat = sum_dxhat_xhat / m;
                    for j in 0..d {
                        let dxh = (gdat[base + j] * gv[j]).to_f64();
                        let v = (dxh - mean_dxhat - xh[base + j].to_f64() * mean_dxhat_xhat)
                            * rstd[r];
                        buf[base + j] = el::<E>(v);
                    }
                }
                Tensor::from_vec(xhat.shape().to_vec(), buf).expect("dx shape")
            });
            let ggamma = needs[1].then(|| {
                let mut acc = vec![E::ZERO; d];
                for r in 0..rows {
                    for j in 0..d {
                        acc[j] += gdat[r * d + j] * xh[r * d + j];
                    }
                }
                Tensor::from_vec(vec![d], acc).expect("gamma shape")
            });
            let gbeta = needs[2].then(|| {
                let mut acc = vec![E::ZERO; d];
                for r in 0..rows {
                    for j in 0..d {
                        acc[j] += gdat[r * d + j];
                    }
                }
                Tensor::from_vec(vec![d], acc).expect("beta shape")
            });
            vec![gx, ggamma, gbeta]
        }),
    ))
}
