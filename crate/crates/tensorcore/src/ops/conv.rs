//! 2-D cross-correlation via im2col + GEMM, with zero padding.

use crate::element::Element;
use crate::error::{arg_err, shape_err, Result};
use crate::ops::linalg::gemm_raw;
use crate::tape::Var;
use crate::tensor::Tensor;

fn out_extent(input: usize, kernel: usize, stride: usize, pad: usize) -> Option<usize> {
    (input + 2 * pad).checked_sub(kernel).map(|v| v / stride + 1)
}

/// Scatter one image `[ci, h, w]` into a `[ci*kh*kw, ho*wo]` column matrix.
/// Stride-1 rows are bulk-copied; only the padded edges go element-wise.
#[allow(clippy::too_many_arguments)]
fn im2col<E: Element>(
    x: &[E],
    ci: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
    ho: usize,
    wo: usize,
    col: &mut [E],
) {
    debug_assert_eq!(col.len(), ci * kh * kw * ho * wo);
    let cols = ho * wo;
    for c in 0..ci {
        let plane = &x[c * h * w..(c + 1) * h * w];
        for ky in 0..kh {
            for kx in 0..kw {
                let row = ((c * kh + ky) * kw + kx) * cols;
                for oy in 0..ho {
                    let iy = (oy * stride + ky) as isize - pad as isize;
                    let dst = &mut col[row + oy * wo..row + (oy + 1) * wo];
                    if iy < 0 || iy >= h as isize {
                        for v in dst.iter_mut() {
                            *v = E::ZERO;
                        }
                        continue;
                    }
                    let src_row = &plane[iy as usize * w..(iy as usize + 1) * w];
                    if stride == 1 {
                        // ix = ox + kx - pad: one contiguous span with zeroed edges.
                        let shift = kx as isize - pad as isize;
                        let lead = (-shift).max(0) as usize; // output cells mapping before col 0
                        let src_start = shift.max(0) as usize;
                        let span = (w - src_start).min(wo - lead);
                        for v in &mut dst[..lead] {
                            *v = E::ZERO;
                        }
                        dst[lead..lead + span]
                            .copy_from_slice(&src_row[src_start..src_start + span]);
                        for v in &mut dst[lead + span..] {
                            *v = E::ZERO;
                        }
                    } else {
                        for (ox, v) in dst.iter_mut().enumerate() {
                            let ix = (ox * stride + kx) as isize - pad as isize;
                            *v = if ix < 0 || ix >= w as isize {
                                E::ZERO
                            } else {
                                src_row[ix as usize]
                            };
                        }
                    }
                }
            }
        }
    }
}

/// Adjoint of `im2col`: accumulate a column matrix back into an image.
#[allow(clippy::too_many_arguments)]
fn col2im<E: Element>(
    col: &[E],
    ci: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
    ho: usize,
    wo: usize,
    x: &mut [E],
) {
    let cols = ho * wo;
    for c in 0..ci {
        let plane = &mut x[c * h * w..(c + 1) * h * w];
        for ky in 0..kh {
            for kx in 0..kw {
                let row = ((c * kh + ky) * kw + kx) * cols;
                for oy in 0..ho {
                    let iy = (oy * stride + ky) as isize - pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let dst_row = &mut plane[iy as usize * w..(iy as usize + 1) * w];
                    let src = &col[row + oy * wo..row + (oy + 1) * wo];
                    for (ox, &v) in src.iter().enumerate() {
                        let ix = (ox * stride + kx) as isize - pad as isize;
                        if ix >= 0 && ix < w as isize {
                            dst_row[ix as usize] += v;
                        }
                    }
                }
            }
        }
    }
}

/// Cross-correlation of `x[n,ci,h,w]` with `weight[co,ci,kh,kw]` plus an
/// optional per-channel bias. The bias is preloaded into the output buffer
/// and the GEMM accumulates on top of it.
pub fn conv2d<E: Element>(
    x: &Var<E>,
    weight: &Var<E>,
    bias: Option<&Var<E>>,
    stride: usize,
    pad: usize,
) -> Result<Var<E>> {
    x.tape().check_same_tape("conv2d", &[weight])?;
    if let Some(b) = bias {
        x.tape().check_same_tape("conv2d", &[b])?;
    }
    if stride == 0 {
        return arg_err("conv2d", "stride must be positive");
    }
    let (xs, ws) = (x.shape(), weight.shape());
    if xs.len() != 4 || ws.len() != 4 {
        return shape_err("conv2d", format!("x {:?}, weight {:?}", xs, ws));
    }
    let (n, ci, h, w) = (xs[0], xs[1], xs[2], xs[3]);
    let (co, wci, kh, kw) = (ws[0], ws[1], ws[2], ws[3]);
    if ci != wci {
        return shape_err("conv2d", format!("input channels {} vs kernel {}", ci, wci));
    }
    if let Some(b) = bias {
        if b.shape() != [co] {
            return shape_err("conv2d", format!("bias {:?} for {} channels", b.shape(), co));
        }
    }
    let (Some(ho), Some(wo)) = (out_extent(h, kh, stride, pad), out_extent(w, kw, stride, pad))
    else {
        return shape_err("conv2d", format!("kernel {}x{} larger than padded input", kh, kw));
    };
    let k = ci * kh * kw;
    let cols = ho * wo;
    let pointwise = kh == 1 && kw == 1 && stride == 1 && pad == 0;

    let mut out = vec![E::ZERO; n * co * cols];
    let beta = match bias {
        Some(b) => {
            let bd = b.value().data();
            for i in 0..n {
                for (c, &bv) in bd.iter().enumerate() {
                    let base = (i * co + c) * cols;
                    for v in &mut out[base..base + cols] {
                        *v = bv;
                    }
                }
            }
            E::ONE
        }
        None => E::ZERO,
    };
    let mut col = if pointwise { Vec::new() } else { vec![E::ZERO; k * cols] };
    for i in 0..n {
        let xi = &x.value().data()[i * ci * h * w..(i + 1) * ci * h * w];
        let dst = &mut out[i * co * cols..(i + 1) * co * cols];
        if pointwise {
            gemm_raw(co, k, cols, weight.value().data(), false, xi, false, dst, beta);
        } else {
            im2col(xi, ci, h, w, kh, kw, stride, pad, ho, wo, &mut col);
            gemm_raw(co, k, cols, weight.value().data(), false, &col, false, dst, beta);
        }
    }
    let out = Tensor::from_vec([n, co, ho, wo], out)?;

    let (xv, wv) = (x.tensor(), weight.tensor());
    let parents: Vec<&Var<E>> = match bias {
        Some(b) => vec![x, weight, b],
        None => vec![x, weight],
    };
    Ok(x.tape().record(
        &parents,
        out,
        Box::new(move |g, needs| {
            let gd = g.data();
            let mut col = if pointwise { Vec::new() } else { vec![E::ZERO; k * cols] };
            let gx = needs[0].then(|| {
                let mut buf = vec![E::ZERO; n * ci * h * w];
                for i in 0..n {
                    let gi = &gd[i * co * cols..(i + 1) * co * cols];
                    let dst = &mut buf[i * ci * h * w..(i + 1) * ci * h * w];
                    if pointwise {
                        // dX = W^T @ dY
                        gemm_raw(k, co, cols, wv.data(), true, gi, false, dst, E::ZERO);
                    } else {
                        gemm_raw(k, co, cols, wv.data(), true, gi, false, &mut col, E::ZERO);
                        col2im(&col, ci, h, w, kh, kw, stride, pad, ho, wo, dst);
                    }
                }
                Tensor::from_vec([n, ci, h, w], buf).expect("dX shape")
            });
            let gw = needs[1].then(|| {
                let mut buf = vec![E::ZERO; co * k];
                for i in 0..n {
                    let xi = &xv.data()[i * ci * h * w..(i + 1) * ci * h * w];
                    let gi = &gd[i * co * cols..(i + 1) * co * cols];
                    if pointwise {
                        gemm_raw(co, cols, k, gi, false, xi, true, &mut buf, E::ONE);
                    } else {
                        im2col(xi, ci, h, w, kh, kw, stride, pad, ho, wo, &mut col);
                        // dW += dY @ col^T
                        gemm_raw(co, cols, k, gi, false, &col, true, &mut buf, E::ONE);
                    }
                }
                Tensor::from_vec([co, ci, kh, kw], buf).expect("dW shape")
            });
            let mut grads = vec![gx, gw];
            if needs.len() == 3 {
                grads.push(needs[2].then(|| {
                    let mut acc = vec![E::ZERO; co];
                    for i in 0..n {
                        for (c, a) in acc.iter_mut().enumerate() {
                            let base = (i * co + c) * cols;
                            let mut s = E::ZERO;
                            for &v in &gd[base..base + cols] {
                                s += v;
                            }
                            *a += s;
                        }
                    }
                    Tensor::from_vec([co], acc).expect("bias shape")
                }));
            }
            grads
        }),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{seeded_rng, uniform_tensor};
    use crate::tape::Tape;

    /// Direct six-nested-loop cross-correlation used as the oracle.
    fn conv_oracle(x: &Tensor<f64>, w: &Tensor<f64>, stride: usize, pad: usize) -> Tensor<f64> {
        let (n, ci, h, wd) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
        let (co, _, kh, kw) = (w.shape()[0], w.shape()[1], w.shape()[2], w.shape()[3]);
        let ho = (h + 2 * pad - kh) / stride + 1;
        let wo = (wd + 2 * pad - kw) / stride + 1;
        let mut out = vec![0.0f64; n * co * ho * wo];
        for ni in 0..n {
            for oc in 0..co {
                for oy in 0..ho {
                    for ox in 0..wo {
                        let mut acc = 0.0;
                        for ic in 0..ci {
                            for ky in 0..kh {
                                for kx in 0..kw {
                                    let iy = (oy * stride + ky) as isize - pad as isize;
                                    let ix = (ox * stride + kx) as isize - pad as isize;
                                    if iy < 0 || ix < 0 || iy >= h as isize || ix >= wd as isize {
                                        continue;
                                    }
                                    acc += x.at(&[ni, ic, iy as usize, ix as usize])
                                        * w.at(&[oc, ic, ky, kx]);
                                }
                            }
                        }
                        out[((ni * co + oc) * ho + oy) * wo + ox] = acc;
                    }
                }
            }
        }
        Tensor::from_vec([n, co, ho, wo], out).unwrap()
    }

    #[test]
    fn identity_1x1_kernel_returns_input() {
        let tape = Tape::<f64>::inference();
        let x = tape.constant(
            Tensor::from_vec([1, 1, 3, 3], (0..9).map(|i| i as f64).collect()).unwrap(),
        );
        let w = tape.constant(Tensor::from_vec([1, 1, 1, 1], vec![1.0]).unwrap());
        let y = conv2d(&x, &w, None, 1, 0).unwrap();
        assert_eq!(y.value(), x.value());
    }

    #[test]
    fn ones_3x3_on_constant_input_gives_nine_in_the_interior() {
        let tape = Tape::<f64>::inference();
        let x = tape.constant(Tensor::ones([1, 1, 5, 5]));
        let w = tape.constant(Tensor::ones([1, 1, 3, 3]));
        let y = conv2d(&x, &w, None, 1, 1).unwrap();
        assert_eq!(y.shape(), &[1, 1, 5, 5]);
        for iy in 1..4 {
            for ix in 1..4 {
                assert_eq!(y.value().at(&[0, 0, iy, ix]), 9.0);
            }
        }
        assert_eq!(y.value().at(&[0, 0, 0, 0]), 4.0); // corner kernel support is 2x2
    }

    #[test]
    fn random_case_matches_loop_oracle_exactly() {
        let mut rng = seeded_rng(7);
        let x = uniform_tensor::<f64>(&mut rng, [2, 3, 5, 5], -1.0, 1.0);
        let w = uniform_tensor::<f64>(&mut rng, [4, 3, 3, 3], -1.0, 1.0);
        let tape = Tape::<f64>::inference();
        let xv = tape.constant(x.clone());
        let wv = tape.constant(w.clone());
        for (stride, pad) in [(1usize, 1usize), (1, 0), (2, 1), (2, 0)] {
            let got = conv2d(&xv, &wv, None, stride, pad).unwrap();
            let want = conv_oracle(&x, &w, stride, pad);
            assert_eq!(got.shape(), want.shape());
            let diff = got.value().max_abs_diff(&want).unwrap();
            assert!(diff < 1e-12, "stride {} pad {} diff {}", stride, pad, diff);
        }
    }

    #[test]
    fn bias_adds_per_output_channel() {
        let tape = Tape::<f64>::inference();
        let x = tape.constant(Tensor::ones([1, 1, 3, 3]));
        let w = tape.constant(Tensor::ones([2, 1, 1, 1]));
        let b = tape.constant(Tensor::from_vec([2], vec![10.0, -3.0]).unwrap());
        let y = conv2d(&x, &w, Some(&b), 1, 0).unwrap();
        assert_eq!(y.value().at(&[0, 0, 1, 1]), 11.0);
        assert_eq!(y.value().at(&[0, 1, 1, 1]), -2.0);
    }

    #[test]
    fn incompatible_channel_counts_error() {
        let tape = Tape::<f64>::inference();
        let x = tape.constant(Tensor::ones([1, 3, 4, 4]));
        let w = tape.constant(Tensor::ones([2, 4, 3, 3]));
        assert!(conv2d(&x, &w, None, 1, 1).is_err());
    }
}
