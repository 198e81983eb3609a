//! Shape manipulation and resampling ops.

use crate::element::{el, Element};
use crate::error::{arg_err, shape_err, Result};
use crate::tape::Var;
use crate::tensor::Tensor;

/// Zero-copy view under a new shape.
pub fn reshape<E: Element>(x: &Var<E>, shape: impl Into<Vec<usize>>) -> Result<Var<E>> {
    let shape = shape.into();
    let out = x.value().reshaped(shape)?;
    let old_shape = x.shape().to_vec();
    Ok(x.tape().record(
        &[x],
        out,
        Box::new(move |g, needs| {
            vec![needs[0].then(|| g.reshaped(old_shape.clone()).expect("inverse reshape"))]
        }),
    ))
}

/// Concatenate along `axis`. All other extents must agree.
pub fn concat<E: Element>(axis: usize, parts: &[&Var<E>]) -> Result<Var<E>> {
    let Some(first) = parts.first() else {
        return arg_err("concat", "no tensors given");
    };
    first.tape().check_same_tape("concat", parts)?;
    let base_shape = first.shape().to_vec();
    if axis >= base_shape.len() {
        return arg_err("concat", format!("axis {} for rank {}", axis, base_shape.len()));
    }
    let mut axis_total = 0usize;
    for p in parts {
        let s = p.shape();
        if s.len() != base_shape.len()
            || s.iter()
                .zip(&base_shape)
                .enumerate()
                .any(|(i, (a, b))| i != axis && a != b)
        {
            return shape_err("concat", format!("{:?} vs {:?} on axis {}", s, base_shape, axis));
        }
        axis_total += s[axis];
    }
    let mut out_shape = base_shape.clone();
    out_shape[axis] = axis_total;

    let outer: usize = base_shape[..axis].iter().product();
    let inner: usize = base_shape[axis + 1..].iter().product();
    let numel: usize = out_shape.iter().product();
    let mut out = vec![E::ZERO; numel];
    let mut offsets = Vec::with_capacity(parts.len());
    let mut cursor = 0usize;
    for p in parts {
        let extent = p.shape()[axis];
        offsets.push((cursor, extent));
        let pd = p.value().data();
        for o in 0..outer {
            let src = &pd[o * extent * inner..(o + 1) * extent * inner];
            let dst_base = o * axis_total * inner + cursor * inner;
            out[dst_base..dst_base + extent * inner].copy_from_slice(src);
        }
        cursor += extent;
    }
    let out = Tensor::from_vec(out_shape, out)?;
    let part_shapes: Vec<Vec<usize>> = parts.iter().map(|p| p.shape().to_vec()).collect();
    Ok(first.tape().record(
        parts,
        out,
        Box::new(move |g, needs| {
            let gd = g.data();
            offsets
                .iter()
                .zip(&part_shapes)
                .zip(needs)
                .map(|(((start, extent), shape), &need)| {
                    need.then(|| {
                        let mut buf = vec![E::ZERO; shape.iter().product()];
                        for o in 0..outer {
                            let src_base = o * axis_total * inner + start * inner;
                            buf[o * extent * inner..(o + 1) * extent * inner]
                                .copy_from_slice(&gd[src_base..src_base + extent * inner]);
                        }
                        Tensor::from_vec(shape.clone(), buf).expect("part shape")
                    })
                })
                .collect()
        }),
    ))
}

/// Contiguous slice `[start, start+len)` along `axis`.
pub fn narrow<E: Element>(x: &Var<E>, axis: usize, start: usize, len: usize) -> Result<Var<E>> {
    let xs = x.shape().to_vec();
    if axis >= xs.len() || start + len > xs[axis] || len == 0 {
        return arg_err(
            "narrow",
            format!("axis {} range {}..{} of {:?}", axis, start, start + len, xs),
        );
    }
    let outer: usize = xs[..axis].iter().product();
    let inner: usize = xs[axis + 1..].iter().product();
    let extent = xs[axis];
    let mut out_shape = xs.clone();
    out_shape[axis] = len;
    let xd = x.value().data();
    let mut out = vec![E::ZERO; outer * len * inner];
    for o in 0..outer {
        let src_base = o * extent * inner + start * inner;
        out[o * len * inner..(o + 1) * len * inner]
            .copy_from_slice(&xd[src_base..src_base + len * inner]);
    }
    let out = Tensor::from_vec(out_shape, out)?;
    Ok(x.tape().record(
        &[x],
        out,
        Box::new(move |g, needs| {
            vec![needs[0].then(|| {
                let gd = g.data();
                let mut buf = vec![E::ZERO; outer * extent * inner];
                for o in 0..outer {
                    let dst_base = o * extent * inner + start * inner;
                    buf[dst_base..dst_base + len * inner]
                        .copy_from_slice(&gd[o * len * inner..(o + 1) * len * inner]);
                }
                Tensor::from_vec(xs.clone(), buf).expect("input shape")
            })]
        }),
    ))
}

/// Nearest-neighbor 2x upsampling of `x[n,c,h,w]`.
pub fn upsample_nearest_2x<E: Element>(x: &Var<E>) -> Result<Var<E>> {
    let xs = x.shape();
    if xs.len() != 4 {
        return shape_err("upsample_nearest_2x", format!("x {:?}", xs));
    }
    let (n, c, h, w) = (xs[0], xs[1], xs[2], xs[3]);
    let xd = x.value().data();
    let mut out = vec![E::ZERO; n * c * 4 * h * w];
    let (ho, wo) = (2 * h, 2 * w);
    for p in 0..n * c {
        let src = &xd[p * h * w..(p + 1) * h * w];
        let dst = &mut out[p * ho * wo..(p + 1) * ho * wo];
        for y in 0..ho {
            for xx in 0..wo {
                dst[y * wo + xx] = src[(y / 2) * w + xx / 2];
            }
        }
    }
    let out = Tensor::from_vec([n, c, ho, wo], out)?;
    Ok(x.tape().record(
        &[x],
        out,
        Box::new(move |g, needs| {
            vec![needs[0].then(|| {
                let gd = g.data();
                let mut buf = vec![E::ZERO; n * c * h * w];
                for p in 0..n * c {
                    let src = &gd[p * ho * wo..(p + 1) * ho * wo];
                    let dst = &mut buf[p * h * w..(p + 1) * h * w];
                    for y in 0..ho {
                        for xx in 0..wo {
                            dst[(y / 2) * w + xx / 2] += src[y * wo + xx];
                        }
                    }
                }
                Tensor::from_vec([n, c, h, w], buf).expect("input shape")
            })]
        }),
    ))
}

/// 2x2 average pooling with stride 2; spatial extents must be even.
pub fn avg_pool_2x<E: Element>(x: &Var<E>) -> Result<Var<E>> {
    let xs = x.shape();
    if xs.len() != 4 || xs[2] % 2 != 0 || xs[3] % 2 != 0 {
        return shape_err("avg_pool_2x", format!("x {:?}", xs));
    }
    let (n, c, h, w) = (xs[0], xs[1], xs[2], xs[3]);
    let (ho, wo) = (h / 2, w / 2);
    let quarter = el::<E>(0.25);
    let xd = x.value().data();
    let mut out = vec![E::ZERO; n * c * ho * wo];
    for p in 0..n * c {
        let src = &xd[p * h * w..(p + 1) * h * w];
        let dst = &mut out[p * ho * wo..(p + 1) * ho * wo];
        for y in 0..ho {
            for xx in 0..wo {
                let base = 2 * y * w + 2 * xx;
                dst[y * wo + xx] =
                    (src[base] + src[base + 1] + src[base + w] + src[base + w + 1]) * quarter;
            }
        }
    }
    let out = Tensor::from_vec([n, c, ho, wo], out)?;
    Ok(x.tape().record(
        &[x],
        out,
        Box::new(move |g, needs| {
            vec![needs[0].then(|| {
                let gd = g.data();
                let mut buf = vec![E::ZERO; n * c * h * w];
                for p in 0..n * c {
                    let src = &gd[p * ho * wo..(p + 1) * ho * wo];
                    let dst = &mut buf[p * h * w..(p + 1) * h * w];
                    for y in 0..ho {
                        for xx in 0..wo {
                            let v = src[y * wo + xx] * quarter;
                            let base = 2 * y * w + 2 * xx;
                            dst[base] += v;
                            dst[base + 1] += v;
                            dst[base + w] += v;
                            dst[base + w + 1] += v;
                        }
                    }
                }
                Tensor::from_vec([n, c, h, w], buf).expect("input shape")
            })]
        }),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tape::Tape;

    #[test]
    fn upsample_then_pool_is_identity() {
        let tape = Tape::<f64>::inference();
        let x = tape.constant(
            Tensor::from_vec([1, 1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap(),
        );
        let up = upsample_nearest_2x(&x).unwrap();
        assert_eq!(up.shape(), &[1, 1, 4, 4]);
        let back = avg_pool_2x(&up).unwrap();
        assert_eq!(back.value(), x.value());
    }

    #[test]
    fn narrow_out_of_range_errors() {
        let tape = Tape::<f64>::inference();
        let x = tape.constant(Tensor::ones([2, 4]));
        assert!(narrow(&x, 1, 3, 2).is_err());
        assert!(narrow(&x, 2, 0, 1).is_err());
    }

    #[test]
    fn odd_extents_cannot_be_pooled() {
        let tape = Tape::<f64>::inference();
        let x = tape.constant(Tensor::ones([1, 1, 3, 4]));
        assert!(avg_pool_2x(&x).is_err());
    }
}
