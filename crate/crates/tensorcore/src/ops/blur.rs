//! Separable Gaussian blur over a single-channel map.

use crate::element::{el, Element};
use crate::error::{arg_err, shape_err, Result};
use crate::tape::Var;
use crate::tensor::Tensor;

/// Normalized 1-D Gaussian weights for an odd kernel size, with
/// `sigma = 0.3 * ((k - 1) / 2 - 1) + 0.8`.
pub fn gaussian_kernel(kernel_size: usize) -> Result<Vec<f64>> {
    if kernel_size % 2 == 0 || kernel_size == 0 {
        return arg_err("gaussian_kernel", format!("kernel size {} must be odd", kernel_size));
    }
    if kernel_size == 1 {
        return Ok(vec![1.0]);
    }
    let half = (kernel_size / 2) as i64;
    let sigma = 0.3 * ((kernel_size - 1) as f64 / 2.0 - 1.0) + 0.8;
    let mut weights: Vec<f64> = (-half..=half)
        .map(|i| (-(i as f64).powi(2) / (2.0 * sigma * sigma)).exp())
        .collect();
    let total: f64 = weights.iter().sum();
    for w in weights.iter_mut() {
        *w /= total;
    }
    Ok(weights)
}

/// Mirror index without repeating the border sample (`p[-1] == p[1]`).
#[inline]
fn reflect(i: isize, n: isize) -> usize {
    let mut i = i;
    loop {
        if i < 0 {
            i = -i;
        } else if i >= n {
            i = 2 * (n - 1) - i;
        } else {
            return i as usize;
        }
    }
}

fn blur_axis<E: Element>(src: &[E], h: usize, w: usize, weights: &[E], rows: bool, dst: &mut [E]) {
    let half = (weights.len() / 2) as isize;
    if rows {
        // blur along x within each row
        for y in 0..h {
            let row = &src[y * w..(y + 1) * w];
            for x in 0..w {
                let mut acc = E::ZERO;
                for (j, &wt) in weights.iter().enumerate() {
                    let idx = reflect(x as isize + j as isize - half, w as isize);
                    acc += row[idx] * wt;
                }
                dst[y * w + x] = acc;
            }
        }
    } else {
        for y in 0..h {
            for x in 0..w {
                let mut acc = E::ZERO;
                for (j, &wt) in weights.iter().enumerate() {
                    let idx = reflect(y as isize + j as isize - half, h as isize);
                    acc += src[idx * w + x] * wt;
                }
                dst[y * w + x] = acc;
            }
        }
    }
}

/// Adjoint of `blur_axis`: scatter `g` back through the reflected taps.
fn blur_axis_adjoint<E: Element>(
    g: &[E],
    h: usize,
    w: usize,
    weights: &[E],
    rows: bool,
    dst: &mut [E],
) {
    let half = (weights.len() / 2) as isize;
    for v in dst.iter_mut() {
        *v = E::ZERO;
    }
    if rows {
        for y in 0..h {
            for x in 0..w {
                let gv = g[y * w + x];
                for (j, &wt) in weights.iter().enumerate() {
                    let idx = reflect(x as isize + j as isize - half, w as isize);
                    dst[y * w + idx] += gv * wt;
                }
            }
        }
    } else {
        for y in 0..h {
            for x in 0..w {
                let gv = g[y * w + x];
                for (j, &wt) in weights.iter().enumerate() {
                    let idx = reflect(y as isize + j as isize - half, h as isize);
                    dst[idx * w + x] += gv * wt;
                }
            }
        }
    }
}

/// Blur `x[h,w]` with a normalized separable Gaussian and reflected borders.
/// Kernel size 1 is the identity; constant inputs pass through unchanged.
pub fn gaussian_blur<E: Element>(x: &Var<E>, kernel_size: usize) -> Result<Var<E>> {
    let xs = x.shape();
    if xs.len() != 2 {
        return shape_err("gaussian_blur", format!("expected [h,w], got {:?}", xs));
    }
    let (h, w) = (xs[0], xs[1]);
    let weights: Vec<E> = gaussian_kernel(kernel_size)?
        .into_iter()
        .map(el::<E>)
        .collect();
    if kernel_size == 1 {
        let out = x.tensor();
        return Ok(x.tape().record(
            &[x],
            out,
            Box::new(|g, needs| vec![needs[0].then(|| g.clone())]),
        ));
    }
    let xd = x.value().data();
    let mut mid = vec![E::ZERO; h * w];
    let mut out = vec![E::ZERO; h * w];
    blur_axis(xd, h, w, &weights, true, &mut mid);
    blur_axis(&mid, h, w, &weights, false, &mut out);
    let out = Tensor::from_vec([h, w], out)?;
    Ok(x.tape().record(
        &[x],
        out,
        Box::new(move |g, needs| {
            vec![needs[0].then(|| {
                let mut mid = vec![E::ZERO; h * w];
                let mut buf = vec![E::ZERO; h * w];
                blur_axis_adjoint(g.data(), h, w, &weights, false, &mut mid);
                blur_axis_adjoint(&mid, h, w, &weights, true, &mut buf);
                Tensor::from_vec([h, w], buf).expect("input shape")
            })]
        }),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tape::Tape;

    #[test]
    fn kernel_size_one_is_identity() {
        let tape = Tape::<f64>::inference();
        let x = tape.constant(Tensor::from_vec([2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap());
        let y = gaussian_blur(&x, 1).unwrap();
        assert_eq!(y.value(), x.value());
    }

    #[test]
    fn constant_image_is_unchanged() {
        let tape = Tape::<f64>::inference();
        let x = tape.constant(Tensor::full([8, 8], 0.37));
        let y = gaussian_blur(&x, 5).unwrap();
        let diff = y.value().max_abs_diff(x.value()).unwrap();
        assert!(diff < 1e-12, "diff {}", diff);
    }

    #[test]
    fn even_kernel_size_is_rejected() {
        let tape = Tape::<f64>::inference();
        let x = tape.constant(Tensor::zeros([4, 4]));
        assert!(gaussian_blur(&x, 4).is_err());
    }

    #[test]
    fn delta_image_center_equals_kernel_peak() {
        // Explicit kernel-table oracle: output of a centered delta is the
        // outer product of the 1-D weights.
        let k = 5;
        let weights = gaussian_kernel(k).unwrap();
        let n = 11;
        let mut data = vec![0.0f64; n * n];
        data[(n / 2) * n + n / 2] = 1.0;
        let tape = Tape::<f64>::inference();
        let x = tape.constant(Tensor::from_vec([n, n], data).unwrap());
        let y = gaussian_blur(&x, k).unwrap();
        let peak = weights[k / 2] * weights[k / 2];
        assert!((y.value().at(&[n / 2, n / 2]) - peak).abs() < 1e-12);
        for dy in 0..k {
            for dx in 0..k {
                let want = weights[dy] * weights[dx];
                let got = y
                    .value()
                    .at(&[n / 2 + dy - k / 2, n / 2 + dx - k / 2]);
                assert!((got - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn interior_delta_mass_is_preserved() {
        let tape = Tape::<f64>::inference();
        let mut data = vec![0.0f64; 64];
        data[3 * 8 + 3] = 1.0; // all taps stay interior for k = 5
        let x = tape.constant(Tensor::from_vec([8, 8], data).unwrap());
        let y = gaussian_blur(&x, 5).unwrap();
        let sum: f64 = y.value().data().iter().sum();
        assert!((sum - 1.0).abs() < 1e-12, "sum {}", sum);
    }
}
