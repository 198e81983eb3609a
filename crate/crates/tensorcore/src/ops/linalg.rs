//! Matrix products and table lookups.

use crate::element::Element;
use crate::error::{shape_err, Result};
use crate::tape::Var;
use crate::tensor::Tensor;

/// `C[m,n] = A[m,k] @ B[k,n]` on raw row-major slices, with optional logical
/// transposes expressed through strides. Accumulates into `c` when
/// `beta == 1`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm_raw<E: Element>(
    m: usize,
    k: usize,
    n: usize,
    a: &[E],
    ta: bool,
    b: &[E],
    tb: bool,
    c: &mut [E],
    beta: E,
) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    // Row-major [m,k] has strides (k,1); its transpose view has strides (1,m).
    let (rsa, csa) = if ta { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if tb { (1, k as isize) } else { (n as isize, 1) };
    unsafe {
        E::gemm(
            m,
            k,
            n,
            E::ONE,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// `a[m,k] @ b[k,n] -> [m,n]`.
pub fn matmul<E: Element>(a: &Var<E>, b: &Var<E>) -> Result<Var<E>> {
    a.tape().check_same_tape("matmul", &[b])?;
    let (asp, bsp) = (a.shape(), b.shape());
    if asp.len() != 2 || bsp.len() != 2 || asp[1] != bsp[0] {
        return shape_err("matmul", format!("{:?} @ {:?}", asp, bsp));
    }
    let (m, k, n) = (asp[0], asp[1], bsp[1]);
    let mut out = vec![E::ZERO; m * n];
    gemm_raw(m, k, n, a.value().data(), false, b.value().data(), false, &mut out, E::ZERO);
    let out = Tensor::from_vec([m, n], out)?;
    let (av, bv) = (a.tensor(), b.tensor());
    Ok(a.tape().record(
        &[a, b],
        out,
        Box::new(move |g, needs| {
            let gd = g.data();
            let ga = needs[0].then(|| {
                // dA = dC @ B^T
                let mut buf = vec![E::ZERO; m * k];
                gemm_raw(m, n, k, gd, false, bv.data(), true, &mut buf, E::ZERO);
                Tensor::from_vec([m, k], buf).expect("dA shape")
            });
            let gb = needs[1].then(|| {
                // dB = A^T @ dC
                let mut buf = vec![E::ZERO; k * n];
                gemm_raw(k, m, n, av.data(), true, gd, false, &mut buf, E::ZERO);
                Tensor::from_vec([k, n], buf).expect("dB shape")
            });
            vec![ga, gb]
        }),
    ))
}

/// `x[..., d_in] @ w[d_in, d_out] (+ bias[d_out])` applied row-wise.
pub fn linear<E: Element>(x: &Var<E>, w: &Var<E>, bias: Option<&Var<E>>) -> Result<Var<E>> {
    let xs = x.shape().to_vec();
    let d_in = *xs.last().ok_or_else(|| {
        crate::error::TensorError::ShapeMismatch {
            op: "linear",
            detail: "x must have at least one axis".into(),
        }
    })?;
    let wsp = w.shape();
    if wsp.len() != 2 || wsp[0] != d_in {
        return shape_err("linear", format!("x {:?}, w {:?}", xs, wsp));
    }
    let rows = x.value().numel() / d_in;
    let flat = super::reshape(x, [rows, d_in])?;
    let mut y = matmul(&flat, w)?;
    if let Some(b) = bias {
        y = super::add_bias_last(&y, b)?;
    }
    let mut out_shape = xs;
    *out_shape.last_mut().unwrap() = wsp[1];
    super::reshape(&y, out_shape)
}

/// Batched matmul with logical transpose flags:
/// `c[i] = op_a(a[i]) @ op_b(b[i])`.
pub fn bmm<E: Element>(a: &Var<E>, b: &Var<E>, ta: bool, tb: bool) -> Result<Var<E>> {
    a.tape().check_same_tape("bmm", &[b])?;
    let (asp, bsp) = (a.shape(), b.shape());
    if asp.len() != 3 || bsp.len() != 3 || asp[0] != bsp[0] {
        return shape_err("bmm", format!("{:?} vs {:?}", asp, bsp));
    }
    let batch = asp[0];
    let (m, ka) = if ta { (asp[2], asp[1]) } else { (asp[1], asp[2]) };
    let (kb, n) = if tb { (bsp[2], bsp[1]) } else { (bsp[1], bsp[2]) };
    if ka != kb {
        return shape_err("bmm", format!("inner dims {} vs {}", ka, kb));
    }
    let k = ka;
    let (a_sz, b_sz, c_sz) = (asp[1] * asp[2], bsp[1] * bsp[2], m * n);
    let mut out = vec![E::ZERO; batch * c_sz];
    for i in 0..batch {
        let ai = &a.value().data()[i * a_sz..(i + 1) * a_sz];
        let bi = &b.value().data()[i * b_sz..(i + 1) * b_sz];
        gemm_raw(m, k, n, ai, ta, bi, tb, &mut out[i * c_sz..(i + 1) * c_sz], E::ZERO);
    }
    let out = Tensor::from_vec([batch, m, n], out)?;
    let (av, bv) = (a.tensor(), b.tensor());
    let (a_shape, b_shape) = (asp.to_vec(), bsp.to_vec());
    Ok(a.tape().record(
        &[a, b],
        out,
        Box::new(move |g, needs| {
            let gd = g.data();
            let ga = needs[0].then(|| {
                let mut buf = vec![E::ZERO; batch * a_sz];
                for i in 0..batch {
                    let gi = &gd[i * c_sz..(i + 1) * c_sz];
                    let bi = &bv.data()[i * b_sz..(i + 1) * b_sz];
                    let dst = &mut buf[i * a_sz..(i + 1) * a_sz];
                    if ta {
                        // dA_raw = op_b(B) @ dC^T, A_raw is [k, m]
                        gemm_raw(k, n, m, bi, tb, gi, true, dst, E::ZERO);
                    } else {
                        // dA_raw = dC @ op_b(B)^T
                        gemm_raw(m, n, k, gi, false, bi, !tb, dst, E::ZERO);
                    }
                }
                Tensor::from_vec(a_shape.clone(), buf).expect("dA shape")
            });
            let gb = needs[1].then(|| {
                let mut buf = vec![E::ZERO; batch * b_sz];
                for i in 0..batch {
                    let gi = &gd[i * c_sz..(i + 1) * c_sz];
                    let ai = &av.data()[i * a_sz..(i + 1) * a_sz];
                    let dst = &mut buf[i * b_sz..(i + 1) * b_sz];
                    if tb {
                        // dB_raw = dC^T @ op_a(A), B_raw is [n, k]
                        gemm_raw(n, m, k, gi, true, ai, ta, dst, E::ZERO);
                    } else {
                        // dB_raw = op_a(A)^T @ dC
                        gemm_raw(k, m, n, ai, !ta, gi, false, dst, E::ZERO);
                    }
                }
                Tensor::from_vec(b_shape.clone(), buf).expect("dB shape")
            });
            vec![ga, gb]
        }),
    ))
}

/// Select rows of an embedding table: `table[v, d] x ids[l] -> [l, d]`.
/// The gradient scatter-adds back into the table rows.
pub fn gather_rows<E: Element>(table: &Var<E>, ids: &[usize]) -> Result<Var<E>> {
    let tsp = table.shape();
    if tsp.len() != 2 {
        return shape_err("gather_rows", format!("table {:?}", tsp));
    }
    let (v, d) = (tsp[0], tsp[1]);
    if let Some(&bad) = ids.iter().find(|&&i| i >= v) {
        return shape_err("gather_rows", format!("row {} out of {} rows", bad, v));
    }
    let l = ids.len();
    let mut out = vec![E::ZERO; l * d];
    for (row, &id) in ids.iter().enumerate() {
        out[row * d..(row + 1) * d].copy_from_slice(&table.value().data()[id * d..(id + 1) * d]);
    }
    let out = Tensor::from_vec([l, d], out)?;
    let ids = ids.to_vec();
    Ok(table.tape().record(
        &[table],
        out,
        Box::new(move |g, needs| {
            let gt = needs[0].then(|| {
                let gd = g.data();
                let mut buf = vec![E::ZERO; v * d];
                for (row, &id) in ids.iter().enumerate() {
                    for (dst, &src) in buf[id * d..(id + 1) * d]
                        .iter_mut()
                        .zip(&gd[row * d..(row + 1) * d])
                    {
                        *dst += src;
                    }
                }
                Tensor::from_vec([v, d], buf).expect("table shape")
            });
            vec![gt]
        }),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tape::Tape;

    fn t(shape: &[usize], data: Vec<f64>) -> Tensor<f64> {
        Tensor::from_vec(shape.to_vec(), data).unwrap()
    }

    #[test]
    fn matmul_matches_hand_product() {
        let tape = Tape::<f64>::inference();
        let a = tape.constant(t(&[2, 3], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]));
        let b = tape.constant(t(&[3, 2], vec![7.0, 8.0, 9.0, 10.0, 11.0, 12.0]));
        let c = matmul(&a, &b).unwrap();
        assert_eq!(c.value().data(), &[58.0, 64.0, 139.0, 154.0]);
    }

    #[test]
    fn bmm_transpose_flags_agree_with_explicit_transposes() {
        let tape = Tape::<f64>::inference();
        let a = tape.constant(t(&[1, 2, 3], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]));
        let b = tape.constant(t(&[1, 2, 3], vec![1.0, 0.0, 1.0, 0.0, 1.0, 0.0]));
        // a @ b^T : [2,3] @ [3,2]
        let c = bmm(&a, &b, false, true).unwrap();
        assert_eq!(c.shape(), &[1, 2, 2]);
        assert_eq!(c.value().data(), &[4.0, 2.0, 10.0, 5.0]);
    }

    #[test]
    fn gather_rows_picks_and_scatters() {
        let tape = Tape::<f64>::new();
        let table = tape.leaf(t(&[3, 2], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]), true);
        let picked = gather_rows(&table, &[2, 0, 2]).unwrap();
        assert_eq!(picked.value().data(), &[5.0, 6.0, 1.0, 2.0, 5.0, 6.0]);
        let loss = crate::ops::sum_all(&picked).unwrap();
        let grads = tape.backward(&loss).unwrap();
        // Row 2 selected twice, row 0 once, row 1 never.
        assert_eq!(grads.get(&table).unwrap().data(), &[1.0, 1.0, 0.0, 0.0, 2.0, 2.0]);
    }

    #[test]
    fn gather_rows_rejects_out_of_range_ids() {
        let tape = Tape::<f64>::inference();
        let table = tape.constant(t(&[2, 2], vec![1.0, 2.0, 3.0, 4.0]));
        assert!(gather_rows(&table, &[2]).is_err());
    }
}
