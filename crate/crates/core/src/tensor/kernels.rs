//! Dense kernels shared by the matmul-family ops.

/// Row-major transpose of an `rows x cols` matrix.
pub(crate) fn transpose(src: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mut out = vec![0.0; src.len()];
    for r in 0..rows {
        let row = &src[r * cols..(r + 1) * cols];
        for (c, &v) in row.iter().enumerate() {
            out[c * rows + r] = v;
        }
    }
    out
}

/// `c (+)= op(a) * op(b)` where `op(a)` is `m x k` and `op(b)` is `k x n`.
///
/// With `trans_a` the buffer `a` holds a `k x m` matrix; with `trans_b`, `b`
/// holds `n x k`. When `accumulate` is false `c` is overwritten.
#[allow(clippy::too_many_arguments)]
pub fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    trans_a: bool,
    b: &[f64],
    trans_b: bool,
    c: &mut [f64],
    accumulate: bool,
) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    if !accumulate {
        c.iter_mut().for_each(|v| *v = 0.0);
    }
    if m == 0 || n == 0 || k == 0 {
        return;
    }
    let a_owned;
    let a_rm: &[f64] = if trans_a {
        a_owned = transpose(a, k, m);
        &a_owned
    } else {
        a
    };
    let b_owned;
    let b_rm: &[f64] = if trans_b {
        b_owned = transpose(b, n, k);
        &b_owned
    } else {
        b
    };
    // Block over k so a slab of B stays cache resident across rows of A.
    const KB: usize = 64;
    for k0 in (0..k).step_by(KB) {
        let k1 = (k0 + KB).min(k);
        for i in 0..m {
            let a_row = &a_rm[i * k..(i + 1) * k];
            let c_row = &mut c[i * n..(i + 1) * n];
            for p in k0..k1 {
                let aip = a_row[p];
                let b_row = &b_rm[p * n..(p + 1) * n];
                for (cv, &bv) in c_row.iter_mut().zip(b_row) {
                    *cv += aip * bv;
                }
            }
        }
    }
}
