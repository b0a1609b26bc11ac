//! Thin wrappers over `matrixmultiply` and `nalgebra` for the dense kernels.

use nalgebra::DMatrix;

use crate::array::Array;

/// `c = alpha * op(a) * op(b) + beta * c` for row-major buffers.
///
/// `op(a)` is `m x k`, `op(b)` is `k x n`. A transposed operand is stored
/// in its untransposed row-major layout (`k x m` for `a`).
#[allow(clippy::too_many_arguments)]
pub fn gemm(
    m: usize,
    k: usize,
    n: usize,
    alpha: f64,
    a: &[f64],
    a_trans: bool,
    b: &[f64],
    b_trans: bool,
    beta: f64,
    c: &mut [f64],
) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        for v in c.iter_mut() {
            *v *= beta;
        }
        return;
    }
    let (rsa, csa) = if a_trans { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_trans { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: the buffers are sized for the given dimensions and strides
    // (checked above in debug builds); `c` does not alias `a` or `b`.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            alpha,
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

pub fn to_dmatrix(a: &Array) -> DMatrix<f64> {
    assert_eq!(a.ndim(), 2, "to_dmatrix needs a matrix");
    DMatrix::from_row_slice(a.shape()[0], a.shape()[1], a.data())
}

pub fn from_dmatrix(m: &DMatrix<f64>) -> Array {
    let (r, c) = m.shape();
    let mut data = Vec::with_capacity(r * c);
    for i in 0..r {
        for j in 0..c {
            data.push(m[(i, j)]);
        }
    }
    Array::new(vec![r, c], data).expect("dimensions agree")
}
