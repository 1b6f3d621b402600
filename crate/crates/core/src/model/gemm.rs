//! Safe wrapper around `matrixmultiply::sgemm`.

/// Row/column strides of a matrix operand.
#[derive(Clone, Copy)]
pub(crate) struct Strides(pub usize, pub usize);

impl Strides {
    pub fn row_major(cols: usize) -> Self {
        Strides(cols, 1)
    }

    /// A row-major `rows × cols` buffer read as its transpose.
    pub fn transposed(cols: usize) -> Self {
        Strides(1, cols)
    }
}

fn fits(len: usize, rows: usize, cols: usize, s: Strides) -> bool {
    rows == 0 || cols == 0 || (rows - 1) * s.0 + (cols - 1) * s.1 < len
}

/// `c = a · b + beta · c` where `a` is `m × k`, `b` is `k × n` and `c` is row-major `m × n`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f32],
    sa: Strides,
    b: &[f32],
    sb: Strides,
    beta: f32,
    c: &mut [f32],
) {
    assert!(fits(a.len(), m, k, sa), "lhs out of bounds");
    assert!(fits(b.len(), k, n, sb), "rhs out of bounds");
    assert!(c.len() >= m * n, "output out of bounds");
    if m == 0 || n == 0 {
        return;
    }
    // SAFETY: the asserts above keep every addressed element inside its slice,
    // and `c` is borrowed mutably so it cannot alias `a` or `b`.
    unsafe {
        matrixmultiply::sgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            sa.0 as isize,
            sa.1 as isize,
            b.as_ptr(),
            sb.0 as isize,
            sb.1 as isize,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}
