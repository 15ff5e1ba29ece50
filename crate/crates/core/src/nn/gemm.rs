/// How a row-major operand is read.
#[derive(Clone, Copy)]
pub(crate) enum Op {
    N,
    T,
}

/// `c = a * b + beta * c` with `a: rows x inner`, `b: inner x cols` after
/// applying `op_a` / `op_b` to the stored row-major buffers.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    rows: usize,
    inner: usize,
    cols: usize,
    a: &[f64],
    op_a: Op,
    b: &[f64],
    op_b: Op,
    beta: f64,
    c: &mut [f64],
) {
    assert!(a.len() >= rows * inner, "lhs buffer too small");
    assert!(b.len() >= inner * cols, "rhs buffer too small");
    assert!(c.len() >= rows * cols, "output buffer too small");
    if rows == 0 || cols == 0 {
        return;
    }
    if inner == 0 {
        c[..rows * cols].iter_mut().for_each(|v| *v *= beta);
        return;
    }
    let (rsa, csa) = match op_a {
        Op::N => (inner as isize, 1),
        Op::T => (1, rows as isize),
    };
    let (rsb, csb) = match op_b {
        Op::N => (cols as isize, 1),
        Op::T => (1, inner as isize),
    };
    // SAFETY: buffer extents were checked above against the logical shapes
    // and every stride describes an access pattern inside those extents.
    unsafe {
        matrixmultiply::dgemm(
            rows,
            inner,
            cols,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            cols as isize,
            1,
        );
    }
}
