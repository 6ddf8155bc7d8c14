//! Raw slice kernels shared by the differentiable ops.

/// Strided read-only matrix view.
#[derive(Clone, Copy)]
pub(crate) struct MatRef<'a> {
    pub data: &'a [f64],
    pub rows: usize,
    pub cols: usize,
    pub row_stride: isize,
    pub col_stride: isize,
}

impl<'a> MatRef<'a> {
    pub fn row_major(data: &'a [f64], rows: usize, cols: usize) -> Self {
        debug_assert_eq!(data.len(), rows * cols);
        MatRef {
            data,
            rows,
            cols,
            row_stride: cols as isize,
            col_stride: 1,
        }
    }

    pub fn t(self) -> Self {
        MatRef {
            data: self.data,
            rows: self.cols,
            cols: self.rows,
            row_stride: self.col_stride,
            col_stride: self.row_stride,
        }
    }
}

/// `out = beta * out + a · b`, with `out` row-major `a.rows × b.cols`.
pub(crate) fn gemm(a: MatRef<'_>, b: MatRef<'_>, beta: f64, out: &mut [f64]) {
    assert_eq!(a.cols, b.rows, "gemm inner dimension");
    assert_eq!(out.len(), a.rows * b.cols, "gemm output size");
    let reach = |m: &MatRef<'_>| {
        (m.rows.saturating_sub(1)) as isize * m.row_stride
            + (m.cols.saturating_sub(1)) as isize * m.col_stride
    };
    assert!(reach(&a) < a.data.len() as isize && reach(&b) < b.data.len() as isize);
    if a.rows == 0 || b.cols == 0 {
        return;
    }
    // SAFETY: every index touched by dgemm lies inside the slices, checked above;
    // `out` is uniquely borrowed and does not alias `a` or `b`.
    unsafe {
        matrixmultiply::dgemm(
            a.rows,
            a.cols,
            b.cols,
            1.0,
            a.data.as_ptr(),
            a.row_stride,
            a.col_stride,
            b.data.as_ptr(),
            b.row_stride,
            b.col_stride,
            beta,
            out.as_mut_ptr(),
            b.cols as isize,
            1,
        );
    }
}

/// Causal im2col: `col[s, c*k + i] = x[s - d*i, c]`, zero where `s < d*i`.
fn im2col(x: &[f64], n: usize, c_in: usize, k: usize, dilation: usize) -> Vec<f64> {
    let width = c_in * k;
    let mut col = vec![0.0; n * width];
    for s in 0..n {
        let dst = &mut col[s * width..(s + 1) * width];
        for i in 0..k {
            let shift = dilation * i;
            if shift > s {
                break;
            }
            let src = &x[(s - shift) * c_in..(s - shift + 1) * c_in];
            for (c, &v) in src.iter().enumerate() {
                dst[c * k + i] = v;
            }
        }
    }
    col
}

/// Dilated causal convolution. `x`: n × c_in, `w`: c_out × c_in × k, result n × c_out.
pub(crate) fn conv1d_forward(
    x: &[f64],
    n: usize,
    c_in: usize,
    w: &[f64],
    c_out: usize,
    k: usize,
    dilation: usize,
) -> Vec<f64> {
    let col = im2col(x, n, c_in, k, dilation);
    let mut out = vec![0.0; n * c_out];
    gemm(
        MatRef::row_major(&col, n, c_in * k),
        MatRef::row_major(w, c_out, c_in * k).t(),
        0.0,
        &mut out,
    );
    out
}

/// Vector-Jacobian product of [`conv1d_forward`]; returns (grad_x, grad_w).
#[allow(clippy::too_many_arguments)]
pub(crate) fn conv1d_backward(
    x: &[f64],
    n: usize,
    c_in: usize,
    w: &[f64],
    c_out: usize,
    k: usize,
    dilation: usize,
    grad_out: &[f64],
    want_x: bool,
    want_w: bool,
) -> (Option<Vec<f64>>, Option<Vec<f64>>) {
    let width = c_in * k;
    let go = MatRef::row_major(grad_out, n, c_out);
    let grad_w = want_w.then(|| {
        let col = im2col(x, n, c_in, k, dilation);
        let mut gw = vec![0.0; c_out * width];
        gemm(go.t(), MatRef::row_major(&col, n, width), 0.0, &mut gw);
        gw
    });
    let grad_x = want_x.then(|| {
        let mut gcol = vec![0.0; n * width];
        gemm(go, MatRef::row_major(w, c_out, width), 0.0, &mut gcol);
        let mut gx = vec![0.0; n * c_in];
        for s in 0..n {
            let src = &gcol[s * width..(s + 1) * width];
            for i in 0..k {
                let shift = dilation * i;
                if shift > s {
                    break;
                }
                let dst = &mut gx[(s - shift) * c_in..(s - shift + 1) * c_in];
                for (c, g) in dst.iter_mut().enumerate() {
                    *g += src[c * k + i];
                }
            }
        }
        gx
    });
    (grad_x, grad_w)
}
