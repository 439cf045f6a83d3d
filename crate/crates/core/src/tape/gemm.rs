//! Thin safe wrapper over `matrixmultiply::dgemm` for strided row/column views.

/// A read-only strided matrix view: element `(i, j)` lives at
/// `data[i * row_stride + j * col_stride]`.
#[derive(Clone, Copy)]
pub(crate) struct View<'a> {
    pub data: &'a [f64],
    pub row_stride: usize,
    pub col_stride: usize,
}

impl<'a> View<'a> {
    /// Row-major `rows × cols` matrix.
    pub fn rm(data: &'a [f64], cols: usize) -> Self {
        Self { data, row_stride: cols, col_stride: 1 }
    }

    /// Transpose of a row-major matrix that has `cols` columns.
    pub fn rm_t(data: &'a [f64], cols: usize) -> Self {
        Self { data, row_stride: 1, col_stride: cols }
    }

    fn fits(&self, rows: usize, cols: usize) -> bool {
        rows == 0
            || cols == 0
            || (rows - 1) * self.row_stride + (cols - 1) * self.col_stride < self.data.len()
    }
}

/// `c (m×n, row-major) = a (m×k) · b (k×n) + beta · c`.
pub(crate) fn gemm(m: usize, k: usize, n: usize, a: View<'_>, b: View<'_>, c: &mut [f64], beta: f64) {
    assert!(a.fits(m, k) && b.fits(k, n) && c.len() >= m * n, "gemm operand out of bounds");
    if m == 0 || n == 0 {
        return;
    }
    // SAFETY: the bounds of every strided access were checked above and `c`
    // is exclusively borrowed for the duration of the call.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.data.as_ptr(),
            a.row_stride as isize,
            a.col_stride as isize,
            b.data.as_ptr(),
            b.row_stride as isize,
            b.col_stride as isize,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}
