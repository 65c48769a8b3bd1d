//! Small dense helpers: bounds-checked strided GEMM and softmax utilities.

use crate::scalar::Scalar;

/// A read-only strided matrix view into a slice.
#[derive(Clone, Copy, Debug)]
pub struct View<'a, T> {
    pub data: &'a [T],
    pub offset: usize,
    pub rows: usize,
    pub cols: usize,
    pub row_stride: usize,
    pub col_stride: usize,
}

impl<'a, T> View<'a, T> {
    /// Row-major `rows × cols` matrix starting at `data[0]`.
    pub fn dense(data: &'a [T], rows: usize, cols: usize) -> Self {
        View { data, offset: 0, rows, cols, row_stride: cols, col_stride: 1 }
    }

    /// Column block `[col0, col0 + cols)` of a row-major matrix with `ld` columns.
    pub fn block(data: &'a [T], ld: usize, row0: usize, rows: usize, col0: usize, cols: usize) -> Self {
        View { data, offset: row0 * ld + col0, rows, cols, row_stride: ld, col_stride: 1 }
    }

    /// Transposed view (no copy).
    pub fn t(self) -> Self {
        View {
            rows: self.cols,
            cols: self.rows,
            row_stride: self.col_stride,
            col_stride: self.row_stride,
            ..self
        }
    }

    fn check(&self) {
        if self.rows > 0 && self.cols > 0 {
            let last = self.offset + (self.rows - 1) * self.row_stride + (self.cols - 1) * self.col_stride;
            assert!(last < self.data.len(), "matrix view out of bounds");
        }
    }
}

/// A mutable strided matrix view.
#[derive(Debug)]
pub struct ViewMut<'a, T> {
    pub data: &'a mut [T],
    pub offset: usize,
    pub rows: usize,
    pub cols: usize,
    pub row_stride: usize,
}

impl<'a, T> ViewMut<'a, T> {
    pub fn dense(data: &'a mut [T], rows: usize, cols: usize) -> Self {
        ViewMut { data, offset: 0, rows, cols, row_stride: cols }
    }

    pub fn block(data: &'a mut [T], ld: usize, row0: usize, rows: usize, col0: usize, cols: usize) -> Self {
        ViewMut { data, offset: row0 * ld + col0, rows, cols, row_stride: ld }
    }

    fn check(&self) {
        if self.rows > 0 && self.cols > 0 {
            let last = self.offset + (self.rows - 1) * self.row_stride + (self.cols - 1);
            assert!(last < self.data.len(), "matrix view out of bounds");
        }
    }
}

/// `out = alpha * a * b + beta * out`.
pub fn gemm<T: Scalar>(alpha: T, a: View<'_, T>, b: View<'_, T>, beta: T, out: ViewMut<'_, T>) {
    assert_eq!(a.cols, b.rows, "inner dimensions differ");
    assert_eq!(a.rows, out.rows, "output rows differ");
    assert_eq!(b.cols, out.cols, "output cols differ");
    a.check();
    b.check();
    out.check();
    let (m, k, n) = (a.rows, a.cols, b.cols);
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        for i in 0..m {
            for j in 0..n {
                let c = &mut out.data[out.offset + i * out.row_stride + j];
                *c = if beta == T::zero() { T::zero() } else { beta * *c };
            }
        }
        return;
    }
    // SAFETY: every view was bounds-checked above, and `out` is a unique borrow.
    unsafe {
        T::gemm_raw(
            m,
            k,
            n,
            alpha,
            a.data.as_ptr().add(a.offset),
            a.row_stride as isize,
            a.col_stride as isize,
            b.data.as_ptr().add(b.offset),
            b.row_stride as isize,
            b.col_stride as isize,
            beta,
            out.data.as_mut_ptr().add(out.offset),
            out.row_stride as isize,
            1,
        );
    }
}

/// Row-major `a (m×k) * b (k×n)` into a fresh buffer.
pub fn matmul<T: Scalar>(a: &[T], b: &[T], m: usize, k: usize, n: usize) -> Vec<T> {
    let mut out = vec![T::zero(); m * n];
    gemm(T::one(), View::dense(a, m, k), View::dense(b, k, n), T::zero(), ViewMut::dense(&mut out, m, n));
    out
}

/// In-place numerically stable softmax of a slice.
pub fn softmax_in_place<T: Scalar>(xs: &mut [T]) {
    if xs.is_empty() {
        return;
    }
    let max = xs.iter().copied().fold(T::neg_infinity(), T::max);
    let mut sum = T::zero();
    for x in xs.iter_mut() {
        *x = (*x - max).exp();
        sum += *x;
    }
    for x in xs.iter_mut() {
        *x /= sum;
    }
}

/// Softmax of `scores / temperature` into a fresh vector.
pub fn softmax_t<T: Scalar>(scores: &[T], temperature: T) -> Vec<T> {
    let mut out: Vec<T> = scores.iter().map(|&s| s / temperature).collect();
    softmax_in_place(&mut out);
    out
}

/// `log(sum(exp(xs)))`, stable.
pub fn log_sum_exp<T: Scalar>(xs: &[T]) -> T {
    let max = xs.iter().copied().fold(T::neg_infinity(), T::max);
    if max == T::neg_infinity() {
        return max;
    }
    let s: T = xs.iter().map(|&x| (x - max).exp()).sum();
    max + s.ln()
}

#[inline]
pub fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

#[inline]
pub fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).fold(T::zero(), |acc, (&x, &y)| acc + x * y)
}
