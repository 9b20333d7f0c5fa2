use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::Float;

/// Floating-point element type for rollouts and parameters.
///
/// Implemented for `f32` (default training precision) and `f64`
/// (oracle comparisons and gradient checks).
pub trait Real: Float + Debug + Display + Default + Sum + Send + Sync + 'static {
    fn of(x: f64) -> Self;
    fn as_f64(self) -> f64;

    /// `c (m x n) += a (m x k) * b (k x n)` with element strides `(row, col)`.
    #[allow(clippy::too_many_arguments)]
    fn gemm(m: usize, k: usize, n: usize, a: &[Self], sa: (isize, isize), b: &[Self], sb: (isize, isize), c: &mut [Self], sc: (isize, isize));
}

fn check_extent(len: usize, rows: usize, cols: usize, s: (isize, isize)) {
    if rows > 0 && cols > 0 {
        let last = (rows as isize - 1) * s.0 + (cols as isize - 1) * s.1;
        assert!(last >= 0 && (last as usize) < len, "gemm operand out of bounds");
    }
}

impl Real for f32 {
    #[inline]
    fn of(x: f64) -> Self {
        x as f32
    }
    #[inline]
    fn as_f64(self) -> f64 {
        self as f64
    }
    fn gemm(m: usize, k: usize, n: usize, a: &[Self], sa: (isize, isize), b: &[Self], sb: (isize, isize), c: &mut [Self], sc: (isize, isize)) {
        check_extent(a.len(), m, k, sa);
        check_extent(b.len(), k, n, sb);
        check_extent(c.len(), m, n, sc);
        // SAFETY: every accessed offset lies inside the slices (checked above)
        unsafe {
            matrixmultiply::sgemm(m, k, n, 1.0, a.as_ptr(), sa.0, sa.1, b.as_ptr(), sb.0, sb.1, 1.0, c.as_mut_ptr(), sc.0, sc.1);
        }
    }
}

impl Real for f64 {
    #[inline]
    fn of(x: f64) -> Self {
        x
    }
    #[inline]
    fn as_f64(self) -> f64 {
        self
    }
    fn gemm(m: usize, k: usize, n: usize, a: &[Self], sa: (isize, isize), b: &[Self], sb: (isize, isize), c: &mut [Self], sc: (isize, isize)) {
        check_extent(a.len(), m, k, sa);
        check_extent(b.len(), k, n, sb);
        check_extent(c.len(), m, n, sc);
        // SAFETY: every accessed offset lies inside the slices (checked above)
        unsafe {
            matrixmultiply::dgemm(m, k, n, 1.0, a.as_ptr(), sa.0, sa.1, b.as_ptr(), sb.0, sb.1, 1.0, c.as_mut_ptr(), sc.0, sc.1);
        }
    }
}

/// Dense row-major matrix. Rows index batch samples, columns features.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Real> Tensor<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![T::zero(); rows * cols] }
    }

    pub fn filled(rows: usize, cols: usize, value: T) -> Self {
        Self { rows, cols, data: vec![value; rows * cols] }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<T>) -> Self {
        assert_eq!(data.len(), rows * cols, "tensor data length does not match shape {rows}x{cols}");
        Self { rows, cols, data }
    }

    pub fn scalar(value: T) -> Self {
        Self { rows: 1, cols: 1, data: vec![value] }
    }

    pub fn column(data: Vec<T>) -> Self {
        let rows = data.len();
        Self { rows, cols: 1, data }
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn data(&self) -> &[T] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> T {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: T) {
        self.data[r * self.cols + c] = v;
    }

    /// Value of a 1x1 tensor.
    pub fn item(&self) -> T {
        assert_eq!(self.data.len(), 1, "item() on non-scalar tensor {}x{}", self.rows, self.cols);
        self.data[0]
    }

    pub fn col_vec(&self, c: usize) -> Vec<T> {
        (0..self.rows).map(|r| self.get(r, c)).collect()
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self { rows: self.rows, cols: self.cols, data: self.data.iter().map(|&x| f(x)).collect() }
    }

    pub fn zip_map(&self, other: &Self, f: impl Fn(T, T) -> T) -> Self {
        assert_eq!(self.shape(), other.shape(), "shape mismatch in elementwise op");
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect(),
        }
    }

    pub fn add_assign(&mut self, other: &Self) {
        assert_eq!(self.shape(), other.shape(), "shape mismatch in accumulate");
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a = *a + b;
        }
    }

    pub fn sum(&self) -> T {
        // fixed left-to-right order keeps reductions reproducible
        self.data.iter().fold(T::zero(), |acc, &x| acc + x)
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn cast<U: Real>(&self) -> Tensor<U> {
        Tensor { rows: self.rows, cols: self.cols, data: self.data.iter().map(|x| U::of(x.as_f64())).collect() }
    }

    /// `self (r x k) * rhs (k x c)`.
    pub fn matmul(&self, rhs: &Self) -> Self {
        assert_eq!(self.cols, rhs.rows, "matmul inner dimension mismatch");
        let mut out = Self::zeros(self.rows, rhs.cols);
        matmul_into(&self.data, &rhs.data, &mut out.data, self.rows, self.cols, rhs.cols);
        out
    }

    /// `self^T * rhs` where `self` is `r x k` and `rhs` is `r x c`.
    pub fn t_matmul(&self, rhs: &Self) -> Self {
        assert_eq!(self.rows, rhs.rows, "t_matmul row mismatch");
        let (r, k, c) = (self.rows, self.cols, rhs.cols);
        let mut out = Self::zeros(k, c);
        T::gemm(k, r, c, &self.data, (1, k as isize), &rhs.data, (c as isize, 1), &mut out.data, (c as isize, 1));
        out
    }

    /// `self * rhs^T` where `self` is `r x c` and `rhs` is `k x c`.
    pub fn matmul_t(&self, rhs: &Self) -> Self {
        assert_eq!(self.cols, rhs.cols, "matmul_t column mismatch");
        let (r, c, k) = (self.rows, self.cols, rhs.rows);
        let mut out = Self::zeros(r, k);
        T::gemm(r, c, k, &self.data, (c as isize, 1), &rhs.data, (1, c as isize), &mut out.data, (k as isize, 1));
        out
    }

    /// Adds a `1 x c` row to every row.
    pub fn add_row(&self, row: &Self) -> Self {
        assert_eq!(row.rows, 1);
        assert_eq!(row.cols, self.cols, "bias width mismatch");
        let mut out = self.clone();
        for chunk in out.data.chunks_mut(self.cols) {
            for (o, &b) in chunk.iter_mut().zip(&row.data) {
                *o = *o + b;
            }
        }
        out
    }

    /// Column sums as a `1 x c` row.
    pub fn sum_rows(&self) -> Self {
        let mut out = Self::zeros(1, self.cols);
        for chunk in self.data.chunks(self.cols) {
            for (o, &x) in out.data.iter_mut().zip(chunk) {
                *o = *o + x;
            }
        }
        out
    }

    /// Row sums as an `r x 1` column.
    pub fn sum_cols(&self) -> Self {
        let data = self.data.chunks(self.cols.max(1)).map(|row| row.iter().fold(T::zero(), |a, &x| a + x)).collect();
        Self { rows: self.rows, cols: 1, data }
    }
}

/// `out (r x c) += a (r x k) * b (k x c)`, all row-major.
pub(crate) fn matmul_into<T: Real>(a: &[T], b: &[T], out: &mut [T], r: usize, k: usize, c: usize) {
    T::gemm(r, k, c, a, (k as isize, 1), b, (c as isize, 1), out, (c as isize, 1));
}
