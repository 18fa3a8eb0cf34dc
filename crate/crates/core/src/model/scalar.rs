use std::fmt::Debug;
use std::iter::Sum;
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

use num_traits::Float;

/// Floating-point element type of the model: `f64` for gradient checking,
/// `f32` for training speed.
pub trait Scalar:
    Float + AddAssign + SubAssign + MulAssign + DivAssign + Sum + Default + Debug + Send + Sync + 'static
{
    fn from_f64(v: f64) -> Self;
    fn as_f64(self) -> f64;
    fn erf(self) -> Self;

    /// `C = alpha * A B + beta * C` with arbitrary strides.
    ///
    /// # Safety
    /// Every addressed element must lie inside the allocations behind the
    /// pointers; see [`gemm`] for the checked entry point.
    #[allow(clippy::too_many_arguments)]
    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: *const Self,
        rsa: isize,
        csa: isize,
        b: *const Self,
        rsb: isize,
        csb: isize,
        beta: Self,
        c: *mut Self,
        rsc: isize,
        csc: isize,
    );
}

impl Scalar for f64 {
    fn from_f64(v: f64) -> Self {
        v
    }
    fn as_f64(self) -> f64 {
        self
    }
    fn erf(self) -> Self {
        libm::erf(self)
    }
    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: f64,
        a: *const f64,
        rsa: isize,
        csa: isize,
        b: *const f64,
        rsb: isize,
        csb: isize,
        beta: f64,
        c: *mut f64,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::dgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc);
    }
}

impl Scalar for f32 {
    fn from_f64(v: f64) -> Self {
        v as f32
    }
    fn as_f64(self) -> f64 {
        f64::from(self)
    }
    fn erf(self) -> Self {
        libm::erff(self)
    }
    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: f32,
        a: *const f32,
        rsa: isize,
        csa: isize,
        b: *const f32,
        rsb: isize,
        csb: isize,
        beta: f32,
        c: *mut f32,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::sgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc);
    }
}

/// A strided view: element `(i, j)` lives at `offset + i * rs + j * cs`.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Layout {
    pub offset: usize,
    pub rs: usize,
    pub cs: usize,
}

impl Layout {
    /// Row-major `rows x cols` starting at `offset`.
    pub fn rows(offset: usize, cols: usize) -> Self {
        Layout { offset, rs: cols, cs: 1 }
    }

    /// Transposed view of a row-major matrix with `cols` columns.
    pub fn trans(offset: usize, cols: usize) -> Self {
        Layout { offset, rs: 1, cs: cols }
    }

    /// Row-major with an explicit row stride (a column block of a wider
    /// matrix).
    pub fn block(offset: usize, stride: usize) -> Self {
        Layout { offset, rs: stride, cs: 1 }
    }

    /// Transposed column block of a row-major matrix with row stride `stride`.
    pub fn block_trans(offset: usize, stride: usize) -> Self {
        Layout { offset, rs: 1, cs: stride }
    }

    fn last(&self, rows: usize, cols: usize) -> Option<usize> {
        if rows == 0 || cols == 0 {
            None
        } else {
            Some(self.offset + (rows - 1) * self.rs + (cols - 1) * self.cs)
        }
    }
}

/// Checked strided GEMM: `C[m x n] = alpha * A[m x k] B[k x n] + beta * C`.
/// With `beta == 0` the previous contents of `C` are ignored.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm<T: Scalar>(
    m: usize,
    k: usize,
    n: usize,
    alpha: T,
    a: &[T],
    la: Layout,
    b: &[T],
    lb: Layout,
    beta: T,
    c: &mut [T],
    lc: Layout,
) {
    if let Some(last) = la.last(m, k) {
        assert!(last < a.len(), "gemm: A out of bounds");
    }
    if let Some(last) = lb.last(k, n) {
        assert!(last < b.len(), "gemm: B out of bounds");
    }
    if let Some(last) = lc.last(m, n) {
        assert!(last < c.len(), "gemm: C out of bounds");
    } else {
        return;
    }
    // SAFETY: all addressed elements were bounds-checked above; A and B are
    // shared borrows and C an exclusive one, so they cannot alias.
    unsafe {
        T::gemm_raw(
            m,
            k,
            n,
            alpha,
            a.as_ptr().add(la.offset),
            la.rs as isize,
            la.cs as isize,
            b.as_ptr().add(lb.offset),
            lb.rs as isize,
            lb.cs as isize,
            beta,
            c.as_mut_ptr().add(lc.offset),
            lc.rs as isize,
            lc.cs as isize,
        );
    }
}

/// `C = A B` (or `C += A B` when `accumulate`), all row-major.
pub(crate) fn matmul<T: Scalar>(
    a: &[T],
    b: &[T],
    c: &mut [T],
    m: usize,
    k: usize,
    n: usize,
    accumulate: bool,
) {
    let beta = if accumulate { T::one() } else { T::zero() };
    gemm(m, k, n, T::one(), a, Layout::rows(0, k), b, Layout::rows(0, n), beta, c, Layout::rows(0, n));
}

/// `C += Aᵀ B` with `A` stored row-major as `k x m`.
pub(crate) fn matmul_tn_acc<T: Scalar>(a: &[T], b: &[T], c: &mut [T], m: usize, k: usize, n: usize) {
    gemm(m, k, n, T::one(), a, Layout::trans(0, m), b, Layout::rows(0, n), T::one(), c, Layout::rows(0, n));
}

/// `C = A Bᵀ` (or `+=`) with `B` stored row-major as `n x k`.
pub(crate) fn matmul_nt<T: Scalar>(
    a: &[T],
    b: &[T],
    c: &mut [T],
    m: usize,
    k: usize,
    n: usize,
    accumulate: bool,
) {
    let beta = if accumulate { T::one() } else { T::zero() };
    gemm(m, k, n, T::one(), a, Layout::rows(0, k), b, Layout::trans(0, k), beta, c, Layout::rows(0, n));
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
        let mut c = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                for p in 0..k {
                    c[i * n + j] += a[i * k + p] * b[p * n + j];
                }
            }
        }
        c
    }

    fn transpose(a: &[f64], rows: usize, cols: usize) -> Vec<f64> {
        let mut t = vec![0.0; rows * cols];
        for i in 0..rows {
            for j in 0..cols {
                t[j * rows + i] = a[i * cols + j];
            }
        }
        t
    }

    #[test]
    fn variants_agree_with_naive() {
        let (m, k, n) = (3, 4, 5);
        let a: Vec<f64> = (0..m * k).map(|i| i as f64 * 0.5 - 2.0).collect();
        let b: Vec<f64> = (0..k * n).map(|i| (i as f64).sin()).collect();
        let want = naive(&a, &b, m, k, n);

        let mut c = vec![f64::NAN; m * n];
        matmul(&a, &b, &mut c, m, k, n, false);
        for (x, y) in c.iter().zip(&want) {
            assert!((x - y).abs() < 1e-12);
        }

        let at = transpose(&a, m, k);
        let mut c = vec![0.0; m * n];
        matmul_tn_acc(&at, &b, &mut c, m, k, n);
        for (x, y) in c.iter().zip(&want) {
            assert!((x - y).abs() < 1e-12);
        }

        let bt = transpose(&b, k, n);
        let mut c = vec![1.0; m * n];
        matmul_nt(&a, &bt, &mut c, m, k, n, true);
        for (x, y) in c.iter().zip(&want) {
            assert!((x - (y + 1.0)).abs() < 1e-12);
        }
    }

    #[test]
    #[should_panic(expected = "out of bounds")]
    fn bounds_are_checked() {
        let a = vec![0.0f32; 5];
        let mut c = vec![0.0f32; 4];
        matmul(&a, &a, &mut c, 2, 3, 2, false);
    }
}
