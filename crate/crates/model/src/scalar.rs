use std::fmt::Debug;
use std::iter::Sum;
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

use num_traits::{Float, FromPrimitive, ToPrimitive};

/// Floating-point element type of the model: `f32` for training and
/// inference, `f64` for gradient checks.
pub trait Scalar:
    Float + FromPrimitive + ToPrimitive + Default + Debug + Send + Sync + Sum + AddAssign + SubAssign + MulAssign + DivAssign + 'static
{
    /// `c = alpha * a·b + beta * c` over strided row/column layouts.
    ///
    /// # Safety
    /// Pointers and strides must describe valid, non-aliasing (for `c`)
    /// regions of the stated shapes.
    #[allow(clippy::too_many_arguments)]
    unsafe fn gemm(
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

    fn of(v: f64) -> Self {
        Self::from_f64(v).expect("representable")
    }

    fn f64(self) -> f64 {
        self.to_f64().expect("finite conversion")
    }
}

impl Scalar for f32 {
    unsafe fn gemm(
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
        matrixmultiply::sgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc)
    }
}

impl Scalar for f64 {
    unsafe fn gemm(
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
        matrixmultiply::dgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc)
    }
}

/// A row-major matrix view: `rows × cols` with row stride `stride`.
#[derive(Clone, Copy)]
pub struct View<'a, F> {
    pub data: &'a [F],
    pub rows: usize,
    pub cols: usize,
    pub stride: usize,
    pub transposed: bool,
}

impl<'a, F> View<'a, F> {
    pub fn new(data: &'a [F], rows: usize, cols: usize) -> Self {
        View { data, rows, cols, stride: cols, transposed: false }
    }

    /// Column block `[offset, offset+cols)` of a wider row-major matrix.
    pub fn cols_of(data: &'a [F], rows: usize, stride: usize, offset: usize, cols: usize) -> Self {
        View { data: &data[offset..], rows, cols, stride, transposed: false }
    }

    pub fn t(self) -> Self {
        View { transposed: !self.transposed, ..self }
    }

    fn shape(&self) -> (usize, usize) {
        if self.transposed {
            (self.cols, self.rows)
        } else {
            (self.rows, self.cols)
        }
    }

    fn strides(&self) -> (isize, isize) {
        if self.transposed {
            (1, self.stride as isize)
        } else {
            (self.stride as isize, 1)
        }
    }

    fn check(&self) {
        if self.rows > 0 && self.cols > 0 {
            assert!((self.rows - 1) * self.stride + self.cols <= self.data.len(), "view out of bounds");
        }
    }
}

/// `out = beta * out + a·b`, where `out` is `m × n` with row stride
/// `out_stride` starting at `out_offset`.
pub fn matmul_into<F: Scalar>(a: View<F>, b: View<F>, out: &mut [F], out_offset: usize, out_stride: usize, beta: F) {
    let (m, k) = a.shape();
    let (k2, n) = b.shape();
    assert_eq!(k, k2, "inner dimensions differ");
    a.check();
    b.check();
    if m == 0 || n == 0 {
        return;
    }
    assert!(out_offset + (m - 1) * out_stride + n <= out.len(), "output out of bounds");
    if k == 0 {
        for i in 0..m {
            for v in &mut out[out_offset + i * out_stride..out_offset + i * out_stride + n] {
                *v *= beta;
            }
        }
        return;
    }
    let (rsa, csa) = a.strides();
    let (rsb, csb) = b.strides();
    // SAFETY: bounds checked above; `out` is uniquely borrowed.
    unsafe {
        F::gemm(
            m,
            k,
            n,
            F::one(),
            a.data.as_ptr(),
            rsa,
            csa,
            b.data.as_ptr(),
            rsb,
            csb,
            beta,
            out.as_mut_ptr().add(out_offset),
            out_stride as isize,
            1,
        )
    }
}

/// Fresh `m × n` product.
pub fn matmul<F: Scalar>(a: View<F>, b: View<F>) -> Vec<F> {
    let m = a.shape().0;
    let n = b.shape().1;
    let mut out = vec![F::zero(); m * n];
    matmul_into(a, b, &mut out, 0, n, F::zero());
    out
}

/// `out += a·b` for a dense `out`.
pub fn matmul_acc<F: Scalar>(a: View<F>, b: View<F>, out: &mut [F]) {
    let n = b.shape().1;
    matmul_into(a, b, out, 0, n, F::one());
}
