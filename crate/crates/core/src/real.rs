use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::{AddAssign, MulAssign, SubAssign};

use num_traits::{Float, FromPrimitive, ToPrimitive};

use crate::fastmath;

/// Floating-point element type of tensors and models.
///
/// Training and inference run in `f32`; `f64` exists so gradient checks can
/// use tight tolerances.
pub trait Real:
    Float
    + FromPrimitive
    + ToPrimitive
    + Sum
    + AddAssign
    + SubAssign
    + MulAssign
    + Debug
    + Display
    + Default
    + Send
    + Sync
    + 'static
{
    const NAME: &'static str;

    /// `c = alpha * op(a) * op(b) + beta * c` on strided row/column layouts.
    ///
    /// # Safety
    /// Strides and extents must describe memory inside the given slices.
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

    fn erf(self) -> Self;

    /// Standard normal cdf and pdf at `self`.
    #[inline]
    fn normal_cdf_pdf(self) -> (Self, Self) {
        let half = Self::lit(0.5);
        let cdf = half * (Self::one() + (self * Self::lit(std::f64::consts::FRAC_1_SQRT_2)).erf());
        let pdf = (-(self * self) * half).exp() * Self::lit(0.398_942_280_401_432_7);
        (cdf, pdf)
    }

    #[inline]
    fn lit(v: f64) -> Self {
        Self::from_f64(v).expect("literal fits the float type")
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self.to_f64().expect("finite float converts to f64")
    }
}

impl Real for f32 {
    const NAME: &'static str = "f32";

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

    #[inline]
    fn erf(self) -> f32 {
        fastmath::erf(self)
    }

    #[inline]
    fn normal_cdf_pdf(self) -> (f32, f32) {
        let cdf = 0.5 * (1.0 + fastmath::erf(self * std::f32::consts::FRAC_1_SQRT_2));
        let pdf = fastmath::exp(-0.5 * self * self) * 0.398_942_3;
        (cdf, pdf)
    }
}

impl Real for f64 {
    const NAME: &'static str = "f64";

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

    fn erf(self) -> f64 {
        libm::erf(self)
    }
}
