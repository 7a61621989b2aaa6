//! Numeric abstraction over f32/f64.
//!
//! Training runs in f32; f64 exists for gradient verification, where
//! finite differences need more headroom than single precision offers.

use std::cell::RefCell;
use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::{Add, AddAssign, Div, DivAssign, Mul, MulAssign, Neg, Sub, SubAssign};

use rustfft::num_complex::Complex;
use rustfft::{FftDirection, FftPlanner};

pub trait Scalar:
    Copy
    + Debug
    + Display
    + PartialEq
    + PartialOrd
    + Send
    + Sync
    + 'static
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + Sum<Self>
{
    const ZERO: Self;
    const ONE: Self;
    /// Machine epsilon, widened to f64 (sets finite-difference step sizes).
    const EPS_F64: f64;

    fn from_f64(v: f64) -> Self;
    fn to_f64(self) -> f64;

    fn abs(self) -> Self;
    fn sqrt(self) -> Self;
    fn exp(self) -> Self;
    fn ln(self) -> Self;
    fn powf(self, e: Self) -> Self;
    fn sin(self) -> Self;
    fn cos(self) -> Self;
    fn tanh(self) -> Self;
    fn max(self, o: Self) -> Self;
    fn min(self, o: Self) -> Self;
    fn is_finite(self) -> bool;

    /// In-place complex FFT (unnormalized, in either direction).
    fn fft(buf: &mut [Complex<Self>], inverse: bool);

    /// C := alpha * A * B + beta * C over row-major buffers with explicit strides.
    ///
    /// # Safety
    /// Pointers must cover m*k, k*n and m*n elements under the given strides.
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
}

thread_local! {
    static PLANNER_F32: RefCell<FftPlanner<f32>> = RefCell::new(FftPlanner::new());
    static PLANNER_F64: RefCell<FftPlanner<f64>> = RefCell::new(FftPlanner::new());
}

macro_rules! impl_scalar {
    ($t:ty, $planner:ident, $gemm:path) => {
        impl Scalar for $t {
            const ZERO: Self = 0.0;
            const ONE: Self = 1.0;
            const EPS_F64: f64 = <$t>::EPSILON as f64;

            fn from_f64(v: f64) -> Self {
                v as $t
            }
            fn to_f64(self) -> f64 {
                self as f64
            }

            fn abs(self) -> Self {
                <$t>::abs(self)
            }
            fn sqrt(self) -> Self {
                <$t>::sqrt(self)
            }
            fn exp(self) -> Self {
                <$t>::exp(self)
            }
            fn ln(self) -> Self {
                <$t>::ln(self)
            }
            fn powf(self, e: Self) -> Self {
                <$t>::powf(self, e)
            }
            fn sin(self) -> Self {
                <$t>::sin(self)
            }
            fn cos(self) -> Self {
                <$t>::cos(self)
            }
            fn tanh(self) -> Self {
                <$t>::tanh(self)
            }
            fn max(self, o: Self) -> Self {
                <$t>::max(self, o)
            }
            fn min(self, o: Self) -> Self {
                <$t>::min(self, o)
            }
            fn is_finite(self) -> bool {
                <$t>::is_finite(self)
            }

            fn fft(buf: &mut [Complex<Self>], inverse: bool) {
                let dir = if inverse {
                    FftDirection::Inverse
                } else {
                    FftDirection::Forward
                };
                $planner.with(|p| {
                    p.borrow_mut().plan_fft(buf.len(), dir).process(buf);
                });
            }

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
            ) {
                $gemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc)
            }
        }
    };
}

impl_scalar!(f32, PLANNER_F32, matrixmultiply::sgemm);
impl_scalar!(f64, PLANNER_F64, matrixmultiply::dgemm);

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fft_matches_naive_dft() {
        let x: Vec<Complex<f64>> = (0..16)
            .map(|i| Complex::new((i as f64 * 0.7).sin(), (i as f64 * 0.3).cos()))
            .collect();
        let mut got = x.clone();
        f64::fft(&mut got, false);
        for (k, g) in got.iter().enumerate() {
            let mut want = Complex::new(0.0, 0.0);
            for (n, v) in x.iter().enumerate() {
                let ang = -2.0 * std::f64::consts::PI * (k * n) as f64 / 16.0;
                want += v * Complex::new(ang.cos(), ang.sin());
            }
            assert!((g - want).norm() < 1e-9, "bin {k}: {g} vs {want}");
        }
    }

    #[test]
    fn fft_round_trip_recovers_input() {
        let x: Vec<Complex<f32>> = (0..64)
            .map(|i| Complex::new((i as f32).sin(), 0.0))
            .collect();
        let mut buf = x.clone();
        f32::fft(&mut buf, false);
        f32::fft(&mut buf, true);
        for (a, b) in buf.iter().zip(&x) {
            assert!((a / 64.0 - b).norm() < 1e-5);
        }
    }
}
