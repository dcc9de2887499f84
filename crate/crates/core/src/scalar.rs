//! Scalar abstraction shared by every numerical module.
//!
//! All field, form and operator code is written against [`Real`], which is
//! implemented for `f32` and `f64`. Dense linear algebra goes through
//! `nalgebra` and spectral derivatives through `rustfft`, so the bound is the
//! intersection of what both libraries require.

use nalgebra::{ComplexField, RealField};
use num_complex::Complex;
use rustfft::FftNum;

/// Floating point scalar: `f32` or `f64`.
pub trait Real: RealField + FftNum + Copy + Default {
    /// Lossy conversion from an `f64` literal.
    fn lit(x: f64) -> Self;
    /// Conversion to `f64` for reporting.
    fn to_f64(self) -> f64;
    /// Machine epsilon of the type.
    fn eps() -> Self;
}

impl Real for f64 {
    #[inline]
    fn lit(x: f64) -> Self {
        x
    }
    #[inline]
    fn to_f64(self) -> f64 {
        self
    }
    fn eps() -> Self {
        f64::EPSILON
    }
}

impl Real for f32 {
    #[inline]
    fn lit(x: f64) -> Self {
        x as f32
    }
    #[inline]
    fn to_f64(self) -> f64 {
        self as f64
    }
    fn eps() -> Self {
        f32::EPSILON
    }
}

// `Signed::abs` (via FftNum) and `ComplexField::abs` collide on method syntax.
#[inline]
pub fn abs<T: Real>(x: T) -> T {
    ComplexField::abs(x)
}

#[inline]
pub fn sqrt<T: Real>(x: T) -> T {
    ComplexField::sqrt(x)
}

#[inline]
pub fn from_usize<T: Real>(n: usize) -> T {
    T::lit(n as f64)
}

#[inline]
pub fn two_pi<T: Real>() -> T {
    T::two_pi()
}

#[inline]
pub fn cplx<T: Real>(re: T, im: T) -> Complex<T> {
    Complex::new(re, im)
}

#[inline]
pub fn cabs2<T: Real>(z: Complex<T>) -> T {
    z.re * z.re + z.im * z.im
}

/// Small positive floor for denominators.
#[inline]
pub fn tiny<T: Real>() -> T {
    T::eps() * T::eps()
}
