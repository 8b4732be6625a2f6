//! Scalar abstraction shared by the numeric modules.

use std::fmt::{Debug, Display};

use ndarray::ScalarOperand;
use num_complex::Complex;
use num_traits::{Float, FloatConst, FromPrimitive, NumAssign, ToPrimitive};
use rustfft::FftNum;

/// Real floating-point scalar the DSP and estimation code is generic over.
///
/// Implemented for `f32` and `f64`.
pub trait Real:
    Float
    + FloatConst
    + FromPrimitive
    + ToPrimitive
    + NumAssign
    + FftNum
    + ScalarOperand
    + Default
    + Debug
    + Display
    + Send
    + Sync
    + 'static
{
    /// Relative tolerance used for convergence tests on this scalar type.
    ///
    /// `1e-12` for `f64`; a few ulps for lower precision types.
    fn convergence_tol() -> Self {
        let floor = Self::from_f64(1e-12).unwrap();
        let eps_based = Self::epsilon() * Self::from_f64(16.0).unwrap();
        floor.max(eps_based)
    }

    /// Lossy conversion from `f64`, used for literals and metadata.
    #[inline]
    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("f64 converts to every Real")
    }

    #[inline]
    fn to_f64_lossy(self) -> f64 {
        self.to_f64().expect("Real converts to f64")
    }
}

impl Real for f32 {}
impl Real for f64 {}

/// Complex value over a [`Real`] scalar.
pub type Cplx<T> = Complex<T>;

/// Squared modulus without the square root.
#[inline]
pub(crate) fn norm_sqr<T: Real>(z: Complex<T>) -> T {
    z.re * z.re + z.im * z.im
}
