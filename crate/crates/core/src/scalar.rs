//! Scalar abstraction shared by every numerical routine in the crate.

use std::fmt::{Debug, Display};

use nalgebra::RealField;
use num_complex::Complex;
use num_traits::{FromPrimitive, ToPrimitive};

/// Real floating-point type the dynamics are generic over (`f32` or `f64`).
///
/// Tolerances scale with the precision of the type so that invariant checks
/// stay meaningful in single precision.
pub trait Real:
    RealField + Copy + FromPrimitive + ToPrimitive + Display + Debug + Send + Sync + 'static
{
    /// Hermiticity tolerance for matrices that are Hermitian by construction.
    const HERMITIAN_TOL: f64;
    /// Allowed deviation of a density-matrix trace from one.
    const TRACE_TOL: f64;
    /// Most negative eigenvalue accepted as numerically positive.
    const POSITIVITY_TOL: f64;
    /// Normalization tolerance for amplitudes.
    const NORM_TOL: f64;

    #[inline]
    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("f64 literal representable")
    }

    #[inline]
    fn to_f64_lossy(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }
}

impl Real for f64 {
    const HERMITIAN_TOL: f64 = 1e-12;
    const TRACE_TOL: f64 = 1e-9;
    const POSITIVITY_TOL: f64 = 1e-7;
    const NORM_TOL: f64 = 1e-12;
}

impl Real for f32 {
    const HERMITIAN_TOL: f64 = 1e-5;
    const TRACE_TOL: f64 = 1e-4;
    const POSITIVITY_TOL: f64 = 1e-4;
    const NORM_TOL: f64 = 1e-5;
}

/// Complex number over a [`Real`] scalar.
pub type C<T> = Complex<T>;

#[inline]
pub(crate) fn czero<T: Real>() -> C<T> {
    Complex::new(T::zero(), T::zero())
}

#[inline]
pub(crate) fn is_finite<T: Real>(z: &C<T>) -> bool {
    z.re.is_finite() && z.im.is_finite()
}

/// Multiply by `-i`.
#[inline]
pub(crate) fn mul_neg_i<T: Real>(z: C<T>) -> C<T> {
    Complex::new(z.im, -z.re)
}

/// Multiply by `+i`.
#[inline]
pub(crate) fn mul_i<T: Real>(z: C<T>) -> C<T> {
    Complex::new(-z.im, z.re)
}

/// Modulus of a complex number over a [`Real`] scalar.
pub trait Modulus<T> {
    fn cabs(&self) -> T;
}

impl<T: Real> Modulus<T> for C<T> {
    #[inline]
    fn cabs(&self) -> T {
        self.re.hypot(self.im)
    }
}
