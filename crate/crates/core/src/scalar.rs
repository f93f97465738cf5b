//! Scalar abstraction shared by every numeric routine in the crate.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FloatConst, FromPrimitive, NumAssign, ToPrimitive};

/// Floating point type the estimators, fitters and simulators are generic over.
///
/// Implemented for `f32` and `f64`. Distribution functions (normal, chi-square)
/// are evaluated in `f64` and converted back.
pub trait Scalar:
    Float + FloatConst + NumAssign + FromPrimitive + ToPrimitive + Debug + Display + Default + Sum + Send + Sync + 'static
{
    /// Gradient infinity-norm below which the curve fitter declares convergence.
    const GRADIENT_TOL: f64;

    /// Converts an `f64` literal or intermediate result.
    #[inline]
    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("f64 is representable in every Scalar")
    }

    #[inline]
    fn from_count(n: usize) -> Self {
        Self::from_usize(n).expect("count is representable in every Scalar")
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self.to_f64().expect("Scalar converts to f64")
    }
}

impl Scalar for f32 {
    const GRADIENT_TOL: f64 = 1e-4;
}

impl Scalar for f64 {
    const GRADIENT_TOL: f64 = 1e-10;
}

/// Arithmetic mean; `None` for an empty slice.
pub fn mean<T: Scalar>(xs: &[T]) -> Option<T> {
    if xs.is_empty() {
        return None;
    }
    Some(xs.iter().copied().sum::<T>() / T::from_count(xs.len()))
}

/// Sample variance with `n - 1` denominator; `None` when fewer than two values.
pub fn sample_variance<T: Scalar>(xs: &[T]) -> Option<T> {
    if xs.len() < 2 {
        return None;
    }
    // Shifting by the first value makes identical inputs give exactly zero.
    let shift = xs[0];
    let m = xs.iter().map(|&x| x - shift).sum::<T>() / T::from_count(xs.len());
    let ss: T = xs.iter().map(|&x| (x - shift - m) * (x - shift - m)).sum();
    Some(ss / T::from_count(xs.len() - 1))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn moments_by_hand() {
        assert_eq!(mean(&[2.0_f64, 4.0]), Some(3.0));
        assert_eq!(sample_variance(&[2.0_f64, 4.0]), Some(2.0));
        assert_eq!(sample_variance(&[2.0_f32]), None);
        assert_eq!(mean::<f64>(&[]), None);
        assert_eq!(sample_variance(&[0.1_f64; 7]), Some(0.0));
    }
}
