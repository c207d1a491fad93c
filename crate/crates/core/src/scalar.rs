//! Scalar abstraction shared by every model function.
//!
//! Lagrangians and constraint residuals are written once against [`Scalar`]
//! and evaluated with plain floats or with [`Dual`](crate::dual::Dual) numbers
//! (nested for second derivatives).

use std::fmt::Debug;
use std::iter::Sum;
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

use num_traits::{Float, FromPrimitive, NumCast};

/// Real-like number usable in model code: `f32`, `f64`, or a dual number over one.
pub trait Scalar:
    Float
    + FromPrimitive
    + NumCast
    + Debug
    + Default
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + Sum
    + Send
    + Sync
    + 'static
{
    /// Lift an `f64` constant (a model parameter, say) into this scalar.
    fn cst(x: f64) -> Self;

    /// The underlying real value, discarding any infinitesimal parts.
    fn re(&self) -> f64;
}

impl Scalar for f64 {
    #[inline]
    fn cst(x: f64) -> Self {
        x
    }

    #[inline]
    fn re(&self) -> f64 {
        *self
    }
}

impl Scalar for f32 {
    #[inline]
    fn cst(x: f64) -> Self {
        x as f32
    }

    #[inline]
    fn re(&self) -> f64 {
        *self as f64
    }
}

/// Converts a slice of `f64` into constants of `S`.
pub fn lift<S: Scalar>(xs: &[f64]) -> Vec<S> {
    xs.iter().map(|&x| S::cst(x)).collect()
}

/// Real parts of a slice of scalars.
pub fn values<S: Scalar>(xs: &[S]) -> Vec<f64> {
    xs.iter().map(Scalar::re).collect()
}

/// Dot product of two equally long slices.
pub fn dot<S: Scalar>(a: &[S], b: &[S]) -> S {
    a.iter().zip(b).map(|(&x, &y)| x * y).sum()
}
