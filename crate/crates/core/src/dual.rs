//! Forward-mode dual numbers.
//!
//! `Dual<T>` carries a value and one directional derivative. Nesting
//! (`Dual<Dual<f64>>`) yields mixed second derivatives, which is how mass
//! matrices and lifted constraint rows are obtained.
//!
//! Comparisons look at the value only, so model code that branches on a sign
//! (`signum`, `abs`) differentiates the active branch.

use std::cmp::Ordering;
use std::iter::{Product, Sum};
use std::num::FpCategory;
use std::ops::{
    Add, AddAssign, Div, DivAssign, Mul, MulAssign, Neg, Rem, RemAssign, Sub, SubAssign,
};

use num_traits::{Float, FromPrimitive, Num, NumCast, One, ToPrimitive, Zero};

use crate::scalar::Scalar;

/// `re + eps·ε` with `ε² = 0`.
#[derive(Clone, Copy, Debug, Default)]
pub struct Dual<T> {
    pub re: T,
    pub eps: T,
}

impl<T: Scalar> Dual<T> {
    #[inline]
    pub fn new(re: T, eps: T) -> Self {
        Dual { re, eps }
    }

    /// A constant (zero derivative).
    #[inline]
    pub fn constant(re: T) -> Self {
        Dual { re, eps: T::zero() }
    }

    /// An independent variable (unit derivative).
    #[inline]
    pub fn variable(re: T) -> Self {
        Dual { re, eps: T::one() }
    }

    #[inline]
    fn chain(self, f: T, df: T) -> Self {
        Dual { re: f, eps: self.eps * df }
    }
}

impl<T: Scalar> PartialEq for Dual<T> {
    fn eq(&self, other: &Self) -> bool {
        self.re == other.re
    }
}

impl<T: Scalar> PartialOrd for Dual<T> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        self.re.partial_cmp(&other.re)
    }
}

impl<T: Scalar> Neg for Dual<T> {
    type Output = Self;
    #[inline]
    fn neg(self) -> Self {
        Dual::new(-self.re, -self.eps)
    }
}

impl<T: Scalar> Add for Dual<T> {
    type Output = Self;
    #[inline]
    fn add(self, rhs: Self) -> Self {
        Dual::new(self.re + rhs.re, self.eps + rhs.eps)
    }
}

impl<T: Scalar> Sub for Dual<T> {
    type Output = Self;
    #[inline]
    fn sub(self, rhs: Self) -> Self {
        Dual::new(self.re - rhs.re, self.eps - rhs.eps)
    }
}

impl<T: Scalar> Mul for Dual<T> {
    type Output = Self;
    #[inline]
    fn mul(self, rhs: Self) -> Self {
        Dual::new(self.re * rhs.re, self.re * rhs.eps + self.eps * rhs.re)
    }
}

impl<T: Scalar> Div for Dual<T> {
    type Output = Self;
    #[inline]
    fn div(self, rhs: Self) -> Self {
        let inv = T::one() / rhs.re;
        let re = self.re * inv;
        Dual::new(re, (self.eps - re * rhs.eps) * inv)
    }
}

impl<T: Scalar> Rem for Dual<T> {
    type Output = Self;
    /// `a % b = a - b·trunc(a/b)`; the truncation is locally constant.
    fn rem(self, rhs: Self) -> Self {
        let q = (self.re / rhs.re).trunc();
        Dual::new(self.re % rhs.re, self.eps - rhs.eps * q)
    }
}

macro_rules! assign_op {
    ($tr:ident, $f:ident, $op:tt) => {
        impl<T: Scalar> $tr for Dual<T> {
            #[inline]
            fn $f(&mut self, rhs: Self) {
                *self = *self $op rhs;
            }
        }
    };
}
assign_op!(AddAssign, add_assign, +);
assign_op!(SubAssign, sub_assign, -);
assign_op!(MulAssign, mul_assign, *);
assign_op!(DivAssign, div_assign, /);
assign_op!(RemAssign, rem_assign, %);

impl<T: Scalar> Sum for Dual<T> {
    fn sum<I: Iterator<Item = Self>>(iter: I) -> Self {
        iter.fold(Self::zero(), |a, b| a + b)
    }
}

impl<T: Scalar> Product for Dual<T> {
    fn product<I: Iterator<Item = Self>>(iter: I) -> Self {
        iter.fold(Self::one(), |a, b| a * b)
    }
}

impl<T: Scalar> Zero for Dual<T> {
    fn zero() -> Self {
        Dual::constant(T::zero())
    }
    fn is_zero(&self) -> bool {
        self.re.is_zero() && self.eps.is_zero()
    }
}

impl<T: Scalar> One for Dual<T> {
    fn one() -> Self {
        Dual::constant(T::one())
    }
}

impl<T: Scalar> Num for Dual<T> {
    type FromStrRadixErr = <T as Num>::FromStrRadixErr;
    fn from_str_radix(s: &str, radix: u32) -> Result<Self, Self::FromStrRadixErr> {
        T::from_str_radix(s, radix).map(Dual::constant)
    }
}

impl<T: Scalar> ToPrimitive for Dual<T> {
    fn to_i64(&self) -> Option<i64> {
        self.re.to_i64()
    }
    fn to_u64(&self) -> Option<u64> {
        self.re.to_u64()
    }
    fn to_f64(&self) -> Option<f64> {
        self.re.to_f64()
    }
}

impl<T: Scalar> NumCast for Dual<T> {
    fn from<N: ToPrimitive>(n: N) -> Option<Self> {
        <T as NumCast>::from(n).map(Dual::constant)
    }
}

impl<T: Scalar> FromPrimitive for Dual<T> {
    fn from_i64(n: i64) -> Option<Self> {
        T::from_i64(n).map(Dual::constant)
    }
    fn from_u64(n: u64) -> Option<Self> {
        T::from_u64(n).map(Dual::constant)
    }
    fn from_f64(n: f64) -> Option<Self> {
        T::from_f64(n).map(Dual::constant)
    }
}

macro_rules! const_fn {
    ($($f:ident),*) => {
        $(fn $f() -> Self { Dual::constant(T::$f()) })*
    };
}

macro_rules! piecewise_constant {
    ($($f:ident),*) => {
        $(fn $f(self) -> Self { Dual::constant(self.re.$f()) })*
    };
}

macro_rules! predicate {
    ($($f:ident),*) => {
        $(fn $f(self) -> bool { self.re.$f() })*
    };
}

impl<T: Scalar> Float for Dual<T> {
    const_fn!(nan, infinity, neg_infinity, neg_zero, min_value, min_positive_value, max_value, epsilon);
    piecewise_constant!(floor, ceil, round, trunc);
    predicate!(is_nan, is_infinite, is_finite, is_normal, is_sign_positive, is_sign_negative);

    fn classify(self) -> FpCategory {
        self.re.classify()
    }

    fn fract(self) -> Self {
        Dual::new(self.re.fract(), self.eps)
    }

    fn abs(self) -> Self {
        if self.re.is_sign_negative() {
            -self
        } else {
            self
        }
    }

    fn signum(self) -> Self {
        Dual::constant(self.re.signum())
    }

    fn mul_add(self, a: Self, b: Self) -> Self {
        self * a + b
    }

    fn recip(self) -> Self {
        Self::one() / self
    }

    fn powi(self, n: i32) -> Self {
        if n == 0 {
            return Self::one();
        }
        let nf = T::from_i32(n).unwrap();
        self.chain(self.re.powi(n), nf * self.re.powi(n - 1))
    }

    fn powf(self, n: Self) -> Self {
        // d(x^y) = y x^(y-1) dx + x^y ln(x) dy; the second term is dropped when dy = 0
        // so that negative bases with constant exponents still work.
        let val = self.re.powf(n.re);
        let dx = if self.eps.is_zero() {
            T::zero()
        } else {
            n.re * self.re.powf(n.re - T::one()) * self.eps
        };
        let dy = if n.eps.is_zero() {
            T::zero()
        } else {
            val * self.re.ln() * n.eps
        };
        Dual::new(val, dx + dy)
    }

    fn sqrt(self) -> Self {
        let s = self.re.sqrt();
        self.chain(s, T::one() / (s + s))
    }

    fn exp(self) -> Self {
        let e = self.re.exp();
        self.chain(e, e)
    }

    fn exp2(self) -> Self {
        let e = self.re.exp2();
        self.chain(e, e * T::cst(std::f64::consts::LN_2))
    }

    fn ln(self) -> Self {
        self.chain(self.re.ln(), self.re.recip())
    }

    fn log(self, base: Self) -> Self {
        self.ln() / base.ln()
    }

    fn log2(self) -> Self {
        self.chain(self.re.log2(), (self.re * T::cst(std::f64::consts::LN_2)).recip())
    }

    fn log10(self) -> Self {
        self.chain(self.re.log10(), (self.re * T::cst(std::f64::consts::LN_10)).recip())
    }

    fn max(self, other: Self) -> Self {
        if self.re >= other.re {
            self
        } else {
            other
        }
    }

    fn min(self, other: Self) -> Self {
        if self.re <= other.re {
            self
        } else {
            other
        }
    }

    fn abs_sub(self, other: Self) -> Self {
        if self.re > other.re {
            self - other
        } else {
            Self::zero()
        }
    }

    fn cbrt(self) -> Self {
        let c = self.re.cbrt();
        self.chain(c, (T::cst(3.0) * c * c).recip())
    }

    fn hypot(self, other: Self) -> Self {
        (self * self + other * other).sqrt()
    }

    fn sin(self) -> Self {
        let (s, c) = self.re.sin_cos();
        self.chain(s, c)
    }

    fn cos(self) -> Self {
        let (s, c) = self.re.sin_cos();
        self.chain(c, -s)
    }

    fn tan(self) -> Self {
        let t = self.re.tan();
        self.chain(t, T::one() + t * t)
    }

    fn asin(self) -> Self {
        self.chain(self.re.asin(), (T::one() - self.re * self.re).sqrt().recip())
    }

    fn acos(self) -> Self {
        self.chain(self.re.acos(), -(T::one() - self.re * self.re).sqrt().recip())
    }

    fn atan(self) -> Self {
        self.chain(self.re.atan(), (T::one() + self.re * self.re).recip())
    }

    fn atan2(self, other: Self) -> Self {
        let d = self.re * self.re + other.re * other.re;
        Dual::new(
            self.re.atan2(other.re),
            (other.re * self.eps - self.re * other.eps) / d,
        )
    }

    fn sin_cos(self) -> (Self, Self) {
        (self.sin(), self.cos())
    }

    fn exp_m1(self) -> Self {
        self.chain(self.re.exp_m1(), self.re.exp())
    }

    fn ln_1p(self) -> Self {
        self.chain(self.re.ln_1p(), (T::one() + self.re).recip())
    }

    fn sinh(self) -> Self {
        self.chain(self.re.sinh(), self.re.cosh())
    }

    fn cosh(self) -> Self {
        self.chain(self.re.cosh(), self.re.sinh())
    }

    fn tanh(self) -> Self {
        let t = self.re.tanh();
        self.chain(t, T::one() - t * t)
    }

    fn asinh(self) -> Self {
        self.chain(self.re.asinh(), (self.re * self.re + T::one()).sqrt().recip())
    }

    fn acosh(self) -> Self {
        self.chain(self.re.acosh(), (self.re * self.re - T::one()).sqrt().recip())
    }

    fn atanh(self) -> Self {
        self.chain(self.re.atanh(), (T::one() - self.re * self.re).recip())
    }

    fn integer_decode(self) -> (u64, i16, i8) {
        self.re.integer_decode()
    }
}

impl<T: Scalar> Scalar for Dual<T> {
    #[inline]
    fn cst(x: f64) -> Self {
        Dual::constant(T::cst(x))
    }

    #[inline]
    fn re(&self) -> f64 {
        self.re.re()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    type D = Dual<f64>;

    fn d(f: impl Fn(D) -> D, x: f64) -> f64 {
        f(D::variable(x)).eps
    }

    fn central(f: impl Fn(f64) -> f64, x: f64) -> f64 {
        let h = 1e-6 * x.abs().max(1.0);
        (f(x + h) - f(x - h)) / (2.0 * h)
    }

    #[test]
    fn elementary_derivatives_match_central_differences() {
        let x = 0.37;
        let cases: Vec<(Box<dyn Fn(D) -> D>, Box<dyn Fn(f64) -> f64>)> = vec![
            (Box::new(|x| x.sin() * x.cos()), Box::new(|x| x.sin() * x.cos())),
            (Box::new(|x| x.tan()), Box::new(|x| x.tan())),
            (Box::new(|x| x.exp() / (x + D::cst(2.0))), Box::new(|x| x.exp() / (x + 2.0))),
            (Box::new(|x| x.sqrt().ln()), Box::new(|x| x.sqrt().ln())),
            (Box::new(|x| x.powi(5)), Box::new(|x| x.powi(5))),
            (Box::new(|x| x.powf(D::cst(2.5))), Box::new(|x| x.powf(2.5))),
            (Box::new(|x| x.atan2(D::cst(0.3))), Box::new(|x| x.atan2(0.3))),
            (Box::new(|x| x.asin() + x.acos() * x.atan()), Box::new(|x| x.asin() + x.acos() * x.atan())),
            (Box::new(|x| x.tanh() + x.sinh() - x.cosh()), Box::new(|x| x.tanh() + x.sinh() - x.cosh())),
            (Box::new(|x| x.cbrt().hypot(x)), Box::new(|x| x.cbrt().hypot(x))),
        ];
        for (f, g) in &cases {
            assert_relative_eq!(d(f, x), central(g, x), max_relative = 1e-7);
        }
    }

    #[test]
    fn nested_duals_give_second_derivatives() {
        // f(x) = x^3 sin x ; f'' = 6x sin x + 6x^2 cos x - x^3 sin x
        let x = 1.3;
        let v = Dual::new(D::variable(x), D::constant(1.0));
        let f = v.powi(3) * v.sin();
        let exact = 6.0 * x * x.sin() + 6.0 * x * x * x.cos() - x.powi(3) * x.sin();
        assert_relative_eq!(f.eps.eps, exact, max_relative = 1e-12);
    }

    #[test]
    fn signum_is_locally_constant() {
        let x = D::variable(-2.0);
        assert_eq!(x.signum().re, -1.0);
        assert_eq!(x.signum().eps, 0.0);
        assert_eq!(x.abs().eps, -1.0);
    }
}
