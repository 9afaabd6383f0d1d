//! Numeric abstraction shared by every solver in the crate.
//!
//! Two arithmetic modes are supported: `f64` with an absolute tolerance of
//! `1e-9`, and arbitrary-precision rationals where every comparison is exact.

use std::fmt;
use std::iter::Sum;
use std::ops::{AddAssign, MulAssign, SubAssign};

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{Num, Signed, ToPrimitive, Zero};
use serde::{Deserialize, Serialize};

/// Absolute tolerance used by float-mode comparisons.
pub const FLOAT_TOL: f64 = 1e-9;

/// Fractions below this are treated as zero before slot packing in float mode.
pub const FLOAT_FRACTION_FLOOR: f64 = 1e-12;

/// Which number type a computation runs in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Arithmetic {
    #[default]
    Float,
    Exact,
}

pub trait Scalar:
    Num
    + Signed
    + Clone
    + PartialOrd
    + fmt::Debug
    + fmt::Display
    + AddAssign
    + SubAssign
    + MulAssign
    + Sum
    + Send
    + Sync
    + 'static
{
    const EXACT: bool;

    /// Absolute comparison tolerance; zero for exact arithmetic.
    fn tol() -> Self;

    /// Threshold under which a fraction is considered absent.
    fn fraction_floor() -> Self;

    /// Converts a finite float. Exact for rationals (every finite f64 is a dyadic rational).
    fn from_f64(x: f64) -> Self;

    fn to_f64(&self) -> f64;

    fn to_rational(&self) -> BigRational;

    fn from_rational(r: &BigRational) -> Self;

    fn from_usize(k: usize) -> Self {
        Self::from_f64(k as f64)
    }

    /// `self <= other` up to tolerance.
    fn le_tol(&self, other: &Self) -> bool {
        *self <= other.clone() + Self::tol()
    }

    /// `self >= other` up to tolerance.
    fn ge_tol(&self, other: &Self) -> bool {
        self.clone() + Self::tol() >= *other
    }

    fn approx_eq(&self, other: &Self) -> bool {
        (self.clone() - other.clone()).abs() <= Self::tol()
    }

    fn is_pos_tol(&self) -> bool {
        *self > Self::tol()
    }

    fn is_neg_tol(&self) -> bool {
        *self < -Self::tol()
    }

    fn is_zero_tol(&self) -> bool {
        self.abs() <= Self::tol()
    }

    fn min_of(a: Self, b: Self) -> Self {
        if a <= b {
            a
        } else {
            b
        }
    }

    fn max_of(a: Self, b: Self) -> Self {
        if a >= b {
            a
        } else {
            b
        }
    }
}

impl Scalar for f64 {
    const EXACT: bool = false;

    fn tol() -> Self {
        FLOAT_TOL
    }

    fn fraction_floor() -> Self {
        FLOAT_FRACTION_FLOOR
    }

    fn from_f64(x: f64) -> Self {
        x
    }

    fn to_f64(&self) -> f64 {
        *self
    }

    fn to_rational(&self) -> BigRational {
        BigRational::from_float(*self).expect("non-finite value cannot be made exact")
    }

    fn from_rational(r: &BigRational) -> Self {
        ToPrimitive::to_f64(r).unwrap_or(f64::NAN)
    }
}

impl Scalar for BigRational {
    const EXACT: bool = true;

    fn tol() -> Self {
        BigRational::zero()
    }

    fn fraction_floor() -> Self {
        BigRational::zero()
    }

    fn from_f64(x: f64) -> Self {
        BigRational::from_float(x).expect("non-finite value cannot be made exact")
    }

    fn to_f64(&self) -> f64 {
        ToPrimitive::to_f64(self).unwrap_or(f64::NAN)
    }

    fn to_rational(&self) -> BigRational {
        self.clone()
    }

    fn from_rational(r: &BigRational) -> Self {
        r.clone()
    }

    fn from_usize(k: usize) -> Self {
        BigRational::from_integer(BigInt::from(k))
    }
}

/// Shorthand for building exact values in tests and fixtures: `ratio(3, 2)` is 3/2.
pub fn ratio(numer: i64, denom: i64) -> BigRational {
    BigRational::new(BigInt::from(numer), BigInt::from(denom))
}

pub fn convert_vec<A: Scalar, B: Scalar>(xs: &[A]) -> Vec<B> {
    xs.iter().map(convert).collect()
}

pub fn convert_matrix<A: Scalar, B: Scalar>(xs: &[Vec<A>]) -> Vec<Vec<B>> {
    xs.iter().map(|row| convert_vec(row)).collect()
}

/// Converts between scalar types. Float to rational is exact; rational to float rounds.
pub fn convert<A: Scalar, B: Scalar>(x: &A) -> B {
    if A::EXACT || B::EXACT {
        B::from_rational(&x.to_rational())
    } else {
        B::from_f64(x.to_f64())
    }
}
