//! Coefficient fields.
//!
//! Everything in this crate is generic over [`Scalar`]. Exact fields
//! ([`Rational`], [`GaussianRational`]) compare literally; floating fields
//! (`f32`, `f64`, [`Complex64`]) compare up to an absolute tolerance that the
//! caller supplies. Mixing the two in one computation is a type error.

use std::fmt;
use std::ops::{Add, Div, Mul, Neg, Sub};

use num_bigint::BigInt;
use num_complex::{Complex, Complex64};
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};

/// Exact rational numbers.
pub type Rational = BigRational;

/// Exact complex rationals `a + b·i`.
pub type GaussianRational = Complex<BigRational>;

/// Default absolute tolerance for floating comparisons and pivoting.
pub const DEFAULT_EPS: f64 = 1e-12;

/// Field of coefficients.
pub trait Scalar:
    Clone
    + fmt::Debug
    + PartialEq
    + Send
    + Sync
    + 'static
    + Zero
    + One
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
{
    /// `true` for fields where equality is literal.
    const EXACT: bool;

    fn from_rational(r: &Rational) -> Self;

    fn from_i64(n: i64) -> Self {
        Self::from_rational(&Rational::from_integer(BigInt::from(n)))
    }

    fn from_ratio(num: i64, den: i64) -> Self {
        Self::from_rational(&Rational::new(BigInt::from(num), BigInt::from(den)))
    }

    /// The imaginary unit, if the field has one.
    fn imag_unit() -> Option<Self>;

    /// Absolute value as a float, used for pivot selection and reporting.
    fn magnitude(&self) -> f64;

    fn to_c64(&self) -> Complex64;

    /// Zero test: literal in exact fields, `|a| <= eps` otherwise.
    fn is_negligible(&self, eps: f64) -> bool {
        if Self::EXACT {
            self.is_zero()
        } else {
            self.magnitude() <= eps
        }
    }

    fn approx_eq(&self, other: &Self, eps: f64) -> bool {
        (self.clone() - other.clone()).is_negligible(eps)
    }

    /// Text accepted by the operator parser that denotes this value.
    fn to_literal(&self) -> String;

    /// `true` if the literal needs parentheses when used as a factor.
    fn literal_is_compound(&self) -> bool {
        false
    }
}

fn rational_literal(r: &Rational) -> String {
    if r.denom().is_one() {
        r.numer().to_string()
    } else {
        format!("{}/{}", r.numer(), r.denom())
    }
}

impl Scalar for Rational {
    const EXACT: bool = true;

    fn from_rational(r: &Rational) -> Self {
        r.clone()
    }

    fn imag_unit() -> Option<Self> {
        None
    }

    fn magnitude(&self) -> f64 {
        self.abs().to_f64().unwrap_or(f64::INFINITY)
    }

    fn to_c64(&self) -> Complex64 {
        Complex64::new(self.to_f64().unwrap_or(f64::NAN), 0.0)
    }

    fn to_literal(&self) -> String {
        rational_literal(self)
    }
}

impl Scalar for GaussianRational {
    const EXACT: bool = true;

    fn from_rational(r: &Rational) -> Self {
        Complex::new(r.clone(), Rational::zero())
    }

    fn imag_unit() -> Option<Self> {
        Some(Complex::new(Rational::zero(), Rational::one()))
    }

    fn magnitude(&self) -> f64 {
        self.to_c64().norm()
    }

    fn to_c64(&self) -> Complex64 {
        Complex64::new(
            self.re.to_f64().unwrap_or(f64::NAN),
            self.im.to_f64().unwrap_or(f64::NAN),
        )
    }

    fn to_literal(&self) -> String {
        complex_literal(
            rational_literal(&self.re),
            self.re.is_zero(),
            rational_literal(&self.im.abs()),
            self.im.is_negative(),
            self.im.is_zero(),
        )
    }

    fn literal_is_compound(&self) -> bool {
        !self.re.is_zero() && !self.im.is_zero()
    }
}

fn complex_literal(re: String, re_zero: bool, im_abs: String, im_neg: bool, im_zero: bool) -> String {
    if im_zero {
        return re;
    }
    let im_term = if im_abs == "1" {
        "i".to_string()
    } else {
        format!("{im_abs}*i")
    };
    match (re_zero, im_neg) {
        (true, false) => im_term,
        (true, true) => format!("-{im_term}"),
        (false, false) => format!("{re} + {im_term}"),
        (false, true) => format!("{re} - {im_term}"),
    }
}

fn float_to_rational(x: f64) -> String {
    // Display for f64 never uses exponent notation and round-trips.
    format!("{x}")
}

impl Scalar for f64 {
    const EXACT: bool = false;

    fn from_rational(r: &Rational) -> Self {
        r.to_f64().unwrap_or(f64::NAN)
    }

    fn imag_unit() -> Option<Self> {
        None
    }

    fn magnitude(&self) -> f64 {
        self.abs()
    }

    fn to_c64(&self) -> Complex64 {
        Complex64::new(*self, 0.0)
    }

    fn to_literal(&self) -> String {
        float_to_rational(*self)
    }
}

impl Scalar for f32 {
    const EXACT: bool = false;

    fn from_rational(r: &Rational) -> Self {
        r.to_f32().unwrap_or(f32::NAN)
    }

    fn imag_unit() -> Option<Self> {
        None
    }

    fn magnitude(&self) -> f64 {
        f64::from(self.abs())
    }

    fn to_c64(&self) -> Complex64 {
        Complex64::new(f64::from(*self), 0.0)
    }

    fn to_literal(&self) -> String {
        format!("{self}")
    }
}

impl Scalar for Complex64 {
    const EXACT: bool = false;

    fn from_rational(r: &Rational) -> Self {
        Complex64::new(r.to_f64().unwrap_or(f64::NAN), 0.0)
    }

    fn imag_unit() -> Option<Self> {
        Some(Complex64::i())
    }

    fn magnitude(&self) -> f64 {
        self.norm()
    }

    fn to_c64(&self) -> Complex64 {
        *self
    }

    fn to_literal(&self) -> String {
        complex_literal(
            float_to_rational(self.re),
            self.re == 0.0,
            float_to_rational(self.im.abs()),
            self.im < 0.0,
            self.im == 0.0,
        )
    }

    fn literal_is_compound(&self) -> bool {
        self.re != 0.0 && self.im != 0.0
    }
}

/// Exact rational from a pair of machine integers.
pub fn rat(num: i64, den: i64) -> Rational {
    Rational::new(BigInt::from(num), BigInt::from(den))
}

/// Binomial coefficient `C(n, i)` for any integer `n` and `i >= 0`, computed
/// as the falling factorial `n(n-1)…(n-i+1) / i!`.
pub fn binomial(n: i64, i: usize) -> Rational {
    let mut num = BigInt::one();
    let mut den = BigInt::one();
    for k in 0..i as i64 {
        num *= BigInt::from(n - k);
        den *= BigInt::from(k + 1);
    }
    Rational::new(num, den)
}

/// `1/k!` as an exact rational.
pub fn inv_factorial(k: usize) -> Rational {
    let mut den = BigInt::one();
    for j in 2..=k as i64 {
        den *= BigInt::from(j);
    }
    Rational::new(BigInt::one(), den)
}
