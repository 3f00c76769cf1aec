//! Truncated power series in `t`.

use std::fmt;
use std::ops::{Add, Mul, Neg, Sub};

use crate::error::{Error, Result};
use crate::scalar::{Rational, Scalar};

/// `c₀ + c₁t + … + c_T t^T + O(t^{T+1})`.
///
/// The coefficient list always has `T + 1` entries; terms above `T` are
/// unknown, not zero. Binary operations return the smaller of the two orders.
#[derive(Clone, PartialEq)]
pub struct TruncatedSeries<S> {
    coeffs: Vec<S>,
}

impl<S: Scalar> TruncatedSeries<S> {
    /// Builds a series from its coefficients; the order is `coeffs.len() - 1`.
    pub fn from_coeffs(coeffs: Vec<S>) -> Self {
        assert!(!coeffs.is_empty(), "a truncated series has at least one coefficient");
        Self { coeffs }
    }

    pub fn zero(order: usize) -> Self {
        Self {
            coeffs: vec![S::zero(); order + 1],
        }
    }

    pub fn constant(c: S, order: usize) -> Self {
        let mut s = Self::zero(order);
        s.coeffs[0] = c;
        s
    }

    pub fn one(order: usize) -> Self {
        Self::constant(S::one(), order)
    }

    /// `c·t^m`; vanishes inside the window when `m > order`.
    pub fn monomial(c: S, m: usize, order: usize) -> Self {
        let mut s = Self::zero(order);
        if m <= order {
            s.coeffs[m] = c;
        }
        s
    }

    /// The variable `t` itself.
    pub fn t(order: usize) -> Self {
        Self::monomial(S::one(), 1, order)
    }

    pub fn order(&self) -> usize {
        self.coeffs.len() - 1
    }

    pub fn coeffs(&self) -> &[S] {
        &self.coeffs
    }

    pub fn coeff(&self, m: usize) -> Option<&S> {
        self.coeffs.get(m)
    }

    pub fn is_zero(&self) -> bool {
        self.coeffs.iter().all(|c| c.is_zero())
    }

    pub fn is_negligible(&self, eps: f64) -> bool {
        self.coeffs.iter().all(|c| c.is_negligible(eps))
    }

    /// Constant in `t` up to the known order.
    pub fn is_constant(&self) -> bool {
        self.coeffs[1..].iter().all(|c| c.is_zero())
    }

    pub fn truncate(&self, order: usize) -> Self {
        let order = order.min(self.order());
        Self {
            coeffs: self.coeffs[..=order].to_vec(),
        }
    }

    pub fn scale(&self, c: &S) -> Self {
        Self {
            coeffs: self.coeffs.iter().map(|a| a.clone() * c.clone()).collect(),
        }
    }

    /// `f′`, one order shorter.
    pub fn derive(&self) -> Result<Self> {
        if self.order() == 0 {
            return Err(Error::EmptySeries);
        }
        let coeffs = self.coeffs[1..]
            .iter()
            .enumerate()
            .map(|(m, c)| c.clone() * S::from_i64(m as i64 + 1))
            .collect();
        Ok(Self { coeffs })
    }

    /// `f^{(i)}`, or `None` when nothing of it is known.
    pub fn nth_derivative(&self, i: usize) -> Option<Self> {
        if i > self.order() {
            return None;
        }
        let mut out = Vec::with_capacity(self.order() + 1 - i);
        for m in i..=self.order() {
            // m! / (m-i)!
            let mut f = S::one();
            for k in (m - i + 1)..=m {
                f = f * S::from_i64(k as i64);
            }
            out.push(self.coeffs[m].clone() * f);
        }
        Some(Self { coeffs: out })
    }

    /// Antiderivative vanishing at `t = 0`; gains one order.
    pub fn integrate(&self) -> Self {
        let mut coeffs = Vec::with_capacity(self.coeffs.len() + 1);
        coeffs.push(S::zero());
        for (m, c) in self.coeffs.iter().enumerate() {
            coeffs.push(c.clone() / S::from_i64(m as i64 + 1));
        }
        Self { coeffs }
    }

    /// Multiplicative inverse when the constant term is invertible.
    pub fn inverse(&self) -> Result<Self> {
        let c0 = &self.coeffs[0];
        if c0.is_zero() {
            return Err(Error::NotInvertible("series with zero constant term".into()));
        }
        let inv0 = S::one() / c0.clone();
        let mut out = vec![inv0.clone()];
        for m in 1..=self.order() {
            let mut acc = S::zero();
            for k in 1..=m {
                acc = acc + self.coeffs[k].clone() * out[m - k].clone();
            }
            out.push(-(acc * inv0.clone()));
        }
        Ok(Self { coeffs: out })
    }

    /// Agreement on the common known order.
    pub fn agrees_with(&self, other: &Self) -> bool {
        let n = self.order().min(other.order());
        self.coeffs[..=n] == other.coeffs[..=n]
    }

    pub fn agrees_within(&self, other: &Self, eps: f64) -> bool {
        let n = self.order().min(other.order());
        self.coeffs[..=n]
            .iter()
            .zip(&other.coeffs[..=n])
            .all(|(a, b)| a.approx_eq(b, eps))
    }

    /// Value at a point, using the known terms.
    pub fn eval(&self, t: &S) -> S {
        self.coeffs
            .iter()
            .rev()
            .fold(S::zero(), |acc, c| acc * t.clone() + c.clone())
    }

    pub fn map<T: Scalar>(&self, f: impl Fn(&S) -> T) -> TruncatedSeries<T> {
        TruncatedSeries {
            coeffs: self.coeffs.iter().map(f).collect(),
        }
    }
}

impl TruncatedSeries<Rational> {
    pub fn from_ints(coeffs: &[i64]) -> Self {
        Self::from_coeffs(coeffs.iter().map(|&c| Rational::from_i64(c)).collect())
    }
}

impl<S: Scalar> Add for &TruncatedSeries<S> {
    type Output = TruncatedSeries<S>;

    fn add(self, rhs: Self) -> TruncatedSeries<S> {
        let n = self.order().min(rhs.order());
        TruncatedSeries {
            coeffs: (0..=n)
                .map(|m| self.coeffs[m].clone() + rhs.coeffs[m].clone())
                .collect(),
        }
    }
}

impl<S: Scalar> Sub for &TruncatedSeries<S> {
    type Output = TruncatedSeries<S>;

    fn sub(self, rhs: Self) -> TruncatedSeries<S> {
        let n = self.order().min(rhs.order());
        TruncatedSeries {
            coeffs: (0..=n)
                .map(|m| self.coeffs[m].clone() - rhs.coeffs[m].clone())
                .collect(),
        }
    }
}

impl<S: Scalar> Mul for &TruncatedSeries<S> {
    type Output = TruncatedSeries<S>;

    fn mul(self, rhs: Self) -> TruncatedSeries<S> {
        let n = self.order().min(rhs.order());
        let mut coeffs = vec![S::zero(); n + 1];
        for (i, a) in self.coeffs.iter().enumerate().take(n + 1) {
            if a.is_zero() {
                continue;
            }
            for (j, b) in rhs.coeffs.iter().enumerate().take(n + 1 - i) {
                if b.is_zero() {
                    continue;
                }
                coeffs[i + j] = coeffs[i + j].clone() + a.clone() * b.clone();
            }
        }
        TruncatedSeries { coeffs }
    }
}

impl<S: Scalar> Neg for &TruncatedSeries<S> {
    type Output = TruncatedSeries<S>;

    fn neg(self) -> TruncatedSeries<S> {
        TruncatedSeries {
            coeffs: self.coeffs.iter().map(|c| -c.clone()).collect(),
        }
    }
}

impl<S: Scalar> fmt::Debug for TruncatedSeries<S> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut first = true;
        for (m, c) in self.coeffs.iter().enumerate() {
            if c.is_zero() {
                continue;
            }
            if !first {
                write!(f, " + ")?;
            }
            first = false;
            match m {
                0 => write!(f, "{}", c.to_literal())?,
                1 => write!(f, "({})t", c.to_literal())?,
                _ => write!(f, "({})t^{m}", c.to_literal())?,
            }
        }
        if first {
            write!(f, "0")?;
        }
        write!(f, " + O(t^{})", self.order() + 1)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scalar::rat;

    type Q = TruncatedSeries<Rational>;

    #[test]
    fn derive_power_rule() {
        let f = Q::from_ints(&[1, 1, 1]);
        let d = f.derive().unwrap();
        assert_eq!(d, Q::from_ints(&[1, 2]));
        assert_eq!(d.order(), 1);

        let c = Q::constant(rat(7, 3), 4);
        assert!(c.derive().unwrap().is_zero());

        let cube = Q::monomial(rat(1, 6), 3, 3);
        assert_eq!(cube.derive().unwrap(), Q::monomial(rat(1, 2), 2, 2));
    }

    #[test]
    fn derive_of_order_zero_is_an_error() {
        assert!(matches!(Q::one(0).derive(), Err(Error::EmptySeries)));
    }

    #[test]
    fn binary_ops_take_min_order() {
        let a = Q::from_ints(&[1, 2, 3, 4]);
        let b = Q::from_ints(&[1, -1]);
        assert_eq!((&a + &b).order(), 1);
        assert_eq!(&a * &b, Q::from_ints(&[1, 1]));
    }

    #[test]
    fn inverse_and_integral() {
        let a = Q::from_ints(&[2, 3, 0, 5]);
        let prod = &a * &a.inverse().unwrap();
        assert_eq!(prod, Q::one(3));
        let f = Q::from_ints(&[1, 2, 3]);
        assert_eq!(f.integrate().derive().unwrap(), f);
        assert_eq!(f.nth_derivative(2).unwrap(), Q::from_ints(&[6]));
        assert!(f.nth_derivative(3).is_none());
    }
}
