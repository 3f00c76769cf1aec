//! Small dense matrices over any [`Scalar`], for exact rank, determinant and
//! inverse computations. Floating eigenproblems go through `nalgebra`.

use std::ops::{Index, IndexMut};

use crate::error::{Error, Result};
use crate::scalar::{Scalar, DEFAULT_EPS};

/// Pivots of magnitude in `(tol, GRAY_ZONE·tol)` are too close to call.
const GRAY_ZONE: f64 = 1e4;

/// Pivot tolerance used by floating eliminations; ignored for exact fields.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Pivoting {
    pub tol: f64,
}

impl Default for Pivoting {
    fn default() -> Self {
        Self { tol: DEFAULT_EPS }
    }
}

impl Pivoting {
    /// Partial pivoting that only rejects exact zeros.
    pub const EXACT_ZERO: Self = Self { tol: 0.0 };

    /// Chooses a pivot in column `col` among rows `from..`.
    fn choose<S: Scalar>(&self, m: &Mat<S>, col: usize, from: usize) -> Result<Option<usize>> {
        if S::EXACT {
            return Ok((from..m.rows).find(|&r| !m[(r, col)].is_zero()));
        }
        let best = (from..m.rows)
            .map(|r| (r, m[(r, col)].magnitude()))
            .max_by(|a, b| a.1.total_cmp(&b.1));
        match best {
            Some((r, mag)) if mag > GRAY_ZONE * self.tol => Ok(Some(r)),
            Some((_, mag)) if mag > self.tol => Err(Error::Indeterminate(format!(
                "pivot of size {mag:e} is within the tolerance band"
            ))),
            _ => Ok(None),
        }
    }
}

#[derive(Clone, PartialEq)]
pub struct Mat<S> {
    rows: usize,
    cols: usize,
    data: Vec<S>,
}

impl<S> Index<(usize, usize)> for Mat<S> {
    type Output = S;
    fn index(&self, (r, c): (usize, usize)) -> &S {
        &self.data[r * self.cols + c]
    }
}

impl<S> IndexMut<(usize, usize)> for Mat<S> {
    fn index_mut(&mut self, (r, c): (usize, usize)) -> &mut S {
        &mut self.data[r * self.cols + c]
    }
}

impl<S: Scalar> Mat<S> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![S::zero(); rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        Self::from_fn(n, n, |i, j| if i == j { S::one() } else { S::zero() })
    }

    pub fn from_fn(rows: usize, cols: usize, f: impl Fn(usize, usize) -> S) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Self { rows, cols, data }
    }

    pub fn diagonal(d: &[S]) -> Self {
        Self::from_fn(d.len(), d.len(), |i, j| if i == j { d[i].clone() } else { S::zero() })
    }

    pub fn from_rows(rows: Vec<Vec<S>>) -> Result<Self> {
        let r = rows.len();
        let c = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|row| row.len() != c) {
            return Err(Error::Dimension("ragged rows".into()));
        }
        Ok(Self {
            rows: r,
            cols: c,
            data: rows.into_iter().flatten().collect(),
        })
    }

    /// Matrix whose columns are the given vectors.
    pub fn from_columns(cols: &[Vec<S>], rows: usize) -> Self {
        Self::from_fn(rows, cols.len(), |i, j| cols[j][i].clone())
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    pub fn column(&self, j: usize) -> Vec<S> {
        (0..self.rows).map(|i| self[(i, j)].clone()).collect()
    }

    pub fn row_vec(&self, i: usize) -> Vec<S> {
        self.data[i * self.cols..(i + 1) * self.cols].to_vec()
    }

    pub fn to_rows(&self) -> Vec<Vec<S>> {
        (0..self.rows).map(|i| self.row_vec(i)).collect()
    }

    pub fn map<T: Scalar>(&self, f: impl Fn(&S) -> T) -> Mat<T> {
        Mat {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(f).collect(),
        }
    }

    pub fn transpose(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |i, j| self[(j, i)].clone())
    }

    fn check_same(&self, other: &Self) -> Result<()> {
        if self.rows != other.rows || self.cols != other.cols {
            return Err(Error::Dimension(format!(
                "{}x{} vs {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        Ok(())
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.check_same(other)?;
        Ok(Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&other.data).map(|(a, b)| a.clone() + b.clone()).collect(),
        })
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.check_same(other)?;
        Ok(Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&other.data).map(|(a, b)| a.clone() - b.clone()).collect(),
        })
    }

    pub fn scale(&self, c: &S) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|a| c.clone() * a.clone()).collect(),
        }
    }

    pub fn mul(&self, other: &Self) -> Result<Self> {
        if self.cols != other.rows {
            return Err(Error::Dimension(format!(
                "cannot multiply {}x{} by {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let mut out = Self::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = &self[(i, k)];
                if a.is_zero() {
                    continue;
                }
                for j in 0..other.cols {
                    let v = out[(i, j)].clone() + a.clone() * other[(k, j)].clone();
                    out[(i, j)] = v;
                }
            }
        }
        Ok(out)
    }

    pub fn mul_vec(&self, v: &[S]) -> Result<Vec<S>> {
        if v.len() != self.cols {
            return Err(Error::Dimension("vector length".into()));
        }
        Ok((0..self.rows)
            .map(|i| {
                (0..self.cols).fold(S::zero(), |acc, j| acc + self[(i, j)].clone() * v[j].clone())
            })
            .collect())
    }

    /// `self·other − other·self`.
    pub fn commutator(&self, other: &Self) -> Result<Self> {
        self.mul(other)?.sub(&other.mul(self)?)
    }

    pub fn trace(&self) -> S {
        (0..self.rows.min(self.cols)).fold(S::zero(), |acc, i| acc + self[(i, i)].clone())
    }

    pub fn pow(&self, k: u32) -> Result<Self> {
        let mut acc = Self::identity(self.rows);
        for _ in 0..k {
            acc = acc.mul(self)?;
        }
        Ok(acc)
    }

    pub fn is_zero(&self) -> bool {
        self.data.iter().all(|a| a.is_zero())
    }

    pub fn is_negligible(&self, eps: f64) -> bool {
        self.data.iter().all(|a| a.is_negligible(eps))
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().map(|a| a.magnitude()).fold(0.0, f64::max)
    }

    /// Row echelon form; returns the pivot columns and the sign of the row
    /// permutation.
    pub fn row_reduce(&mut self, piv: Pivoting) -> Result<(Vec<usize>, bool)> {
        let mut pivots = Vec::new();
        let mut odd = false;
        let mut r = 0;
        for c in 0..self.cols {
            if r == self.rows {
                break;
            }
            let Some(p) = piv.choose(self, c, r)? else {
                continue;
            };
            if p != r {
                for j in 0..self.cols {
                    self.data.swap(p * self.cols + j, r * self.cols + j);
                }
                odd = !odd;
            }
            let inv = S::one() / self[(r, c)].clone();
            for i in r + 1..self.rows {
                let f = self[(i, c)].clone() * inv.clone();
                if f.is_zero() {
                    continue;
                }
                for j in c..self.cols {
                    let v = self[(i, j)].clone() - f.clone() * self[(r, j)].clone();
                    self[(i, j)] = v;
                }
            }
            pivots.push(c);
            r += 1;
        }
        Ok((pivots, odd))
    }

    pub fn rank(&self, piv: Pivoting) -> Result<usize> {
        Ok(self.clone().row_reduce(piv)?.0.len())
    }

    pub fn determinant(&self) -> Result<S> {
        if !self.is_square() {
            return Err(Error::Dimension("determinant of a non-square matrix".into()));
        }
        let mut m = self.clone();
        let (pivots, odd) = m.row_reduce(Pivoting::EXACT_ZERO)?;
        if pivots.len() < self.rows {
            return Ok(S::zero());
        }
        let det = (0..self.rows).fold(S::one(), |acc, i| acc * m[(i, i)].clone());
        Ok(if odd { -det } else { det })
    }

    /// Solves `self · X = rhs` for square invertible `self`.
    pub fn solve(&self, rhs: &Self, piv: Pivoting) -> Result<Self> {
        if !self.is_square() || rhs.rows != self.rows {
            return Err(Error::Dimension("solve needs a square system".into()));
        }
        let n = self.rows;
        let mut aug = Self::from_fn(n, n + rhs.cols, |i, j| {
            if j < n {
                self[(i, j)].clone()
            } else {
                rhs[(i, j - n)].clone()
            }
        });
        let (pivots, _) = aug.row_reduce(piv)?;
        if pivots.len() < n || pivots[n - 1] != n - 1 {
            return Err(Error::Singular);
        }
        for c in (0..n).rev() {
            let inv = S::one() / aug[(c, c)].clone();
            for j in 0..aug.cols {
                let v = aug[(c, j)].clone() * inv.clone();
                aug[(c, j)] = v;
            }
            for i in 0..c {
                let f = aug[(i, c)].clone();
                if f.is_zero() {
                    continue;
                }
                for j in 0..aug.cols {
                    let v = aug[(i, j)].clone() - f.clone() * aug[(c, j)].clone();
                    aug[(i, j)] = v;
                }
            }
        }
        Ok(Self::from_fn(n, rhs.cols, |i, j| aug[(i, n + j)].clone()))
    }

    pub fn inverse(&self) -> Result<Self> {
        self.solve(&Self::identity(self.rows), Pivoting::EXACT_ZERO)
    }

    /// Coefficients `c₀..c_n` of `det(λ·Id − self) = Σ c_k λ^k` (Faddeev–LeVerrier).
    pub fn char_poly(&self) -> Result<Vec<S>> {
        if !self.is_square() {
            return Err(Error::Dimension("characteristic polynomial of a non-square matrix".into()));
        }
        let n = self.rows;
        let mut coeffs = vec![S::zero(); n + 1];
        coeffs[n] = S::one();
        let mut m = Self::zeros(n, n);
        for k in 1..=n {
            // M_k = A·M_{k-1} + c_{n-k+1}·I, c_{n-k} = −tr(A·M_k)/k
            let mut next = self.mul(&m)?;
            for i in 0..n {
                let v = next[(i, i)].clone() + coeffs[n - k + 1].clone();
                next[(i, i)] = v;
            }
            m = next;
            let am = self.mul(&m)?;
            coeffs[n - k] = -(am.trace() / S::from_i64(k as i64));
        }
        Ok(coeffs)
    }
}

impl<S: Scalar> std::fmt::Debug for Mat<S> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_list()
            .entries(self.to_rows().iter().map(|r| r.iter().map(|x| x.to_literal()).collect::<Vec<_>>()))
            .finish()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scalar::{rat, Rational};

    fn m(rows: &[&[i64]]) -> Mat<Rational> {
        Mat::from_rows(rows.iter().map(|r| r.iter().map(|&x| rat(x, 1)).collect()).collect()).unwrap()
    }

    #[test]
    fn det_inverse_rank() {
        let a = m(&[&[2, 1, 0], &[1, 3, 1], &[0, 1, 4]]);
        assert_eq!(a.determinant().unwrap(), rat(18, 1));
        let inv = a.inverse().unwrap();
        assert_eq!(a.mul(&inv).unwrap(), Mat::identity(3));
        let s = m(&[&[1, 2], &[2, 4]]);
        assert_eq!(s.rank(Pivoting::default()).unwrap(), 1);
        assert_eq!(s.inverse(), Err(Error::Singular));
        assert_eq!(m(&[&[0, 1], &[1, 0]]).determinant().unwrap(), rat(-1, 1));
    }

    #[test]
    fn characteristic_polynomial() {
        // (λ−1)(λ−2)(λ−3) = λ³ − 6λ² + 11λ − 6
        let a = m(&[&[1, 5, 7], &[0, 2, 9], &[0, 0, 3]]);
        let c = a.char_poly().unwrap();
        assert_eq!(c, vec![rat(-6, 1), rat(11, 1), rat(-6, 1), rat(1, 1)]);
    }

    #[test]
    fn float_gray_zone() {
        let a = Mat::from_rows(vec![vec![1.0, 0.0], vec![0.0, 1e-10]]).unwrap();
        assert!(matches!(a.rank(Pivoting::default()), Err(Error::Indeterminate(_))));
        let b = Mat::from_rows(vec![vec![1.0, 0.0], vec![0.0, 1e-14]]).unwrap();
        assert_eq!(b.rank(Pivoting::default()).unwrap(), 1);
    }
}
