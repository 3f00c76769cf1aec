//! A finite window on the Sato Grassmannian of `V = ℂ((∂⁻¹))`.
//!
//! A point stores column vectors over the degrees `-N..=M`. Everything above
//! the window is taken to be `span{∂^k : k > M}`. Coordinates below `-N` are
//! zero for points built from explicit vectors; points produced by acting
//! with an operator may have lost nonzero tails there, which is tracked and
//! limits how far their Lax operators are determined.
//!
//! Index convention: `index = dim ker − dim coker` of the projection onto
//! `V₊` along `V₋`. It is 0 on `V₊`, −1 on `∂·V₊` and +1 on `∂⁻¹·V₊`, so
//! multiplying by `∂` lowers the index by one.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::jet::{MultiIndex, OpJet};
use crate::kp::kp_vector_field_jet;
use crate::matrix::{Mat, Pivoting};
use crate::mdo::{Coeff, MicroDiffOp};
use crate::scalar::Scalar;
use crate::series::TruncatedSeries;

/// Sign `σ` in the flow `exp(σ Σ t_k ∂^k)`, fixed by [`calibrate_flow_sign`].
pub const FLOW_SIGN: i32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct FockWindow {
    n: usize,
    m: usize,
}

impl FockWindow {
    /// Keeps `∂^{-n}..∂^{m}`.
    pub fn new(n: usize, m: usize) -> Result<Self> {
        if n < 1 || m < 1 {
            return Err(Error::Shape(format!("window needs N, M >= 1, got N={n}, M={m}")));
        }
        Ok(Self { n, m })
    }

    pub fn depth(&self) -> usize {
        self.n
    }

    pub fn height(&self) -> usize {
        self.m
    }

    pub fn len(&self) -> usize {
        self.n + self.m + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Row of degree `d`.
    pub fn row(&self, d: i32) -> Option<usize> {
        let r = d + self.n as i32;
        (r >= 0 && (r as usize) < self.len()).then_some(r as usize)
    }

    pub fn degree(&self, row: usize) -> i32 {
        row as i32 - self.n as i32
    }

    pub fn degrees(&self) -> std::ops::RangeInclusive<i32> {
        -(self.n as i32)..=self.m as i32
    }

    fn unit(&self, d: i32) -> Vec<i64> {
        let mut v = vec![0; self.len()];
        v[self.row(d).expect("degree inside window")] = 1;
        v
    }
}

#[derive(Clone, PartialEq)]
pub struct GrassmannPoint<S> {
    window: FockWindow,
    basis: Vec<Vec<S>>,
    declared_index: i64,
    exact_tails: bool,
}

impl<S: Scalar> GrassmannPoint<S> {
    /// Validates independence of the columns and the declared index.
    pub fn new(window: FockWindow, basis: Vec<Vec<S>>, declared_index: i64, piv: Pivoting) -> Result<Self> {
        if basis.iter().any(|v| v.len() != window.len()) {
            return Err(Error::Dimension(format!(
                "basis vectors must have {} coordinates",
                window.len()
            )));
        }
        let rank = Mat::from_columns(&basis, window.len()).rank(piv)?;
        if rank != basis.len() {
            return Err(Error::Shape("basis vectors are linearly dependent".into()));
        }
        let p = Self {
            window,
            basis,
            declared_index,
            exact_tails: true,
        };
        if p.index() != declared_index {
            return Err(Error::Shape(format!(
                "declared index {declared_index} but the window gives {}",
                p.index()
            )));
        }
        Ok(p)
    }

    fn from_parts(window: FockWindow, basis: Vec<Vec<S>>) -> Self {
        let declared_index = basis.len() as i64 - (window.m as i64 + 1);
        Self {
            window,
            basis,
            declared_index,
            exact_tails: true,
        }
    }

    /// `span{∂^k : k >= lowest}`.
    pub fn monomials(window: FockWindow, lowest: i32) -> Result<Self> {
        if window.row(lowest).is_none() {
            return Err(Error::WindowExhausted(format!("∂^{lowest} is outside the window")));
        }
        let basis = (lowest..=window.m as i32)
            .map(|d| window.unit(d).into_iter().map(S::from_i64).collect())
            .collect();
        Ok(Self::from_parts(window, basis))
    }

    /// The base point `V₊`.
    pub fn vplus(window: FockWindow) -> Self {
        Self::monomials(window, 0).expect("∂⁰ is always in the window")
    }

    /// `W·V₊` for a constant Volterra operator `W`.
    pub fn from_wave_operator(window: FockWindow, w: &MicroDiffOp<S>) -> Result<Self> {
        let vplus = Self::vplus(window);
        vplus.act_constant(w)
    }

    pub fn window(&self) -> FockWindow {
        self.window
    }

    pub fn basis(&self) -> &[Vec<S>] {
        &self.basis
    }

    pub fn declared_index(&self) -> i64 {
        self.declared_index
    }

    /// False when nonzero coordinates below the window were dropped.
    pub fn has_exact_tails(&self) -> bool {
        self.exact_tails
    }

    /// `dim ker − dim coker` of the projection to `V₊`.
    pub fn index(&self) -> i64 {
        self.basis.len() as i64 - (self.window.m as i64 + 1)
    }

    /// Rows `0..=M` of the basis.
    fn positive_block(&self) -> Mat<S> {
        let w = self.window;
        Mat::from_fn(w.m + 1, self.basis.len(), |i, j| self.basis[j][w.n + i].clone())
    }

    /// `𝒲 ⊕ V₋ = V` within the window.
    pub fn big_cell_test(&self, piv: Pivoting) -> Result<bool> {
        if self.index() != 0 {
            return Ok(false);
        }
        let block = self.positive_block();
        Ok(block.rank(piv)? == self.window.m + 1)
    }

    /// Basis `e_k = ∂^k + (negative degrees)`, `k = 0..=M`.
    pub fn echelon(&self, piv: Pivoting) -> Result<Vec<Vec<S>>> {
        if !self.big_cell_test(piv)? {
            return Err(Error::BigCellViolation);
        }
        let b = Mat::from_columns(&self.basis, self.window.len());
        let c = self.positive_block().solve(&Mat::identity(self.window.m + 1), piv)?;
        let e = b.mul(&c)?;
        Ok((0..e.cols()).map(|j| e.column(j)).collect())
    }

    /// The unique constant Volterra `W` with `W·V₊ = 𝒲`, read from `e₀`.
    /// Coefficients below `∂^{-N}` are unknown; `order` is the series order
    /// attached to each constant coefficient.
    pub fn wave_operator(&self, order: usize, piv: Pivoting) -> Result<MicroDiffOp<S>> {
        let e = self.echelon(piv)?;
        let e0 = &e[0];
        let coeffs = (0..=self.window.n)
            .map(|r| TruncatedSeries::constant(e0[r].clone(), order))
            .collect();
        Ok(MicroDiffOp::new(-(self.window.n as i32), coeffs, false))
    }

    /// `c·𝒲` for a constant-coefficient operator `c` of nonpositive degree.
    pub fn gamma_minus_act(&self, c: &MicroDiffOp<S>) -> Result<Self> {
        if !c.is_volterra() || !c.is_constant_coefficient() {
            return Err(Error::Shape("expected a constant Volterra operator".into()));
        }
        self.act_constant(c)
    }

    fn act_constant(&self, c: &MicroDiffOp<S>) -> Result<Self> {
        if !c.is_constant_coefficient() {
            return Err(Error::Shape("expected constant coefficients".into()));
        }
        let w = self.window;
        let constants: Vec<(i32, S)> = c
            .terms()
            .map(|(d, s)| (d, s.coeffs().first().cloned().unwrap_or_else(S::zero)))
            .collect();
        // Reaching from the highest stored coordinate down to ∂^{-N}.
        let reach = self
            .basis
            .iter()
            .filter_map(|v| (0..w.len()).rev().find(|&r| !v[r].is_zero()))
            .max()
            .map_or(0, |r| r as i32);
        if !c.is_closed() && c.floor() > -reach {
            return Err(Error::WindowExhausted(format!(
                "operator is only known down to ∂^{}",
                c.floor()
            )));
        }
        let mut lost = !c.is_closed();
        let basis = self
            .basis
            .iter()
            .map(|v| {
                let mut out = vec![S::zero(); w.len()];
                for (r, x) in v.iter().enumerate() {
                    if x.is_zero() {
                        continue;
                    }
                    let d = w.degree(r);
                    for (k, ck) in &constants {
                        // degrees above M belong to the implicit part
                        match w.row(d + k) {
                            Some(row) => out[row] = out[row].clone() + ck.clone() * x.clone(),
                            None if d + k < 0 && !ck.is_zero() => lost = true,
                            None => {}
                        }
                    }
                }
                out
            })
            .collect();
        Ok(Self {
            window: w,
            basis,
            declared_index: self.declared_index,
            exact_tails: self.exact_tails && !lost,
        })
    }

    /// `∂·𝒲`. Fails when the result cannot be represented in the same window.
    pub fn shift_by_d(&self, piv: Pivoting) -> Result<Self> {
        let w = self.window;
        let top = w.len() - 1;
        let mut basis = self.basis.clone();
        let Some(p) = basis.iter().position(|v| !v[top].is_zero()) else {
            return Err(Error::WindowExhausted(
                "no basis vector reaches the top of the window".into(),
            ));
        };
        let pivot = basis.remove(p);
        let inv = S::one() / pivot[top].clone();
        for v in basis.iter_mut() {
            let f = v[top].clone() * inv.clone();
            if f.is_zero() {
                continue;
            }
            for (x, y) in v.iter_mut().zip(&pivot) {
                *x = x.clone() - f.clone() * y.clone();
            }
        }
        // ∂·pivot leaves the window; it is ∂^{M+1} only if the rest vanishes
        if pivot[..top].iter().any(|x| !x.is_negligible(piv.tol)) {
            return Err(Error::WindowExhausted(
                "the shifted point has a component above the window".into(),
            ));
        }
        let shifted = basis
            .into_iter()
            .map(|v| {
                let mut out = vec![S::zero(); w.len()];
                out[1..].clone_from_slice(&v[..top]);
                out
            })
            .collect();
        let mut out = GrassmannPoint::new(w, shifted, self.index() - 1, piv)?;
        out.exact_tails = self.exact_tails;
        Ok(out)
    }
}

impl<S: Scalar> std::fmt::Debug for GrassmannPoint<S> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("GrassmannPoint")
            .field("window", &self.window)
            .field("index", &self.declared_index)
            .field(
                "basis",
                &self
                    .basis
                    .iter()
                    .map(|v| v.iter().map(|x| x.to_literal()).collect::<Vec<_>>())
                    .collect::<Vec<_>>(),
            )
            .finish()
    }
}

/// Polynomial in `(t, τ₁, …, τ_K)` truncated at `t`-degree `t_order` and
/// total `τ`-degree `tau_order`. Index 0 of a monomial is the power of `t`.
#[derive(Clone, Debug, PartialEq)]
struct TimeJet<S> {
    terms: BTreeMap<MultiIndex, S>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
struct JetShape {
    times: usize,
    t_order: usize,
    tau_order: u32,
}

impl JetShape {
    fn keeps(&self, m: &[u32]) -> bool {
        m[0] as usize <= self.t_order && m[1..].iter().sum::<u32>() <= self.tau_order
    }

    fn monomials(&self) -> Vec<MultiIndex> {
        let mut out = Vec::new();
        for a in 0..=self.t_order as u32 {
            for d in 0..=self.tau_order {
                for beta in crate::jet::indices_of_degree(self.times, d) {
                    let mut m = vec![a];
                    m.extend(beta);
                    out.push(m);
                }
            }
        }
        out
    }
}

impl<S: Scalar> TimeJet<S> {
    fn zero() -> Self {
        Self {
            terms: BTreeMap::new(),
        }
    }

    fn constant(c: S, shape: &JetShape) -> Self {
        let mut terms = BTreeMap::new();
        if !c.is_zero() {
            terms.insert(vec![0; shape.times + 1], c);
        }
        Self { terms }
    }

    fn add_term(&mut self, m: MultiIndex, c: S) {
        if c.is_zero() {
            return;
        }
        let v = match self.terms.remove(&m) {
            Some(x) => x + c,
            None => c,
        };
        if !v.is_zero() {
            self.terms.insert(m, v);
        }
    }

    fn add(&self, other: &Self) -> Self {
        let mut out = self.clone();
        for (m, c) in &other.terms {
            out.add_term(m.clone(), c.clone());
        }
        out
    }

    fn sub(&self, other: &Self) -> Self {
        let mut out = self.clone();
        for (m, c) in &other.terms {
            out.add_term(m.clone(), -c.clone());
        }
        out
    }

    fn mul(&self, other: &Self, shape: &JetShape) -> Self {
        let mut out = Self::zero();
        for (a, x) in &self.terms {
            for (b, y) in &other.terms {
                let m: MultiIndex = a.iter().zip(b).map(|(i, j)| i + j).collect();
                if shape.keeps(&m) {
                    out.add_term(m, x.clone() * y.clone());
                }
            }
        }
        out
    }

    fn get(&self, m: &[u32]) -> S {
        self.terms.get(m).cloned().unwrap_or_else(S::zero)
    }
}

/// Taylor jet of the flowed point `exp(−t∂ + σ Σ τ_n ∂ⁿ)·𝒲` in the base
/// variable `t` and the times `τ₁..τ_K`.
#[derive(Clone, Debug)]
pub struct PointJet<S> {
    window: FockWindow,
    shape_times: usize,
    t_order: usize,
    tau_order: u32,
    sigma: i32,
    base: Option<Vec<Vec<S>>>,
    exact_tails: bool,
    /// `columns[k][row]`
    columns: Vec<Vec<TimeJet<S>>>,
}

impl<S: Scalar> PointJet<S> {
    fn shape(&self) -> JetShape {
        JetShape {
            times: self.shape_times,
            t_order: self.t_order,
            tau_order: self.tau_order,
        }
    }

    pub fn window(&self) -> FockWindow {
        self.window
    }

    pub fn sigma(&self) -> i32 {
        self.sigma
    }

    /// Coordinates of column `k` at the monomial `t^a τ^β`.
    pub fn column_at(&self, k: usize, a: u32, beta: &[u32]) -> Vec<S> {
        let mut m = vec![a];
        m.extend_from_slice(beta);
        self.columns[k].iter().map(|j| j.get(&m)).collect()
    }

    /// The point at `t = τ = 0`.
    pub fn at_origin(&self) -> Vec<Vec<S>> {
        let beta = vec![0; self.shape_times];
        (0..self.columns.len()).map(|k| self.column_at(k, 0, &beta)).collect()
    }
}

/// [`gamma_flow_signed`] with the calibrated sign [`FLOW_SIGN`].
pub fn gamma_flow<S: Scalar>(
    p: &GrassmannPoint<S>,
    times: usize,
    tau_order: u32,
    t_order: usize,
    piv: Pivoting,
) -> Result<PointJet<S>> {
    gamma_flow_signed(p, times, tau_order, t_order, FLOW_SIGN, piv)
}

/// Jet of `exp(−t∂ + σ Σ_{n ≤ K} τ_n ∂ⁿ)·𝒲`.
///
/// Needs `t_order + K·tau_order <= M`: past that, the parts of the point above
/// the window would enter the extracted wave operator.
pub fn gamma_flow_signed<S: Scalar>(
    p: &GrassmannPoint<S>,
    times: usize,
    tau_order: u32,
    t_order: usize,
    sigma: i32,
    piv: Pivoting,
) -> Result<PointJet<S>> {
    let w = p.window;
    let reach = t_order + times * tau_order as usize;
    if reach > w.m {
        return Err(Error::WindowExhausted(format!(
            "flow jet shifts degrees by up to {reach} but the window height is {}",
            w.m
        )));
    }
    let shape = JetShape {
        times,
        t_order,
        tau_order,
    };
    // Echelon columns when possible, so that the positive block starts at 1.
    let (base, cols) = match p.echelon(piv) {
        Ok(e) => (Some(e.clone()), e),
        Err(Error::BigCellViolation) => (None, p.basis.clone()),
        Err(e) => return Err(e),
    };
    let fact = |k: u32| (1..=k as i64).fold(S::one(), |acc, i| acc * S::from_i64(i));
    let mut columns = Vec::with_capacity(cols.len());
    for v in &cols {
        let mut rows = vec![TimeJet::zero(); w.len()];
        for m in shape.monomials() {
            let a = m[0];
            let mut shift = a as i32;
            let mut coef = S::one() / fact(a);
            if a % 2 == 1 {
                coef = -coef;
            }
            for (i, &b) in m[1..].iter().enumerate() {
                shift += (i as i32 + 1) * b as i32;
                coef = coef / fact(b);
                if sigma < 0 && b % 2 == 1 {
                    coef = -coef;
                }
            }
            for (r, x) in v.iter().enumerate() {
                if x.is_zero() {
                    continue;
                }
                if let Some(row) = w.row(w.degree(r) + shift) {
                    rows[row].add_term(m.clone(), coef.clone() * x.clone());
                }
            }
        }
        columns.push(rows);
    }
    Ok(PointJet {
        window: w,
        shape_times: times,
        t_order,
        tau_order,
        sigma,
        base,
        exact_tails: p.exact_tails,
        columns,
    })
}

/// Lax jet `L(τ) = W∂W⁻¹` whose coefficients are series in `t`, read from the
/// flowed point. `depth` must stay below the window depth.
pub fn point_to_lax<S: Scalar>(jet: &PointJet<S>, depth: u32) -> Result<OpJet<S>> {
    if jet.base.is_none() {
        return Err(Error::PoleOfLax { t_order: 0 });
    }
    let w = jet.window;
    let shape = jet.shape();
    let n = w.m + 1;
    // A c = δ₀ with A(0) = I, by c ← δ₀ − (A − I)c.
    let a_minus_i: Vec<Vec<TimeJet<S>>> = (0..n)
        .map(|i| {
            (0..n)
                .map(|k| {
                    let entry = &jet.columns[k][w.n + i];
                    if i == k {
                        entry.sub(&TimeJet::constant(S::one(), &shape))
                    } else {
                        entry.clone()
                    }
                })
                .collect()
        })
        .collect();
    let delta = |i: usize| {
        if i == 0 {
            TimeJet::constant(S::one(), &shape)
        } else {
            TimeJet::zero()
        }
    };
    let mut c: Vec<TimeJet<S>> = (0..n).map(delta).collect();
    for _ in 0..=(shape.t_order + shape.tau_order as usize) {
        c = (0..n)
            .map(|i| {
                let mut acc = delta(i);
                for k in 0..n {
                    acc = acc.sub(&a_minus_i[i][k].mul(&c[k], &shape));
                }
                acc
            })
            .collect();
    }
    // w_i = Σ_k c_k · column_k[−i]
    let mut ws: Vec<TimeJet<S>> = Vec::with_capacity(w.n);
    for i in 1..=w.n {
        let row = w.row(-(i as i32)).expect("inside window");
        let mut acc = TimeJet::zero();
        for (k, ck) in c.iter().enumerate() {
            acc = acc.add(&ck.mul(&jet.columns[k][row], &shape));
        }
        ws.push(acc);
    }

    let t_order = shape.t_order;
    let mut terms = Vec::new();
    for d in 0..=shape.tau_order {
        for beta in crate::jet::indices_of_degree(shape.times, d) {
            let beta_shift: usize = beta.iter().enumerate().map(|(k, &b)| (k + 1) * b as usize).sum();
            // With inexact tails, w_i at total shift s is reliable while s + i <= N.
            let known = |i: usize| -> Option<usize> {
                if jet.exact_tails {
                    Some(t_order)
                } else {
                    w.n.checked_sub(i + beta_shift).map(|o| o.min(t_order))
                }
            };
            let deepest = (1..=w.n).take_while(|&i| known(i).is_some()).last().unwrap_or(0);
            let series = |i: usize| {
                let j = &ws[i - 1];
                TruncatedSeries::from_coeffs(
                    (0..=known(i).expect("within the known depth") as u32)
                        .map(|a| {
                            let mut m = vec![a];
                            m.extend_from_slice(&beta);
                            j.get(&m)
                        })
                        .collect(),
                )
            };
            let mut coeffs: Vec<TruncatedSeries<S>> = (1..=deepest).rev().map(series).collect();
            coeffs.push(if d == 0 {
                TruncatedSeries::one(t_order)
            } else {
                TruncatedSeries::zero(t_order)
            });
            terms.push((beta.clone(), MicroDiffOp::new(-(deepest as i32), coeffs, false)));
        }
    }
    let wj = OpJet::from_terms(shape.times, shape.tau_order, terms);
    let cap = Some(-(depth as i32));
    let inv = wj.volterra_inverse(depth + 1)?;
    let d = OpJet::constant(MicroDiffOp::d_pow(1, t_order), shape.times, shape.tau_order);
    let dv = d.mul_capped(&inv, cap)?;
    let l = wj.mul_capped(&dv, cap)?;
    Ok(l.map_ops(|o| o.truncate_below(-(depth as i32))))
}

/// `∂L/∂τ_n − [L, (Lⁿ)₊]` on a Lax jet, over every Taylor coefficient the
/// jet determines.
pub fn flow_lax_mismatch<S: Scalar>(lax: &OpJet<S>, n: usize, depth: u32) -> Result<OpJet<S>> {
    let lower = lax.truncate(lax.order().saturating_sub(1));
    let field = kp_vector_field_jet(&lower, n as u32, depth)?;
    Ok(lax.partial(n - 1).sub(&field))
}

fn mismatch_vanishes<S: Scalar>(m: &OpJet<S>, eps: Option<f64>) -> bool {
    m.terms().all(|(_, o)| match eps {
        None => o.vanishes(),
        Some(e) => o.vanishes_within(e),
    })
}

/// Finds the unique `σ ∈ {+1, −1}` for which the `τ₁` flow of `p` induces
/// the literal `∂L/∂t₁ = [L, L₊]`.
pub fn calibrate_flow_sign<S: Scalar>(
    p: &GrassmannPoint<S>,
    depth: u32,
    eps: Option<f64>,
    piv: Pivoting,
) -> Result<i32> {
    let t_order = p.window.m - 1;
    let mut hits = Vec::new();
    for sigma in [1, -1] {
        let jet = gamma_flow_signed(p, 1, 1, t_order, sigma, piv)?;
        let lax = point_to_lax(&jet, depth)?;
        let mismatch = flow_lax_mismatch(&lax, 1, depth)?;
        if mismatch_vanishes(&mismatch, eps) {
            hits.push(sigma);
        }
    }
    match hits.as_slice() {
        [s] => Ok(*s),
        [] => Err(Error::Calibration("neither flow sign reproduces the t₁ flow".into())),
        _ => Err(Error::Calibration(
            "both flow signs pass; the point is too degenerate to calibrate".into(),
        )),
    }
}

/// True when a Lax jet term is the bare `∂`.
pub fn is_trivial_lax<S: Scalar>(l: &MicroDiffOp<S>) -> bool {
    l.terms().all(|(d, s)| {
        if d == 1 {
            s.coeffs()[0] == S::one() && s.coeffs()[1..].iter().all(|c| c.is_zero())
        } else {
            s.is_zero()
        }
    }) && !matches!(l.coeff(1), Coeff::Unknown)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scalar::{rat, Rational};

    type P = GrassmannPoint<Rational>;
    type Op = MicroDiffOp<Rational>;
    const PIV: Pivoting = Pivoting::EXACT_ZERO;

    fn win() -> FockWindow {
        FockWindow::new(5, 6).unwrap()
    }

    fn vec_of(w: FockWindow, entries: &[(i32, i64)]) -> Vec<Rational> {
        let mut v = vec![rat(0, 1); w.len()];
        for &(d, c) in entries {
            v[w.row(d).unwrap()] = rat(c, 1);
        }
        v
    }

    #[test]
    fn big_cell_and_index_examples() {
        let w = win();
        let vplus = P::vplus(w);
        assert!(vplus.big_cell_test(PIV).unwrap());
        assert_eq!(vplus.index(), 0);

        let shifted = P::monomials(w, 1).unwrap();
        assert_eq!(shifted.index(), -1);
        let mut basis = shifted.basis().to_vec();
        basis.push(vec_of(w, &[(-1, 1)]));
        let with_dm1 = P::new(w, basis, 0, PIV).unwrap();
        assert!(!with_dm1.big_cell_test(PIV).unwrap());

        assert_eq!(P::monomials(w, -1).unwrap().index(), 1);

        let tilted: Vec<_> = (0..=6).map(|k| vec_of(w, &[(k, 1), (k - 2, 1)])).collect();
        let tilted = P::new(w, tilted, 0, PIV).unwrap();
        assert!(tilted.big_cell_test(PIV).unwrap());
        let expected = Op::from_constants(-2, &[rat(1, 1), rat(0, 1), rat(1, 1)], 4);
        assert!(tilted.wave_operator(4, PIV).unwrap().agrees_with(&expected));
    }

    #[test]
    fn index_mismatch_is_rejected() {
        let w = win();
        assert!(P::new(w, P::vplus(w).basis().to_vec(), 1, PIV).is_err());
    }

    #[test]
    fn shift_lowers_index() {
        let w = win();
        let s = P::vplus(w).shift_by_d(PIV).unwrap();
        assert_eq!(s.index(), -1);
        assert_eq!(s, P::monomials(w, 1).unwrap());
        assert_eq!(s.shift_by_d(PIV).unwrap().index(), -2);
    }

    #[test]
    fn wave_operator_roundtrip() {
        let w = win();
        let op = Op::from_constants(-3, &[rat(2, 1), rat(-1, 3), rat(5, 1), rat(1, 1)], 4);
        let p = P::from_wave_operator(w, &op).unwrap();
        assert!(p.wave_operator(4, PIV).unwrap().agrees_with(&op));
        assert!(P::vplus(w).wave_operator(4, PIV).unwrap().agrees_with(&Op::identity(4)));
    }

    #[test]
    fn gamma_minus_keeps_lax() {
        let w = FockWindow::new(6, 7).unwrap();
        let p = random_point(w, 3);
        let c = Op::from_constants(-2, &[rat(3, 1), rat(1, 2), rat(1, 1)], 8);
        let q = p.gamma_minus_act(&c).unwrap();
        let l1 = point_to_lax(&gamma_flow(&p, 1, 1, 5, PIV).unwrap(), 3).unwrap();
        let l2 = point_to_lax(&gamma_flow(&q, 1, 1, 5, PIV).unwrap(), 3).unwrap();
        assert!(l1.agrees_with(&l2, None));
        assert!(!q.has_exact_tails());
        let u1 = l2.base().unwrap().series(-1).unwrap();
        assert!(u1.order() >= 2, "{u1:?}");
        assert!(l2.base().unwrap().valid_floor().unwrap_or(i32::MIN) <= -3);
    }

    fn random_point(w: FockWindow, seed: i64) -> P {
        let basis = (0..=w.height() as i32)
            .map(|k| {
                let mut v = vec_of(w, &[(k, 1)]);
                for d in 1..=w.depth() as i32 {
                    let x = (seed * 7 + 13 * k as i64 + 5 * d as i64 * d as i64) % 5 - 2;
                    v[w.row(-d).unwrap()] = rat(x, 1 + (k as i64 % 2));
                }
                v
            })
            .collect();
        P::new(w, basis, 0, PIV).unwrap()
    }

    #[test]
    fn flow_fixes_vplus_and_origin() {
        let w = win();
        let jet = gamma_flow(&P::vplus(w), 2, 2, 2, PIV).unwrap();
        assert_eq!(jet.at_origin(), P::vplus(w).basis().to_vec());
        let lax = point_to_lax(&jet, 3).unwrap();
        for (alpha, op) in lax.terms() {
            if alpha.iter().all(|&x| x == 0) {
                assert!(is_trivial_lax(op));
            } else {
                assert!(op.vanishes());
            }
        }
    }

    #[test]
    fn flow_sign_calibration() {
        let w = FockWindow::new(5, 7).unwrap();
        let p = random_point(w, 1);
        assert_eq!(calibrate_flow_sign(&p, 3, None, PIV).unwrap(), FLOW_SIGN);
        let op = Op::from_constants(-1, &[rat(1, 1), rat(1, 1)], 8);
        let q = P::from_wave_operator(w, &op).unwrap();
        let lax = point_to_lax(&gamma_flow(&q, 1, 1, 6, PIV).unwrap(), 3).unwrap();
        assert!(is_trivial_lax(lax.base().unwrap()));
    }

    #[test]
    fn higher_flows_match_kp() {
        let w = FockWindow::new(5, 9).unwrap();
        let p = random_point(w, 2);
        let jet = gamma_flow(&p, 3, 1, 6, PIV).unwrap();
        let lax = point_to_lax(&jet, 3).unwrap();
        for n in 1..=3 {
            let mismatch = flow_lax_mismatch(&lax, n, 3).unwrap();
            assert!(mismatch_vanishes(&mismatch, None), "n = {n}");
            let known = lax.coeff(&[0, 0, 0]).unwrap().series(-1).unwrap().order();
            assert!(known >= 2);
        }
    }

    #[test]
    fn window_too_small() {
        let w = win();
        assert!(matches!(
            gamma_flow(&P::vplus(w), 1, 3, 4, PIV),
            Err(Error::WindowExhausted(_))
        ));
        let outside = P::monomials(w, 1).unwrap();
        assert_eq!(
            point_to_lax(&gamma_flow(&outside, 1, 1, 2, PIV).unwrap(), 2).unwrap_err(),
            Error::PoleOfLax { t_order: 0 }
        );
    }
}
