//! KP Lax operators, the vector fields `∂L/∂t_n = [L, (L^n)_+]`, their Taylor
//! jets, Sato dressing and the KP equation residual.
//!
//! The bracket is taken in the order written above. With that orientation the
//! `t₁` flow is translation by `-t`: `∂L/∂t₁ = [L, ∂] = -∂L/∂t`
//! ([`T1_TRANSLATION_SIGN`]).

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::jet::{indices_of_degree, MultiIndex, OpJet};
use crate::mdo::{Coeff, MicroDiffOp};
use crate::scalar::Scalar;
use crate::series::TruncatedSeries;

/// `∂L/∂t₁ = T1_TRANSLATION_SIGN · ∂L/∂t`, checked by `t1_flow_is_translation`.
pub const T1_TRANSLATION_SIGN: i32 = -1;

/// `L = ∂ + u₁∂⁻¹ + u₂∂⁻² + …`.
#[derive(Clone, PartialEq)]
pub struct LaxOperator<S> {
    op: MicroDiffOp<S>,
}

impl<S: Scalar> LaxOperator<S> {
    /// Validates the normal form: monic at `∂¹`, nothing at `∂⁰`.
    pub fn new(op: MicroDiffOp<S>) -> Result<Self> {
        if op.top() != 1 {
            return Err(Error::Shape(format!("Lax operator has top degree {}", op.top())));
        }
        let lead = op.series(1).expect("top coefficient");
        if lead.coeffs()[0] != S::one() || !lead.coeffs()[1..].iter().all(|c| c.is_zero()) {
            return Err(Error::Shape("coefficient of ∂ is not 1".into()));
        }
        match op.coeff(0) {
            Coeff::Series(s) if !s.is_zero() => {
                return Err(Error::Shape("coefficient of ∂⁰ is not zero".into()))
            }
            Coeff::Unknown => return Err(Error::Shape("coefficient of ∂⁰ is unknown".into())),
            _ => {}
        }
        Ok(Self { op })
    }

    /// Same as [`new`](Self::new) but tolerates floating noise at `∂⁰` and `∂¹`.
    pub fn new_within(op: MicroDiffOp<S>, eps: f64) -> Result<Self> {
        let floor = op.floor();
        let mut coeffs: Vec<TruncatedSeries<S>> = op.terms().map(|(_, c)| c.clone()).collect();
        for (d, c) in (floor..).zip(coeffs.iter_mut()) {
            match d {
                0 if c.is_negligible(eps) => *c = TruncatedSeries::zero(c.order()),
                0 => return Err(Error::Shape("coefficient of ∂⁰ is not zero".into())),
                1 => {
                    let one = TruncatedSeries::one(c.order());
                    if !c.agrees_within(&one, eps) {
                        return Err(Error::Shape("coefficient of ∂ is not 1".into()));
                    }
                    *c = one;
                }
                _ => {}
            }
        }
        Self::new(MicroDiffOp::new(floor, coeffs, op.is_closed()))
    }

    /// `∂ + Σ u_i ∂^{-i}`, exact below `∂^{-us.len()}`.
    pub fn from_coefficients(us: Vec<TruncatedSeries<S>>) -> Self {
        let order = us.iter().map(|u| u.order()).max().unwrap_or(0);
        let depth = us.len() as i32;
        let mut coeffs: Vec<TruncatedSeries<S>> = us.into_iter().rev().collect();
        coeffs.push(TruncatedSeries::zero(order));
        coeffs.push(TruncatedSeries::one(order));
        Self {
            op: MicroDiffOp::new(-depth, coeffs, true),
        }
    }

    pub fn trivial(order: usize) -> Self {
        Self {
            op: MicroDiffOp::d_pow(1, order),
        }
    }

    pub fn op(&self) -> &MicroDiffOp<S> {
        &self.op
    }

    pub fn into_op(self) -> MicroDiffOp<S> {
        self.op
    }

    /// `u_i`, the coefficient of `∂^{-i}`.
    pub fn u(&self, i: u32) -> Coeff<'_, S> {
        self.op.coeff(-(i as i32))
    }

    /// Stores explicit zeros so products stay exact down to `-depth`.
    pub fn padded(&self, depth: u32) -> Self {
        Self {
            op: self.op.pad_to(-(depth as i32)),
        }
    }
}

impl<S: Scalar> std::fmt::Debug for LaxOperator<S> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Lax({:?})", self.op)
    }
}

/// Cap used for `L^n` so that `(L^n)_+` is fully determined.
fn power_cap(n: u32) -> Option<i32> {
    Some(-(n as i32))
}

fn differential_part<S: Scalar>(power: &MicroDiffOp<S>) -> Result<MicroDiffOp<S>> {
    let plus = power.plus_part();
    if !plus.is_closed() {
        return Err(Error::TruncationExhausted(
            "the power of L is not known down to ∂⁰".into(),
        ));
    }
    Ok(plus)
}

/// `[L, (L^n)_+]` computed down to degree `-depth`.
pub fn kp_vector_field<S: Scalar>(l: &MicroDiffOp<S>, n: u32, depth: u32) -> Result<MicroDiffOp<S>> {
    let power = l.pow_capped(n, power_cap(n))?;
    let plus = differential_part(&power)?;
    let out = l.commutator_capped(&plus, Some(-(depth as i32)))?;
    Ok(out.truncate_below(-(depth as i32)))
}

/// The same field evaluated on a jet of operators.
pub fn kp_vector_field_jet<S: Scalar>(l: &OpJet<S>, n: u32, depth: u32) -> Result<OpJet<S>> {
    let power = l.pow_capped(n, power_cap(n))?;
    let mut plus = power.plus_part();
    for (_, o) in plus.terms() {
        if !o.is_closed() {
            return Err(Error::TruncationExhausted(
                "a jet term of L^n is not known down to ∂⁰".into(),
            ));
        }
    }
    plus = plus.map_ops(|o| o.clone());
    let out = l.commutator_capped(&plus, Some(-(depth as i32)))?;
    Ok(out.map_ops(|o| o.truncate_below(-(depth as i32))))
}

/// Taylor jet of a KP solution in the times `t₁, …, t_K`.
#[derive(Clone)]
pub struct KpJet<S> {
    jet: OpJet<S>,
    depth: u32,
}

impl<S: Scalar> KpJet<S> {
    pub fn jet(&self) -> &OpJet<S> {
        &self.jet
    }

    pub fn base(&self) -> &MicroDiffOp<S> {
        self.jet.base().expect("jet always has a base term")
    }

    /// Taylor coefficient of `t^α`; index `k` of `α` is the power of `t_{k+1}`.
    pub fn taylor(&self, alpha: &[u32]) -> Option<&MicroDiffOp<S>> {
        self.jet.coeff(alpha)
    }

    /// `∂^α L / ∂t^α` at the origin.
    pub fn partial(&self, alpha: &[u32]) -> Option<MicroDiffOp<S>> {
        let fact: i64 = alpha
            .iter()
            .map(|&k| (1..=k as i64).product::<i64>())
            .product();
        self.jet.coeff(alpha).map(|o| o.scale(&S::from_i64(fact)))
    }

    pub fn order(&self) -> u32 {
        self.jet.order()
    }

    pub fn times(&self) -> usize {
        self.jet.nvars()
    }

    pub fn depth(&self) -> u32 {
        self.depth
    }
}

/// Builds the jet of `L(t₁, …, t_K)` from `L₀` by iterating the KP flows.
///
/// Every coefficient of total degree `d + 1` is computed from each flow that
/// can reach it; the results must coincide (up to `eps` for floating fields).
pub fn kp_jet_extend<S: Scalar>(
    l0: &LaxOperator<S>,
    highest_time: usize,
    order: u32,
    depth: u32,
    eps: Option<f64>,
) -> Result<KpJet<S>> {
    let nvars = highest_time;
    let mut jet = OpJet::constant(l0.op().clone(), nvars, order);
    for d in 0..order {
        let current = jet.truncate(d);
        let mut fields = Vec::with_capacity(nvars);
        for n in 1..=nvars as u32 {
            fields.push(kp_vector_field_jet(&current, n, depth)?);
        }
        let mut next: BTreeMap<MultiIndex, MicroDiffOp<S>> = BTreeMap::new();
        for beta in indices_of_degree(nvars, d + 1) {
            let mut value: Option<MicroDiffOp<S>> = None;
            for var in 0..nvars {
                if beta[var] == 0 {
                    continue;
                }
                let mut alpha = beta.clone();
                alpha[var] -= 1;
                let candidate = match fields[var].coeff(&alpha) {
                    Some(o) => o.scale(&(S::one() / S::from_i64(beta[var] as i64))),
                    None => MicroDiffOp::zero(-(depth as i32), l0.op().min_order(), false),
                };
                match &value {
                    None => value = Some(candidate),
                    Some(v) => {
                        let same = match eps {
                            None => v.agrees_with(&candidate),
                            Some(e) => v.agrees_within(&candidate, e),
                        };
                        if !same {
                            return Err(Error::Compatibility(format!(
                                "Taylor coefficient {beta:?} differs between flows"
                            )));
                        }
                    }
                }
            }
            next.insert(beta, value.expect("degree >= 1 index has a nonzero entry"));
        }
        for (beta, op) in next {
            jet.insert(beta, op);
        }
    }
    Ok(KpJet { jet, depth })
}

/// Mixed second-order Taylor coefficient along `t_m` then `t_n`, minus the
/// same along `t_n` then `t_m`. Zero when the flows commute.
pub fn flows_commute_residual<S: Scalar>(
    l: &LaxOperator<S>,
    m: u32,
    n: u32,
    depth: u32,
) -> Result<MicroDiffOp<S>> {
    let directional = |first: u32, second: u32| -> Result<MicroDiffOp<S>> {
        let f = kp_vector_field(l.op(), first, depth + second + 2)?;
        let jet = OpJet::from_terms(1, 1, [(vec![0], l.op().clone()), (vec![1], f)]);
        let g = kp_vector_field_jet(&jet, second, depth)?;
        Ok(g.coeff(&[1])
            .cloned()
            .unwrap_or_else(|| MicroDiffOp::zero(-(depth as i32), 0, true)))
    };
    let mn = directional(m, n)?;
    let nm = directional(n, m)?;
    Ok(mn.sub(&nm).truncate_below(-(depth as i32)))
}

/// Wave operator `W = 1 + Σ w_i ∂^{-i}` with `W∂W⁻¹ = L` and `w_i(0) = 0`.
pub fn dress<S: Scalar>(l: &LaxOperator<S>, depth: u32) -> Result<MicroDiffOp<S>> {
    let order = l.op().min_order();
    let u = l.op().minus_part();
    let mut w = MicroDiffOp::identity(order + depth as usize);
    for k in 1..=depth as i32 {
        let uw = u.mul_capped(&w, Some(-k))?;
        let rhs = match uw.coeff(-k) {
            Coeff::Series(s) => s.clone(),
            Coeff::Zero => TruncatedSeries::zero(order),
            Coeff::Unknown => {
                return Err(Error::TruncationExhausted(format!(
                    "dressing needs L down to ∂^{}",
                    -k
                )))
            }
        };
        let wk = (-&rhs).integrate();
        w = w.add(&MicroDiffOp::monomial(wk, -k));
    }
    Ok(w)
}

/// Taylor data `u(t, x, y) = Σ x^a y^b u_{ab}(t)` used by the KP residual.
#[derive(Clone, Debug, PartialEq)]
pub struct FieldJet<S: Scalar> {
    order: u32,
    coeffs: BTreeMap<(u32, u32), TruncatedSeries<S>>,
}

impl<S: Scalar> FieldJet<S> {
    pub fn new(order: u32, coeffs: BTreeMap<(u32, u32), TruncatedSeries<S>>) -> Self {
        Self { order, coeffs }
    }

    pub fn order(&self) -> u32 {
        self.order
    }

    pub fn coeff(&self, a: u32, b: u32) -> Option<&TruncatedSeries<S>> {
        self.coeffs.get(&(a, b))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&(u32, u32), &TruncatedSeries<S>)> {
        self.coeffs.iter()
    }

    /// `u(t, x, y) ↦ scale · u(t, x, y_sign · y)`.
    pub fn rescaled(&self, scale: &S, y_sign: i32) -> Self {
        Self {
            order: self.order,
            coeffs: self
                .coeffs
                .iter()
                .map(|(&(a, b), s)| {
                    let mut c = scale.clone();
                    if y_sign < 0 && b % 2 == 1 {
                        c = -c;
                    }
                    ((a, b), s.scale(&c))
                })
                .collect(),
        }
    }

    pub fn is_zero(&self, eps: Option<f64>) -> bool {
        self.coeffs.values().all(|s| match eps {
            None => s.is_zero(),
            Some(e) => s.is_negligible(e),
        })
    }

    fn get(&self, a: u32, b: u32) -> Option<TruncatedSeries<S>> {
        self.coeffs.get(&(a, b)).cloned()
    }
}

/// Extracts `u₁(t, x = t₂, y = t₃)` from a jet built with `highest_time >= 3`.
pub fn u1_field<S: Scalar>(jet: &KpJet<S>) -> Result<FieldJet<S>> {
    if jet.times() < 3 {
        return Err(Error::Shape("the jet must include t₂ and t₃".into()));
    }
    let mut coeffs = BTreeMap::new();
    for (alpha, op) in jet.jet().terms() {
        if alpha[0] != 0 || alpha[3..].iter().any(|&k| k != 0) {
            continue;
        }
        let u1 = match op.coeff(-1) {
            Coeff::Series(s) => s.clone(),
            Coeff::Zero => TruncatedSeries::zero(op.min_order()),
            Coeff::Unknown => {
                return Err(Error::TruncationExhausted("u₁ is not known".into()));
            }
        };
        coeffs.insert((alpha[1], alpha[2]), u1);
    }
    Ok(FieldJet::new(jet.order(), coeffs))
}

fn series_sum<S: Scalar>(a: Option<TruncatedSeries<S>>, b: TruncatedSeries<S>) -> TruncatedSeries<S> {
    match a {
        Some(a) => &a + &b,
        None => b,
    }
}

/// `(3/4)u_xx − (u_y − ¼(6uu_t + u_ttt))_t` as a Taylor jet in `(x, y)`,
/// valid to total order `order − 2`.
pub fn kp_equation_residual<S: Scalar>(u: &FieldJet<S>) -> Result<FieldJet<S>> {
    if u.order < 2 {
        return Err(Error::TruncationExhausted(
            "the KP residual needs second x-derivatives".into(),
        ));
    }
    let out_order = u.order - 2;
    let quarter = S::from_ratio(1, 4);
    let three_quarters = S::from_ratio(3, 4);
    let mut coeffs = BTreeMap::new();
    for a in 0..=out_order {
        for b in 0..=out_order - a {
            let missing = || Error::TruncationExhausted(format!("u jet lacks terms near x^{a} y^{b}"));
            // x-derivatives pick up factorial weights from the Taylor layout
            let uxx = u
                .get(a + 2, b)
                .ok_or_else(missing)?
                .scale(&S::from_i64(((a + 1) * (a + 2)) as i64));
            let uy = u
                .get(a, b + 1)
                .ok_or_else(missing)?
                .scale(&S::from_i64((b + 1) as i64));
            let mut uut: Option<TruncatedSeries<S>> = None;
            for a1 in 0..=a {
                for b1 in 0..=b {
                    let p = u.get(a1, b1).ok_or_else(missing)?;
                    let q = u.get(a - a1, b - b1).ok_or_else(missing)?.derive()?;
                    uut = Some(series_sum(uut, &p * &q));
                }
            }
            let uab = u.get(a, b).ok_or_else(missing)?;
            let uttt = uab.nth_derivative(3).ok_or(Error::EmptySeries)?;
            let inner = &(&uut.expect("a, b >= 0").scale(&S::from_i64(6)) + &uttt).scale(&quarter);
            let bracket = (&uy - inner).derive()?;
            let r = &uxx.scale(&three_quarters) - &bracket;
            coeffs.insert((a, b), r);
        }
    }
    Ok(FieldJet::new(out_order, coeffs))
}

/// Candidate maps `U(t, x, y) = α · u₁(t, x, β y)` searched by [`calibrate_field_map`].
pub const FIELD_MAP_ALPHAS: [(i64, i64); 6] = [(1, 1), (-1, 1), (2, 1), (-2, 1), (1, 2), (-1, 2)];

/// Finds the unique `(α, β)` for which `α · u₁(t, x, β y)` of the jet solves
/// the KP equation, trying every candidate.
pub fn calibrate_field_map<S: Scalar>(jet: &KpJet<S>, eps: Option<f64>) -> Result<(S, i32)> {
    let u = u1_field(jet)?;
    let mut hits = Vec::new();
    for &(p, q) in &FIELD_MAP_ALPHAS {
        for beta in [1, -1] {
            let alpha = S::from_ratio(p, q);
            if kp_equation_residual(&u.rescaled(&alpha, beta))?.is_zero(eps) {
                hits.push((alpha, beta));
            }
        }
    }
    match hits.len() {
        1 => Ok(hits.pop().expect("one hit")),
        0 => Err(Error::Calibration("no candidate field map solves KP".into())),
        n => Err(Error::Calibration(format!("{n} candidate field maps solve KP"))),
    }
}
