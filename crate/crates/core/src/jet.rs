//! Truncated multivariate Taylor jets whose coefficients are operators.

use std::collections::BTreeMap;

use crate::error::Result;
use crate::mdo::MicroDiffOp;
use crate::scalar::Scalar;

/// Multi-index of a Taylor monomial `τ₁^{α₁}…τ_k^{α_k}`.
pub type MultiIndex = Vec<u32>;

/// `Σ_{|α| ≤ order} τ^α · A_α`; absent multi-indices are exactly zero.
#[derive(Clone, PartialEq)]
pub struct OpJet<S> {
    nvars: usize,
    order: u32,
    terms: BTreeMap<MultiIndex, MicroDiffOp<S>>,
}

fn total(alpha: &[u32]) -> u32 {
    alpha.iter().sum()
}

/// All multi-indices in `nvars` variables of total degree exactly `degree`.
pub fn indices_of_degree(nvars: usize, degree: u32) -> Vec<MultiIndex> {
    fn rec(nvars: usize, left: u32, prefix: &mut Vec<u32>, out: &mut Vec<MultiIndex>) {
        if prefix.len() + 1 == nvars {
            prefix.push(left);
            out.push(prefix.clone());
            prefix.pop();
            return;
        }
        for k in (0..=left).rev() {
            prefix.push(k);
            rec(nvars, left - k, prefix, out);
            prefix.pop();
        }
    }
    let mut out = Vec::new();
    if nvars == 0 {
        if degree == 0 {
            out.push(Vec::new());
        }
        return out;
    }
    rec(nvars, degree, &mut Vec::new(), &mut out);
    out
}

impl<S: Scalar> OpJet<S> {
    pub fn constant(op: MicroDiffOp<S>, nvars: usize, order: u32) -> Self {
        let mut terms = BTreeMap::new();
        terms.insert(vec![0; nvars], op);
        Self {
            nvars,
            order,
            terms,
        }
    }

    pub fn from_terms(
        nvars: usize,
        order: u32,
        terms: impl IntoIterator<Item = (MultiIndex, MicroDiffOp<S>)>,
    ) -> Self {
        let terms = terms
            .into_iter()
            .filter(|(a, _)| a.len() == nvars && total(a) <= order)
            .collect();
        Self {
            nvars,
            order,
            terms,
        }
    }

    pub fn nvars(&self) -> usize {
        self.nvars
    }

    pub fn order(&self) -> u32 {
        self.order
    }

    pub fn coeff(&self, alpha: &[u32]) -> Option<&MicroDiffOp<S>> {
        self.terms.get(alpha)
    }

    pub fn base(&self) -> Option<&MicroDiffOp<S>> {
        self.terms.get(&vec![0; self.nvars])
    }

    pub fn terms(&self) -> impl Iterator<Item = (&MultiIndex, &MicroDiffOp<S>)> {
        self.terms.iter()
    }

    pub fn insert(&mut self, alpha: MultiIndex, op: MicroDiffOp<S>) {
        debug_assert_eq!(alpha.len(), self.nvars);
        self.terms.insert(alpha, op);
    }

    /// Drops every term above total degree `order`.
    pub fn truncate(&self, order: u32) -> Self {
        Self::from_terms(
            self.nvars,
            order.min(self.order),
            self.terms.iter().map(|(a, o)| (a.clone(), o.clone())),
        )
    }

    fn zip_with(&self, other: &Self, f: impl Fn(Option<&MicroDiffOp<S>>, Option<&MicroDiffOp<S>>) -> MicroDiffOp<S>) -> Self {
        let order = self.order.min(other.order);
        let mut terms = BTreeMap::new();
        for alpha in self.terms.keys().chain(other.terms.keys()) {
            if total(alpha) > order || terms.contains_key(alpha) {
                continue;
            }
            terms.insert(alpha.clone(), f(self.terms.get(alpha), other.terms.get(alpha)));
        }
        Self {
            nvars: self.nvars,
            order,
            terms,
        }
    }

    pub fn add(&self, other: &Self) -> Self {
        self.zip_with(other, |a, b| match (a, b) {
            (Some(a), Some(b)) => a.add(b),
            (Some(a), None) => a.clone(),
            (None, Some(b)) => b.clone(),
            (None, None) => unreachable!(),
        })
    }

    pub fn sub(&self, other: &Self) -> Self {
        self.zip_with(other, |a, b| match (a, b) {
            (Some(a), Some(b)) => a.sub(b),
            (Some(a), None) => a.clone(),
            (None, Some(b)) => b.neg(),
            (None, None) => unreachable!(),
        })
    }

    pub fn scale(&self, c: &S) -> Self {
        Self {
            nvars: self.nvars,
            order: self.order,
            terms: self.terms.iter().map(|(a, o)| (a.clone(), o.scale(c))).collect(),
        }
    }

    pub fn map_ops(&self, f: impl Fn(&MicroDiffOp<S>) -> MicroDiffOp<S>) -> Self {
        Self {
            nvars: self.nvars,
            order: self.order,
            terms: self.terms.iter().map(|(a, o)| (a.clone(), f(o))).collect(),
        }
    }

    pub fn plus_part(&self) -> Self {
        self.map_ops(|o| o.plus_part())
    }

    pub fn mul_capped(&self, other: &Self, cap: Option<i32>) -> Result<Self> {
        let order = self.order.min(other.order);
        let mut terms: BTreeMap<MultiIndex, MicroDiffOp<S>> = BTreeMap::new();
        for (a, x) in &self.terms {
            for (b, y) in &other.terms {
                if total(a) + total(b) > order {
                    continue;
                }
                let c: MultiIndex = a.iter().zip(b).map(|(i, j)| i + j).collect();
                let prod = x.mul_capped(y, cap)?;
                let entry = match terms.remove(&c) {
                    Some(acc) => acc.add(&prod),
                    None => prod,
                };
                terms.insert(c, entry);
            }
        }
        Ok(Self {
            nvars: self.nvars,
            order,
            terms,
        })
    }

    pub fn commutator_capped(&self, other: &Self, cap: Option<i32>) -> Result<Self> {
        Ok(self
            .mul_capped(other, cap)?
            .sub(&other.mul_capped(self, cap)?))
    }

    pub fn pow_capped(&self, n: u32, cap: Option<i32>) -> Result<Self> {
        let mut acc = self.clone();
        for _ in 1..n {
            acc = acc.mul_capped(self, cap)?;
        }
        Ok(acc)
    }

    /// `∂/∂τ_var`, one order shorter.
    pub fn partial(&self, var: usize) -> Self {
        let order = self.order.saturating_sub(1);
        let mut terms = BTreeMap::new();
        for (a, o) in &self.terms {
            if a[var] == 0 {
                continue;
            }
            let mut b = a.clone();
            b[var] -= 1;
            if total(&b) > order {
                continue;
            }
            terms.insert(b, o.scale(&S::from_i64(a[var] as i64)));
        }
        Self {
            nvars: self.nvars,
            order,
            terms,
        }
    }

    /// Inverse of a jet whose base is Volterra, down to degree `-depth`.
    pub fn volterra_inverse(&self, depth: u32) -> Result<Self> {
        let base = self.base().cloned().ok_or_else(|| {
            crate::Error::Shape("jet has no constant term".into())
        })?;
        let base_inv = base.volterra_inverse(depth)?;
        let cap = Some(-(depth as i32));
        // V = V₀ − V₀·(W − W₀)·V, iterated once per jet order.
        let v0 = Self::constant(base_inv.clone(), self.nvars, self.order);
        let mut rest = self.clone();
        rest.terms.remove(&vec![0; self.nvars]);
        let mut inv = v0.clone();
        for _ in 0..self.order {
            let corr = v0.mul_capped(&rest.mul_capped(&inv, cap)?, cap)?;
            inv = v0.sub(&corr);
        }
        Ok(inv.map_ops(|o| o.truncate_below(-(depth as i32))))
    }

    /// Termwise agreement; missing terms must vanish in the other jet.
    pub fn agrees_with(&self, other: &Self, eps: Option<f64>) -> bool {
        let order = self.order.min(other.order);
        let vanishes = |o: &MicroDiffOp<S>| match eps {
            None => o.vanishes(),
            Some(e) => o.vanishes_within(e),
        };
        self.terms
            .keys()
            .chain(other.terms.keys())
            .filter(|a| total(a) <= order)
            .all(|a| match (self.terms.get(a), other.terms.get(a)) {
                (Some(x), Some(y)) => match eps {
                    None => x.agrees_with(y),
                    Some(e) => x.agrees_within(y, e),
                },
                (Some(x), None) | (None, Some(x)) => vanishes(x),
                (None, None) => true,
            })
    }
}

impl<S: Scalar> std::fmt::Debug for OpJet<S> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_map().entries(self.terms.iter()).finish()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scalar::{rat, Rational};
    use crate::series::TruncatedSeries;

    #[test]
    fn multi_indices() {
        assert_eq!(indices_of_degree(2, 2), vec![vec![2, 0], vec![1, 1], vec![0, 2]]);
        assert_eq!(indices_of_degree(3, 1).len(), 3);
        assert_eq!(indices_of_degree(1, 4), vec![vec![4]]);
    }

    #[test]
    fn jet_inverse_of_volterra() {
        type Op = MicroDiffOp<Rational>;
        let w0 = Op::identity(6).add(&Op::monomial(TruncatedSeries::t(6), -1));
        let w1 = Op::d_pow(-2, 6).scale(&rat(3, 1));
        let w = OpJet::from_terms(1, 3, [(vec![0], w0), (vec![1], w1)]);
        let inv = w.volterra_inverse(4).unwrap();
        let prod = w.mul_capped(&inv, Some(-4)).unwrap();
        let one = OpJet::constant(Op::identity(6), 1, 3);
        assert!(prod.agrees_with(&one, None));
    }
}
