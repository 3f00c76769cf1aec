//! Weierstrass `℘` for a lattice `ω₁ℤ + ω₂ℤ`.
//!
//! Values come from the rapidly convergent trigonometric series
//! `℘(z) = (π/ω₁)² [Σ_n csc²(π(u + nτ)) − 1/3 − Σ_{n≠0} csc²(πnτ)]`,
//! `u = z/ω₁`, after reducing `τ = ω₂/ω₁` to the fundamental domain and `z`
//! to the period parallelogram. The invariants `g₂, g₃` are summed
//! independently from Eisenstein `q`-series, so the differential equation
//! `℘′² = 4℘³ − g₂℘ − g₃` is a genuine self-check. The plain truncated
//! lattice sum is available for comparison.

use std::f64::consts::PI;

use num_complex::Complex64;

use crate::error::{Error, Result};

const SERIES_TOL: f64 = 1e-18;
const MAX_TERMS: i64 = 200;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct WeierstrassLattice {
    /// Reduced basis of the same lattice, `Im(ω₂/ω₁) > 0` and `|τ| >= 1`.
    omega1: Complex64,
    omega2: Complex64,
    g2: Complex64,
    g3: Complex64,
    /// Points closer than `lattice_eps·|ω₁|` to the lattice are rejected.
    lattice_eps: f64,
}

/// `csc²(w)` without overflow for large `|Im w|`.
fn csc2(w: Complex64) -> Complex64 {
    let w = if w.im < 0.0 { -w } else { w };
    let q = (Complex64::i() * 2.0 * w).exp();
    -4.0 * q / ((1.0 - q) * (1.0 - q))
}

/// `csc²(w)·cot(w)`.
fn csc2_cot(w: Complex64) -> Complex64 {
    let (w, sign) = if w.im < 0.0 { (-w, -1.0) } else { (w, 1.0) };
    let q = (Complex64::i() * 2.0 * w).exp();
    let cot = Complex64::i() * (q + 1.0) / (q - 1.0);
    sign * (-4.0 * q / ((1.0 - q) * (1.0 - q))) * cot
}

fn divisor_power_sum(n: u64, k: u32) -> f64 {
    (1..=n).filter(|d| n % d == 0).map(|d| (d as f64).powi(k as i32)).sum()
}

impl WeierstrassLattice {
    pub fn new(omega1: Complex64, omega2: Complex64) -> Result<Self> {
        if omega1.norm() == 0.0 || omega2.norm() == 0.0 {
            return Err(Error::Input("periods must be nonzero".into()));
        }
        let ratio = omega2 / omega1;
        if ratio.im.abs() < 1e-12 * ratio.norm() {
            return Err(Error::Input("periods must have a non-real ratio".into()));
        }
        let (mut w1, mut w2) = if ratio.im > 0.0 {
            (omega1, omega2)
        } else {
            (omega1, -omega2)
        };
        // Gauss reduction: keep τ in |Re τ| <= 1/2, |τ| >= 1.
        for _ in 0..1000 {
            let tau = w2 / w1;
            let shift = tau.re.round();
            if shift != 0.0 {
                w2 -= w1 * shift;
            }
            let tau = w2 / w1;
            if tau.norm_sqr() < 1.0 - 1e-15 {
                let (a, b) = (-w2, w1);
                w1 = a;
                w2 = b;
            } else {
                break;
            }
        }
        let mut lat = Self {
            omega1: w1,
            omega2: w2,
            g2: Complex64::new(0.0, 0.0),
            g3: Complex64::new(0.0, 0.0),
            lattice_eps: 1e-12,
        };
        let (g2, g3) = lat.eisenstein_invariants();
        lat.g2 = g2;
        lat.g3 = g3;
        Ok(lat)
    }

    /// `ℤ + iℤ`.
    pub fn square() -> Self {
        Self::new(Complex64::new(1.0, 0.0), Complex64::new(0.0, 1.0)).expect("valid periods")
    }

    /// Rectangular lattice `aℤ + ibℤ`.
    pub fn rectangular(a: f64, b: f64) -> Result<Self> {
        Self::new(Complex64::new(a, 0.0), Complex64::new(0.0, b))
    }

    pub fn periods(&self) -> (Complex64, Complex64) {
        (self.omega1, self.omega2)
    }

    pub fn tau(&self) -> Complex64 {
        self.omega2 / self.omega1
    }

    pub fn g2(&self) -> Complex64 {
        self.g2
    }

    pub fn g3(&self) -> Complex64 {
        self.g3
    }

    pub fn with_lattice_eps(mut self, eps: f64) -> Self {
        self.lattice_eps = eps;
        self
    }

    fn eisenstein_invariants(&self) -> (Complex64, Complex64) {
        let q = (Complex64::i() * 2.0 * PI * self.tau()).exp();
        let mut e4 = Complex64::new(1.0, 0.0);
        let mut e6 = Complex64::new(1.0, 0.0);
        let mut qn = Complex64::new(1.0, 0.0);
        for n in 1..=MAX_TERMS as u64 {
            qn *= q;
            let a = qn * divisor_power_sum(n, 3) * 240.0;
            let b = qn * divisor_power_sum(n, 5) * 504.0;
            e4 += a;
            e6 -= b;
            if a.norm() < SERIES_TOL && b.norm() < SERIES_TOL {
                break;
            }
        }
        let k = PI / self.omega1;
        (k.powi(4) * e4 * (4.0 / 3.0), k.powi(6) * e6 * (8.0 / 27.0))
    }

    /// `u = z/ω₁` moved into the period parallelogram centred at 0.
    fn reduce(&self, z: Complex64) -> Result<Complex64> {
        let tau = self.tau();
        let mut u = z / self.omega1;
        let n = (u.im / tau.im).round();
        u -= tau * n;
        u -= u.re.round();
        if u.norm() < self.lattice_eps {
            return Err(Error::LatticePoint(format!("{z}")));
        }
        Ok(u)
    }

    /// `Σ_{n≠0} csc²(πnτ)`, independent of `z`.
    fn csc_constant(&self) -> Complex64 {
        let tau = self.tau();
        let mut acc = Complex64::new(0.0, 0.0);
        for n in 1..=MAX_TERMS {
            let t = csc2(PI * tau * n as f64) * 2.0;
            acc += t;
            if t.norm() < SERIES_TOL * acc.norm().max(1.0) {
                break;
            }
        }
        acc
    }

    fn sum_over_rows(&self, u: Complex64, f: impl Fn(Complex64) -> Complex64) -> Complex64 {
        let tau = self.tau();
        let mut acc = f(PI * u);
        for n in 1..=MAX_TERMS {
            let t = f(PI * (u + tau * n as f64)) + f(PI * (u - tau * n as f64));
            acc += t;
            if t.norm() < SERIES_TOL * acc.norm().max(1.0) {
                break;
            }
        }
        acc
    }

    /// `℘(z)`.
    pub fn wp(&self, z: Complex64) -> Result<Complex64> {
        let u = self.reduce(z)?;
        let k = PI / self.omega1;
        let s = self.sum_over_rows(u, csc2);
        Ok(k * k * (s - 1.0 / 3.0 - self.csc_constant()))
    }

    /// `℘′(z)`.
    pub fn wp_prime(&self, z: Complex64) -> Result<Complex64> {
        let u = self.reduce(z)?;
        let k = PI / self.omega1;
        let s = self.sum_over_rows(u, csc2_cot);
        Ok(k * k * k * s * -2.0)
    }

    /// `℘′² − (4℘³ − g₂℘ − g₃)`.
    pub fn ode_residual(&self, z: Complex64) -> Result<Complex64> {
        let p = self.wp(z)?;
        let dp = self.wp_prime(z)?;
        Ok(dp * dp - (p * p * p * 4.0 - self.g2 * p - self.g3))
    }

    /// `1/z² + Σ′ [1/(z−ω)² − 1/ω²]` over `|ω| <= radius`. Slow and only
    /// accurate to roughly `|z|²/radius²`; kept as an independent check.
    pub fn wp_lattice_sum(&self, z: Complex64, radius: f64) -> Result<Complex64> {
        if z.norm() < self.lattice_eps * self.omega1.norm() {
            return Err(Error::LatticePoint(format!("{z}")));
        }
        let (w1, w2) = (self.omega1, self.omega2);
        // |m ω₁ + n ω₂| >= |n|·Im(ω₂ conj(ω₁))/|ω₁|
        let height = (w2 * w1.conj()).im.abs() / w1.norm();
        let nmax = (radius / height).ceil() as i64 + 1;
        let mut acc = 1.0 / (z * z);
        for n in -nmax..=nmax {
            let row = w2 * n as f64;
            let mmax = ((radius + row.norm()) / w1.norm()).ceil() as i64 + 1;
            for m in -mmax..=mmax {
                if m == 0 && n == 0 {
                    continue;
                }
                let w = w1 * m as f64 + row;
                if w.norm() > radius {
                    continue;
                }
                let d = z - w;
                if d.norm() < self.lattice_eps * w1.norm() {
                    return Err(Error::LatticePoint(format!("{z}")));
                }
                acc += 1.0 / (d * d) - 1.0 / (w * w);
            }
        }
        Ok(acc)
    }

    /// Default radius of the comparison sum: 40 times the longer period.
    pub fn default_sum_radius(&self) -> f64 {
        40.0 * self.omega1.norm().max(self.omega2.norm())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn grid() -> Vec<Complex64> {
        (0..100)
            .map(|k| {
                let a = 0.05 + 0.9 * ((k % 10) as f64 + 0.37) / 10.0;
                let b = 0.05 + 0.9 * ((k / 10) as f64 + 0.61) / 10.0;
                c(a, 0.0) * 0.93 + c(0.21, 0.87) * b
            })
            .collect()
    }

    #[test]
    fn square_lattice_invariants() {
        let l = WeierstrassLattice::square();
        // g₃ = 0 on the square lattice; g₂ ≈ 189.07272 for ℤ + iℤ
        assert!(l.g3().norm() < 1e-9);
        assert!((l.g2().re - 189.072_720_14).abs() < 1e-5, "{}", l.g2());
    }

    #[test]
    fn ode_residual_on_grid() {
        for lat in [
            WeierstrassLattice::square(),
            WeierstrassLattice::new(c(1.3, 0.2), c(0.4, 1.1)).unwrap(),
        ] {
            for z in grid() {
                let r = lat.ode_residual(z).unwrap();
                let scale = lat.wp(z).unwrap().norm().powi(3).max(1.0);
                assert!(r.norm() <= 1e-10 * scale, "z={z} r={r}");
            }
        }
    }

    #[test]
    fn evenness_periodicity_pole() {
        let lat = WeierstrassLattice::new(c(1.3, 0.2), c(0.4, 1.1)).unwrap();
        let z = c(0.31, 0.17);
        let p = lat.wp(z).unwrap();
        assert!((lat.wp(-z).unwrap() - p).norm() < 1e-12 * p.norm());
        assert!((lat.wp(z + c(1.3, 0.2)).unwrap() - p).norm() < 1e-10 * p.norm());
        assert!((lat.wp_prime(-z).unwrap() + lat.wp_prime(z).unwrap()).norm() < 1e-10);
        let small = c(1e-4, 2e-4);
        assert!((lat.wp(small).unwrap() * small * small - 1.0).norm() < 1e-6);
        assert!(matches!(lat.wp(c(0.0, 0.0)), Err(Error::LatticePoint(_))));
    }

    #[test]
    fn derivative_matches_difference_quotient() {
        let lat = WeierstrassLattice::rectangular(2.0, 1.5).unwrap();
        let z = c(0.4, 0.3);
        let h = 1e-5;
        let fd = (lat.wp(z + h).unwrap() - lat.wp(z - h).unwrap()) / (2.0 * h);
        assert!((fd - lat.wp_prime(z).unwrap()).norm() < 1e-5 * fd.norm());
    }

    #[test]
    fn lattice_sum_agrees_roughly() {
        let lat = WeierstrassLattice::square();
        let z = c(0.3, 0.2);
        let direct = lat.wp_lattice_sum(z, lat.default_sum_radius()).unwrap();
        let fast = lat.wp(z).unwrap();
        assert!((direct - fast).norm() < 1e-3 * fast.norm(), "{direct} vs {fast}");
    }
}
