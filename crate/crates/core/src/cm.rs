//! Calogero–Moser systems: particle coordinates, matrix pairs with
//! `[X, Y] ∈ 𝕆`, exact flows on pairs and numeric flows on coordinates.
//!
//! Two sign conventions coexist. The coordinate Hamiltonian is
//! `½Σp² + Σ U(q_i − q_j)` with `U = 1/q²`, `1/sin²q` or `℘(q)`, while the
//! matrix Hamiltonian `½ tr Y²` of the rational pair equals
//! `½Σp² − Σ 1/(q_i − q_j)²`. The two are related by running the coordinate
//! flow in imaginary time, see [`calibrate_time_bridge`].

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::matrix::{Mat, Pivoting};
use crate::scalar::Scalar;
use crate::weierstrass::WeierstrassLattice;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Flavor {
    Rational,
    Trigonometric,
    Elliptic,
}

impl Flavor {
    pub fn name(&self) -> &'static str {
        match self {
            Flavor::Rational => "rational",
            Flavor::Trigonometric => "trig",
            Flavor::Elliptic => "elliptic",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "rational" => Ok(Flavor::Rational),
            "trig" | "trigonometric" => Ok(Flavor::Trigonometric),
            "elliptic" => Ok(Flavor::Elliptic),
            other => Err(Error::Input(format!("unknown flavor {other:?}"))),
        }
    }
}

/// Which representative's conjugacy class a traceless matrix belongs to.
///
/// The all-ones-off-diagonal matrix has `M + Id` of rank one, while
/// `diag(1−n, 1, …, 1)` has `M − Id` of rank one. The two are negatives of
/// each other and only conjugate for `n <= 2`; coordinate pairs land in the
/// first class.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OrbitClass {
    /// `n = 1`, where the orbit is `{0}`.
    Zero,
    /// Class of the all-ones-off-diagonal matrix (`M + Id` rank one).
    OffDiagonalOnes,
    /// Class of `diag(1−n, 1, …, 1)` (`M − Id` rank one), when distinct.
    Diagonal,
}

/// The class of `M`, or `None` when `M` lies in neither.
pub fn orbit_class<S: Scalar>(m: &Mat<S>, piv: Pivoting) -> Result<Option<OrbitClass>> {
    if !m.is_square() {
        return Err(Error::Dimension("orbit membership needs a square matrix".into()));
    }
    let n = m.rows();
    let tol = if S::EXACT { 0.0 } else { piv.tol };
    if n == 1 {
        return Ok(m[(0, 0)].is_negligible(tol).then_some(OrbitClass::Zero));
    }
    if !m.trace().is_negligible(tol * n as f64) {
        return Ok(None);
    }
    let id = Mat::identity(n);
    if m.add(&id)?.rank(piv)? == 1 {
        return Ok(Some(OrbitClass::OffDiagonalOnes));
    }
    if m.sub(&id)?.rank(piv)? == 1 {
        return Ok(Some(OrbitClass::Diagonal));
    }
    Ok(None)
}

/// `M ∈ 𝕆`, accepting the class of either representative.
pub fn orbit_membership<S: Scalar>(m: &Mat<S>, piv: Pivoting) -> Result<bool> {
    Ok(orbit_class(m, piv)?.is_some())
}

#[derive(Clone, PartialEq)]
pub struct CMPair<S> {
    x: Mat<S>,
    y: Mat<S>,
    flavor: Flavor,
}

impl<S: Scalar> CMPair<S> {
    /// Checks the defining condition of the flavor.
    pub fn new(x: Mat<S>, y: Mat<S>, flavor: Flavor, piv: Pivoting) -> Result<Self> {
        let pair = Self::unchecked(x, y, flavor)?;
        let ok = match flavor {
            Flavor::Rational => orbit_membership(&pair.x.commutator(&pair.y)?, piv)?,
            Flavor::Trigonometric => trig_pair_check(&pair, piv)?,
            Flavor::Elliptic => {
                return Err(Error::Input("there is no elliptic matrix model".into()))
            }
        };
        if !ok {
            return Err(Error::InvariantGate(format!(
                "the {} pair condition fails",
                flavor.name()
            )));
        }
        Ok(pair)
    }

    /// Builds a pair without checking the orbit condition.
    pub fn unchecked(x: Mat<S>, y: Mat<S>, flavor: Flavor) -> Result<Self> {
        if !x.is_square() || x.rows() != y.rows() || x.cols() != y.cols() {
            return Err(Error::Dimension("X and Y must be square of equal size".into()));
        }
        Ok(Self { x, y, flavor })
    }

    pub fn n(&self) -> usize {
        self.x.rows()
    }

    pub fn x(&self) -> &Mat<S> {
        &self.x
    }

    pub fn y(&self) -> &Mat<S> {
        &self.y
    }

    pub fn flavor(&self) -> Flavor {
        self.flavor
    }

    /// Whether the pair satisfies its flavor's condition.
    pub fn satisfies_invariant(&self, piv: Pivoting) -> Result<bool> {
        match self.flavor {
            Flavor::Rational => orbit_membership(&self.x.commutator(&self.y)?, piv),
            Flavor::Trigonometric => trig_pair_check(self, piv),
            Flavor::Elliptic => Ok(false),
        }
    }

    /// `(gXg⁻¹, gYg⁻¹)`.
    pub fn conjugate(&self, g: &Mat<S>) -> Result<Self> {
        let gi = g.inverse()?;
        Ok(Self {
            x: g.mul(&self.x)?.mul(&gi)?,
            y: g.mul(&self.y)?.mul(&gi)?,
            flavor: self.flavor,
        })
    }

    pub fn map<T: Scalar>(&self, f: impl Fn(&S) -> T + Copy) -> CMPair<T> {
        CMPair {
            x: self.x.map(f),
            y: self.y.map(f),
            flavor: self.flavor,
        }
    }

    pub fn to_c64(&self) -> CMPair<Complex64> {
        self.map(|s| s.to_c64())
    }
}

impl<S: Scalar> std::fmt::Debug for CMPair<S> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("CMPair")
            .field("flavor", &self.flavor)
            .field("x", &self.x)
            .field("y", &self.y)
            .finish()
    }
}

fn check_distinct<S: Scalar>(q: &[S]) -> Result<()> {
    for i in 0..q.len() {
        for j in i + 1..q.len() {
            if (q[i].clone() - q[j].clone()).is_zero() {
                return Err(Error::Collision { i, j });
            }
        }
    }
    Ok(())
}

/// `X = diag(q)`, `Y_ii = p_i`, `Y_ij = 1/(q_i − q_j)`.
pub fn coords_to_pair<S: Scalar>(q: &[S], p: &[S]) -> Result<CMPair<S>> {
    if q.len() != p.len() || q.is_empty() {
        return Err(Error::Dimension("need equally many positions and momenta".into()));
    }
    check_distinct(q)?;
    let n = q.len();
    let x = Mat::diagonal(q);
    let y = Mat::from_fn(n, n, |i, j| {
        if i == j {
            p[i].clone()
        } else {
            S::one() / (q[i].clone() - q[j].clone())
        }
    });
    Ok(CMPair {
        x,
        y,
        flavor: Flavor::Rational,
    })
}

/// `(1/k) tr Y^k`.
pub fn hamiltonian_matrix<S: Scalar>(pair: &CMPair<S>, k: u32) -> Result<S> {
    if k == 0 {
        return Err(Error::Input("k must be positive".into()));
    }
    Ok(pair.y.pow(k)?.trace() / S::from_i64(k as i64))
}

/// Time-`s` flow of `(1/k) tr Y^k`: `(X + s·Y^{k−1}, Y)`.
pub fn rational_flow_exact<S: Scalar>(pair: &CMPair<S>, k: u32, s: &S) -> Result<CMPair<S>> {
    if k == 0 {
        return Err(Error::Input("k must be positive".into()));
    }
    let step = pair.y.pow(k - 1)?.scale(s);
    Ok(CMPair {
        x: pair.x.add(&step)?,
        y: pair.y.clone(),
        flavor: pair.flavor,
    })
}

fn to_dmatrix(m: &Mat<Complex64>) -> DMatrix<Complex64> {
    DMatrix::from_fn(m.rows(), m.cols(), |i, j| m[(i, j)])
}

/// Eigenvalues of a complex matrix, sorted by real then imaginary part.
pub fn eigenvalues(m: &Mat<Complex64>) -> Result<Vec<Complex64>> {
    if !m.is_square() {
        return Err(Error::Dimension("eigenvalues of a non-square matrix".into()));
    }
    let schur = to_dmatrix(m).schur();
    let mut ev: Vec<Complex64> = schur
        .eigenvalues()
        .ok_or_else(|| Error::Indeterminate("Schur form did not converge".into()))?
        .iter()
        .copied()
        .collect();
    ev.sort_by(|a, b| a.re.total_cmp(&b.re).then(a.im.total_cmp(&b.im)));
    Ok(ev)
}

/// Particle positions of a pair: the eigenvalues of `X`.
pub fn positions<S: Scalar>(pair: &CMPair<S>) -> Result<Vec<Complex64>> {
    eigenvalues(&pair.x.map(|s| s.to_c64()))
}

/// Relative separation below which two eigenvalues count as colliding.
pub const EIGEN_COLLISION_TOL: f64 = 1e-9;

/// Diagonalizes `X` and reads `q` off its eigenvalues and `p` off the
/// diagonal of `Y` in the eigenbasis.
pub fn pair_to_coords<S: Scalar>(pair: &CMPair<S>) -> Result<CMCoordinates> {
    if pair.flavor != Flavor::Rational {
        return Err(Error::Input("coordinates are read from rational pairs".into()));
    }
    let x = pair.x.map(|s| s.to_c64());
    let y = pair.y.map(|s| s.to_c64());
    let n = x.rows();
    let q = eigenvalues(&x)?;
    let scale = q.iter().map(|z| z.norm()).fold(1.0, f64::max);
    for i in 0..n {
        for j in i + 1..n {
            if (q[i] - q[j]).norm() < EIGEN_COLLISION_TOL * scale {
                return Err(Error::Collision { i, j });
            }
        }
    }
    let xd = to_dmatrix(&x);
    let mut g = DMatrix::<Complex64>::zeros(n, n);
    for (k, lambda) in q.iter().enumerate() {
        let shifted = &xd - DMatrix::<Complex64>::identity(n, n) * *lambda;
        let svd = shifted.svd(false, true);
        let v_t = svd.v_t.ok_or_else(|| Error::Indeterminate("SVD failed".into()))?;
        let (idx, _) = svd
            .singular_values
            .iter()
            .enumerate()
            .min_by(|a, b| a.1.total_cmp(b.1))
            .expect("nonempty");
        for r in 0..n {
            g[(r, k)] = v_t[(idx, r)].conj();
        }
    }
    let gi = g
        .clone()
        .try_inverse()
        .ok_or_else(|| Error::Indeterminate("eigenvector matrix is singular".into()))?;
    let yt = &gi * to_dmatrix(&y) * &g;
    let p = (0..n).map(|i| yt[(i, i)]).collect();
    CMCoordinates::new(q, p, Flavor::Rational, None)
}

#[derive(Clone, Debug, PartialEq)]
pub struct CMCoordinates {
    q: Vec<Complex64>,
    p: Vec<Complex64>,
    flavor: Flavor,
    lattice: Option<WeierstrassLattice>,
}

impl CMCoordinates {
    pub fn new(
        q: Vec<Complex64>,
        p: Vec<Complex64>,
        flavor: Flavor,
        lattice: Option<WeierstrassLattice>,
    ) -> Result<Self> {
        if q.len() != p.len() {
            return Err(Error::Dimension("need equally many positions and momenta".into()));
        }
        if (flavor == Flavor::Elliptic) != lattice.is_some() {
            return Err(Error::Input("a lattice is required exactly for the elliptic flavor".into()));
        }
        check_distinct(&q)?;
        Ok(Self {
            q,
            p,
            flavor,
            lattice,
        })
    }

    pub fn n(&self) -> usize {
        self.q.len()
    }

    pub fn q(&self) -> &[Complex64] {
        &self.q
    }

    pub fn p(&self) -> &[Complex64] {
        &self.p
    }

    pub fn flavor(&self) -> Flavor {
        self.flavor
    }

    pub fn lattice(&self) -> Option<&WeierstrassLattice> {
        self.lattice.as_ref()
    }
}

/// `U(z)` and `U′(z)` of a flavor.
pub fn potential(flavor: Flavor, lattice: Option<&WeierstrassLattice>, z: Complex64) -> Result<(Complex64, Complex64)> {
    match flavor {
        Flavor::Rational => {
            if z.norm() == 0.0 {
                return Err(Error::Collision { i: 0, j: 0 });
            }
            let z2 = z * z;
            Ok((1.0 / z2, -2.0 / (z2 * z)))
        }
        Flavor::Trigonometric => {
            let s = z.sin();
            if s.norm() == 0.0 {
                return Err(Error::Collision { i: 0, j: 0 });
            }
            let s2 = s * s;
            Ok((1.0 / s2, -2.0 * z.cos() / (s2 * s)))
        }
        Flavor::Elliptic => {
            let lat = lattice.ok_or_else(|| Error::Input("elliptic flavor needs a lattice".into()))?;
            Ok((lat.wp(z)?, lat.wp_prime(z)?))
        }
    }
}

fn pairwise<T>(q: &[Complex64], mut f: impl FnMut(usize, usize, Complex64) -> Result<T>) -> Result<()> {
    for i in 0..q.len() {
        for j in i + 1..q.len() {
            f(i, j, q[i] - q[j]).map_err(|e| match e {
                Error::Collision { .. } => Error::Collision { i, j },
                other => other,
            })?;
        }
    }
    Ok(())
}

fn energy(flavor: Flavor, lattice: Option<&WeierstrassLattice>, q: &[Complex64], p: &[Complex64]) -> Result<Complex64> {
    let mut h: Complex64 = p.iter().map(|x| x * x).sum::<Complex64>() * 0.5;
    pairwise(q, |_, _, z| {
        h += potential(flavor, lattice, z)?.0;
        Ok(())
    })?;
    Ok(h)
}

/// `−∂H/∂q`.
fn forces(flavor: Flavor, lattice: Option<&WeierstrassLattice>, q: &[Complex64]) -> Result<Vec<Complex64>> {
    let mut f = vec![Complex64::new(0.0, 0.0); q.len()];
    pairwise(q, |i, j, z| {
        let d = potential(flavor, lattice, z)?.1;
        f[i] -= d;
        f[j] += d;
        Ok(())
    })?;
    Ok(f)
}

/// `½Σp² + Σ_{i<j} U(q_i − q_j)`.
pub fn hamiltonian_coords(c: &CMCoordinates) -> Result<Complex64> {
    energy(c.flavor, c.lattice.as_ref(), &c.q, &c.p)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Integrator {
    Leapfrog,
    Rk4,
}

impl Integrator {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "leapfrog" => Ok(Integrator::Leapfrog),
            "rk4" => Ok(Integrator::Rk4),
            other => Err(Error::Input(format!("unknown integrator {other:?}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FlowOptions {
    /// Stop once two particles come closer than this.
    pub collision_threshold: f64,
    /// Record every `sample_every`-th step (the last step is always kept).
    pub sample_every: usize,
}

impl Default for FlowOptions {
    fn default() -> Self {
        Self {
            collision_threshold: 1e-8,
            sample_every: 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub step: usize,
    pub time: Complex64,
    pub q: Vec<Complex64>,
    pub p: Vec<Complex64>,
    pub energy: Complex64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CollisionEvent {
    pub step: usize,
    pub time: Complex64,
    pub i: usize,
    pub j: usize,
    pub separation: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub samples: Vec<Sample>,
    pub collision: Option<CollisionEvent>,
    /// `max |H(t) − H(0)| / max(|H(0)|, 1)` over all steps.
    pub energy_drift: f64,
}

impl Trajectory {
    /// Columns: step, time re/im, every q and p re/im, energy re/im.
    pub fn to_csv(&self) -> String {
        use std::fmt::Write;
        let n = self.samples.first().map_or(0, |s| s.q.len());
        let mut out = String::from("step,time_re,time_im");
        for name in ["q", "p"] {
            for k in 1..=n {
                write!(out, ",{name}_{k}_re,{name}_{k}_im").expect("string write");
            }
        }
        out.push_str(",energy_re,energy_im\n");
        for s in &self.samples {
            write!(out, "{},{:e},{:e}", s.step, s.time.re, s.time.im).expect("string write");
            for z in s.q.iter().chain(&s.p) {
                write!(out, ",{:e},{:e}", z.re, z.im).expect("string write");
            }
            writeln!(out, ",{:e},{:e}", s.energy.re, s.energy.im).expect("string write");
        }
        out
    }
}

fn min_separation(q: &[Complex64]) -> Option<(usize, usize, f64)> {
    let mut best: Option<(usize, usize, f64)> = None;
    for i in 0..q.len() {
        for j in i + 1..q.len() {
            let d = (q[i] - q[j]).norm();
            if best.is_none_or(|b| d < b.2) {
                best = Some((i, j, d));
            }
        }
    }
    best
}

/// Integrates `q̇ = p`, `ṗ = −∂H/∂q` with a complex step `dt`.
pub fn numeric_flow_coords(
    c: &CMCoordinates,
    dt: Complex64,
    steps: usize,
    integrator: Integrator,
    opts: FlowOptions,
) -> Result<Trajectory> {
    let lat = c.lattice.as_ref();
    let fl = c.flavor;
    let mut q = c.q.clone();
    let mut p = c.p.clone();
    let e0 = energy(fl, lat, &q, &p)?;
    let mut samples = vec![Sample {
        step: 0,
        time: Complex64::new(0.0, 0.0),
        q: q.clone(),
        p: p.clone(),
        energy: e0,
    }];
    let mut drift: f64 = 0.0;
    let every = opts.sample_every.max(1);
    let axpy = |a: &[Complex64], h: Complex64, b: &[Complex64]| -> Vec<Complex64> {
        a.iter().zip(b).map(|(x, y)| x + h * y).collect()
    };
    for step in 1..=steps {
        match integrator {
            Integrator::Leapfrog => {
                let f = forces(fl, lat, &q)?;
                p = axpy(&p, dt * 0.5, &f);
                q = axpy(&q, dt, &p);
                if let Some(event) = collision_at(&q, step, dt, opts) {
                    return Ok(finish(samples, Some(event), drift));
                }
                let f = forces(fl, lat, &q)?;
                p = axpy(&p, dt * 0.5, &f);
            }
            Integrator::Rk4 => {
                let k1q = p.clone();
                let k1p = forces(fl, lat, &q)?;
                let q2 = axpy(&q, dt * 0.5, &k1q);
                let k2q = axpy(&p, dt * 0.5, &k1p);
                let k2p = forces(fl, lat, &q2)?;
                let q3 = axpy(&q, dt * 0.5, &k2q);
                let k3q = axpy(&p, dt * 0.5, &k2p);
                let k3p = forces(fl, lat, &q3)?;
                let q4 = axpy(&q, dt, &k3q);
                let k4q = axpy(&p, dt, &k3p);
                let k4p = forces(fl, lat, &q4)?;
                let h = dt / 6.0;
                for i in 0..q.len() {
                    q[i] += h * (k1q[i] + 2.0 * k2q[i] + 2.0 * k3q[i] + k4q[i]);
                    p[i] += h * (k1p[i] + 2.0 * k2p[i] + 2.0 * k3p[i] + k4p[i]);
                }
                if let Some(event) = collision_at(&q, step, dt, opts) {
                    return Ok(finish(samples, Some(event), drift));
                }
            }
        }
        let e = energy(fl, lat, &q, &p)?;
        drift = drift.max((e - e0).norm() / e0.norm().max(1.0));
        if step % every == 0 || step == steps {
            samples.push(Sample {
                step,
                time: dt * step as f64,
                q: q.clone(),
                p: p.clone(),
                energy: e,
            });
        }
    }
    Ok(finish(samples, None, drift))
}

fn collision_at(q: &[Complex64], step: usize, dt: Complex64, opts: FlowOptions) -> Option<CollisionEvent> {
    let (i, j, d) = min_separation(q)?;
    (d < opts.collision_threshold || !d.is_finite()).then_some(CollisionEvent {
        step,
        time: dt * step as f64,
        i,
        j,
        separation: d,
    })
}

fn finish(samples: Vec<Sample>, collision: Option<CollisionEvent>, energy_drift: f64) -> Trajectory {
    Trajectory {
        samples,
        collision,
        energy_drift,
    }
}

/// `XYX⁻¹ − Y ∈ 𝕆` with `X` invertible.
pub fn trig_pair_check<S: Scalar>(pair: &CMPair<S>, piv: Pivoting) -> Result<bool> {
    let xi = pair.x.inverse().map_err(|_| Error::Singular)?;
    let m = pair.x.mul(&pair.y)?.mul(&xi)?.sub(&pair.y)?;
    orbit_membership(&m, piv)
}

/// Trigonometric pair ansatz `X = diag(e^{2iq})`, `Y_jj = p_j`,
/// `Y_jk = κ / sin(q_j − q_k)`.
pub fn trig_coords_to_pair(q: &[Complex64], p: &[Complex64], kappa: Complex64) -> Result<CMPair<Complex64>> {
    if q.len() != p.len() || q.is_empty() {
        return Err(Error::Dimension("need equally many positions and momenta".into()));
    }
    check_distinct(q)?;
    let n = q.len();
    let x = Mat::diagonal(&q.iter().map(|z| (Complex64::i() * 2.0 * z).exp()).collect::<Vec<_>>());
    let y = Mat::from_fn(n, n, |j, k| if j == k { p[j] } else { kappa / (q[j] - q[k]).sin() });
    Ok(CMPair {
        x,
        y,
        flavor: Flavor::Trigonometric,
    })
}

/// Outcome of fixing the trigonometric ansatz constant.
#[derive(Clone, Debug, PartialEq)]
pub struct TrigCalibration {
    pub kappa: Complex64,
    /// `½ tr Y² = ½Σp² + coupling·Σ 1/sin²(q_j − q_k)`.
    pub coupling: Complex64,
}

/// Candidate values tried for `κ`.
pub fn trig_kappa_candidates() -> Vec<Complex64> {
    let mut out = Vec::new();
    for r in [1.0, 0.5, 2.0] {
        for u in [Complex64::new(1.0, 0.0), Complex64::new(-1.0, 0.0), Complex64::i(), -Complex64::i()] {
            out.push(u * r);
        }
    }
    out
}

/// Searches `κ` such that `XYX⁻¹ − Y` lies in the same class as the
/// rational coordinate commutator for `n = 2, 3` and `½ tr Y²` is `½Σp²` plus a real positive
/// multiple of `Σ 1/sin²`.
pub fn calibrate_trig_kappa() -> Result<TrigCalibration> {
    let tol = 1e-10;
    let samples: [(&[f64], &[f64]); 3] = [
        (&[0.3, 1.1], &[0.2, -0.7]),
        (&[0.15, 0.9, 2.0], &[0.5, 0.1, -0.3]),
        (&[-0.4, 0.35, 1.3], &[0.0, 1.0, 0.25]),
    ];
    let mut hits = Vec::new();
    'cand: for kappa in trig_kappa_candidates() {
        let mut coupling: Option<Complex64> = None;
        for (q, p) in samples {
            let q: Vec<Complex64> = q.iter().map(|&x| Complex64::new(x, 0.0)).collect();
            let p: Vec<Complex64> = p.iter().map(|&x| Complex64::new(x, 0.0)).collect();
            let pair = trig_coords_to_pair(&q, &p, kappa)?;
            let xi = pair.x.inverse()?;
            let m = pair.x.mul(&pair.y)?.mul(&xi)?.sub(&pair.y)?;
            if orbit_class(&m, Pivoting { tol })? != Some(OrbitClass::OffDiagonalOnes) {
                continue 'cand;
            }
            let h = hamiltonian_matrix(&pair, 2)?;
            let kinetic: Complex64 = p.iter().map(|x| x * x).sum::<Complex64>() * 0.5;
            let mut pot = Complex64::new(0.0, 0.0);
            pairwise(&q, |_, _, z| {
                pot += 1.0 / (z.sin() * z.sin());
                Ok(())
            })?;
            let c = (h - kinetic) / pot;
            if let Some(prev) = coupling {
                if (prev - c).norm() > tol {
                    continue 'cand;
                }
            }
            coupling = Some(c);
        }
        let c = coupling.expect("at least one sample");
        if c.im.abs() < tol && c.re > 0.0 {
            hits.push(TrigCalibration { kappa, coupling: c });
        }
    }
    match hits.len() {
        1 => Ok(hits.pop().expect("one hit")),
        0 => Err(Error::Calibration("no trigonometric ansatz constant passes".into())),
        k => Err(Error::Calibration(format!("{k} trigonometric ansatz constants pass"))),
    }
}

/// Candidates for the time factor `μ` of the coordinate/matrix bridge.
pub fn time_bridge_candidates() -> [Complex64; 4] {
    [
        Complex64::new(1.0, 0.0),
        Complex64::new(-1.0, 0.0),
        Complex64::i(),
        -Complex64::i(),
    ]
}

/// Maps matrix-flow data to coordinate-flow data: the eigenvalues of
/// `X + sY` are `q(μs)` for the coordinate flow started at `(q, p/μ)`.
pub fn bridge_coordinates(q: &[Complex64], p_matrix: &[Complex64], mu: Complex64) -> Result<CMCoordinates> {
    CMCoordinates::new(
        q.to_vec(),
        p_matrix.iter().map(|x| x / mu).collect(),
        Flavor::Rational,
        None,
    )
}

/// Sorted comparison of two position sets.
pub fn position_deviation(a: &[Complex64], b: &[Complex64]) -> f64 {
    let key = |z: &Complex64| (z.re, z.im);
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(|x, y| key(x).partial_cmp(&key(y)).expect("finite"));
    b.sort_by(|x, y| key(x).partial_cmp(&key(y)).expect("finite"));
    a.iter().zip(&b).map(|(x, y)| (x - y).norm()).fold(0.0, f64::max)
}

/// Finds the factors `μ` for which the coordinate flow in time `μs`
/// reproduces the eigenvalues of the exact rational flow on `n = 2` data.
/// `±i` are equivalent; the first passing candidate is returned.
pub fn calibrate_time_bridge() -> Result<Complex64> {
    let q = [Complex64::new(0.0, 0.0), Complex64::new(1.0, 0.0)];
    let p = [Complex64::new(0.3, 0.0), Complex64::new(-0.1, 0.0)];
    let pair = coords_to_pair(&q, &p)?;
    let s_end = 0.2;
    let steps = 400;
    for mu in time_bridge_candidates() {
        let coords = bridge_coordinates(&q, &p, mu)?;
        let traj = numeric_flow_coords(
            &coords,
            mu * (s_end / steps as f64),
            steps,
            Integrator::Rk4,
            FlowOptions::default(),
        )?;
        if traj.collision.is_some() {
            continue;
        }
        let last = traj.samples.last().expect("samples");
        let exact = positions(&rational_flow_exact(&pair, 2, &Complex64::new(s_end, 0.0))?)?;
        if position_deviation(&last.q, &exact) < 1e-8 {
            return Ok(mu);
        }
    }
    Err(Error::Calibration("no time factor matches the exact rational flow".into()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scalar::{rat, Rational};

    fn r(x: i64) -> Rational {
        rat(x, 1)
    }

    fn c(x: f64) -> Complex64 {
        Complex64::new(x, 0.0)
    }

    #[test]
    fn orbit_examples() {
        let piv = Pivoting::EXACT_ZERO;
        for n in 1..=4 {
            let mut d = vec![r(1); n];
            d[0] = r(1 - n as i64);
            assert!(orbit_membership(&Mat::diagonal(&d), piv).unwrap());
            let ones = Mat::from_fn(n, n, |i, j| if i == j { r(0) } else { r(1) });
            assert!(orbit_membership(&ones, piv).unwrap());
        }
        assert!(!orbit_membership(&Mat::<Rational>::zeros(3, 3), piv).unwrap());
        let ones = Mat::from_fn(3, 3, |i, j| if i == j { r(0) } else { r(1) });
        assert_eq!(orbit_class(&ones, piv).unwrap(), Some(OrbitClass::OffDiagonalOnes));
        let diag = Mat::diagonal(&[r(-2), r(1), r(1)]);
        assert_eq!(orbit_class(&diag, piv).unwrap(), Some(OrbitClass::Diagonal));
        assert!(orbit_membership(&Mat::<Rational>::zeros(3, 2), piv).is_err());
    }

    #[test]
    fn rational_pair_examples() {
        let pair = coords_to_pair(&[r(0), r(1)], &[r(0), r(0)]).unwrap();
        assert_eq!(pair.y().to_rows(), vec![vec![r(0), r(-1)], vec![r(1), r(0)]]);
        let comm = pair.x().commutator(pair.y()).unwrap();
        assert_eq!(comm.to_rows(), vec![vec![r(0), r(1)], vec![r(1), r(0)]]);
        assert!(pair.satisfies_invariant(Pivoting::EXACT_ZERO).unwrap());
        assert_eq!(hamiltonian_matrix(&pair, 2).unwrap(), r(-1));
        assert_eq!(hamiltonian_matrix(&pair, 1).unwrap(), r(0));

        let one = coords_to_pair(&[rat(3, 2)], &[r(5)]).unwrap();
        assert!(one.satisfies_invariant(Pivoting::EXACT_ZERO).unwrap());
        assert!(matches!(coords_to_pair(&[r(1), r(1)], &[r(0), r(0)]), Err(Error::Collision { .. })));
    }

    #[test]
    fn exact_flow_collides_at_one_half() {
        let pair = coords_to_pair(&[r(0), r(1)], &[r(0), r(0)]).unwrap();
        let at = |s: Rational| rational_flow_exact(&pair, 2, &s).unwrap();
        let half = at(rat(1, 2));
        assert_eq!(half.x().to_rows(), vec![vec![r(0), rat(-1, 2)], vec![rat(1, 2), r(1)]]);
        assert_eq!(half.x().char_poly().unwrap(), vec![rat(1, 4), r(-1), r(1)]);
        assert!(matches!(pair_to_coords(&half), Err(Error::Collision { .. })));
        assert!(half.satisfies_invariant(Pivoting::EXACT_ZERO).unwrap());
        let beyond = at(r(3));
        for k in 1..=2 {
            assert_eq!(hamiltonian_matrix(&beyond, k).unwrap(), hamiltonian_matrix(&pair, k).unwrap());
        }
        let q = positions(&at(rat(3, 10))).unwrap();
        let disc = (1.0f64 - 4.0 * 0.09).sqrt();
        assert!((q[0] - c((1.0 - disc) / 2.0)).norm() < 1e-12);
    }

    #[test]
    fn chart_roundtrip_and_conjugation() {
        let q = [rat(1, 3), r(-2), rat(7, 5)];
        let p = [r(1), rat(-1, 2), r(2)];
        let pair = coords_to_pair(&q, &p).unwrap();
        let g = Mat::from_rows(vec![vec![r(1), r(2), r(0)], vec![r(0), r(1), r(3)], vec![r(1), r(0), r(1)]]).unwrap();
        let conj = pair.conjugate(&g).unwrap();
        assert!(conj.satisfies_invariant(Pivoting::EXACT_ZERO).unwrap());
        for k in 1..=3 {
            assert_eq!(hamiltonian_matrix(&conj, k).unwrap(), hamiltonian_matrix(&pair, k).unwrap());
        }
        for candidate in [&pair, &conj] {
            let coords = pair_to_coords(candidate).unwrap();
            let mut got: Vec<(f64, f64)> = coords.q().iter().zip(coords.p()).map(|(a, b)| (a.re, b.re)).collect();
            got.sort_by(|a, b| a.0.total_cmp(&b.0));
            let mut want: Vec<(f64, f64)> = q.iter().zip(&p).map(|(a, b)| (a.to_c64().re, b.to_c64().re)).collect();
            want.sort_by(|a, b| a.0.total_cmp(&b.0));
            for (x, y) in got.iter().zip(&want) {
                assert!((x.0 - y.0).abs() < 1e-10 && (x.1 - y.1).abs() < 1e-10, "{got:?} vs {want:?}");
            }
        }
    }

    #[test]
    fn coordinate_hamiltonians() {
        let co = CMCoordinates::new(vec![c(0.0), c(1.0)], vec![c(0.0), c(0.0)], Flavor::Rational, None).unwrap();
        assert!((hamiltonian_coords(&co).unwrap() - 1.0).norm() < 1e-15);
        let single = CMCoordinates::new(vec![c(0.4)], vec![c(3.0)], Flavor::Trigonometric, None).unwrap();
        assert!((hamiltonian_coords(&single).unwrap() - 4.5).norm() < 1e-15);
        let lat = WeierstrassLattice::rectangular(2.0, 1.5).unwrap();
        let el = CMCoordinates::new(vec![c(0.0), c(1.0)], vec![c(1.0), c(0.0)], Flavor::Elliptic, Some(lat)).unwrap();
        let want = 0.5 + lat.wp(c(-1.0)).unwrap();
        assert!((hamiltonian_coords(&el).unwrap() - want).norm() < 1e-12);
    }

    #[test]
    fn free_motion_and_center_of_mass() {
        let co = CMCoordinates::new(vec![c(0.5)], vec![c(2.0)], Flavor::Rational, None).unwrap();
        let tr = numeric_flow_coords(&co, c(0.01), 100, Integrator::Leapfrog, FlowOptions::default()).unwrap();
        assert!((tr.samples.last().unwrap().q[0] - 2.5).norm() < 1e-12);

        let co = CMCoordinates::new(vec![c(-1.0), c(1.0)], vec![c(0.5), c(0.5)], Flavor::Rational, None).unwrap();
        let tr = numeric_flow_coords(&co, c(0.001), 1000, Integrator::Rk4, FlowOptions::default()).unwrap();
        let last = tr.samples.last().unwrap();
        assert!(((last.q[0] + last.q[1]) * 0.5 - 0.5).norm() < 1e-12);
        assert!(tr.energy_drift < 1e-10);
    }

    #[test]
    fn time_bridge_is_imaginary() {
        let mu = calibrate_time_bridge().unwrap();
        assert!((mu - Complex64::i()).norm() < 1e-15);
    }

    #[test]
    fn trig_ansatz() {
        let cal = calibrate_trig_kappa().unwrap();
        assert!((cal.kappa - Complex64::new(0.0, -0.5)).norm() < 1e-15);
        assert!((cal.coupling - 0.25).norm() < 1e-10);
        let id = CMPair::unchecked(Mat::<Rational>::identity(2), Mat::identity(2), Flavor::Trigonometric).unwrap();
        assert!(!trig_pair_check(&id, Pivoting::EXACT_ZERO).unwrap());
        let one = CMPair::unchecked(Mat::diagonal(&[r(3)]), Mat::diagonal(&[r(7)]), Flavor::Trigonometric).unwrap();
        assert!(trig_pair_check(&one, Pivoting::EXACT_ZERO).unwrap());
    }

    #[test]
    fn collision_is_reported() {
        // Attractive flow (imaginary time) of the n = 2 example collides at s = ½.
        let co = bridge_coordinates(&[c(0.0), c(1.0)], &[c(0.0), c(0.0)], Complex64::i()).unwrap();
        let opts = FlowOptions {
            collision_threshold: 1e-2,
            sample_every: 10,
        };
        let tr = numeric_flow_coords(&co, Complex64::i() * 1e-4, 10_000, Integrator::Rk4, opts).unwrap();
        let ev = tr.collision.clone().expect("collision");
        assert!((ev.time.im - 0.5).abs() < 1e-3);
        assert!(tr.to_csv().starts_with("step,time_re,time_im,q_1_re"));
    }
}
