//! File formats and the result document.
//!
//! Numbers in files are explicit: rationals are strings such as `"-3/4"`,
//! complex numbers are `{"re": .., "im": ..}` objects. Object keys are
//! emitted in sorted order, so documents are byte-stable.

use std::path::Path;
use std::str::FromStr;

use kpcm::bridge::{BridgeConstants, CorrespondenceReport, PoleCollision};
use kpcm::cm::{coords_to_pair, CMCoordinates, CMPair, Flavor};
use kpcm::matrix::{Mat, Pivoting};
use kpcm::sato::{FockWindow, GrassmannPoint};
use kpcm::weierstrass::WeierstrassLattice;
use kpcm::{Complex64, Error, Rational, Result};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

pub const SCHEMA_VERSION: &str = "1";

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComplexJson {
    pub re: f64,
    pub im: f64,
}

impl From<Complex64> for ComplexJson {
    fn from(z: Complex64) -> Self {
        Self { re: z.re, im: z.im }
    }
}

impl From<ComplexJson> for Complex64 {
    fn from(z: ComplexJson) -> Self {
        Complex64::new(z.re, z.im)
    }
}

pub fn complex_json(z: Complex64) -> Value {
    json!({ "re": z.re, "im": z.im })
}

pub fn parse_rational(text: &str) -> Result<Rational> {
    let t = text.trim();
    Rational::from_str(t).map_err(|_| Error::Input(format!("{text:?} is not a rational number")))
}

pub fn rational_string(r: &Rational) -> String {
    r.to_string()
}

/// A rational pair, given either by its matrices or by coordinates.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PairFile {
    #[serde(default = "rational_flavor")]
    pub flavor: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x: Option<Vec<Vec<String>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub y: Option<Vec<Vec<String>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub q: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p: Option<Vec<String>>,
}

fn rational_flavor() -> String {
    "rational".into()
}

fn rational_matrix(rows: &[Vec<String>]) -> Result<Mat<Rational>> {
    let rows = rows
        .iter()
        .map(|r| r.iter().map(|s| parse_rational(s)).collect::<Result<Vec<_>>>())
        .collect::<Result<Vec<_>>>()?;
    Mat::from_rows(rows)
}

fn matrix_strings(m: &Mat<Rational>) -> Vec<Vec<String>> {
    m.to_rows().iter().map(|r| r.iter().map(rational_string).collect()).collect()
}

impl PairFile {
    pub fn from_pair(pair: &CMPair<Rational>) -> Self {
        Self {
            flavor: pair.flavor().name().into(),
            x: Some(matrix_strings(pair.x())),
            y: Some(matrix_strings(pair.y())),
            q: None,
            p: None,
        }
    }

    /// Builds the pair without the orbit check, so callers can report a
    /// failed gate instead of a parse error.
    pub fn to_pair_unchecked(&self) -> Result<CMPair<Rational>> {
        let flavor = Flavor::parse(&self.flavor)?;
        if flavor != Flavor::Rational {
            return Err(Error::Input("pair files hold rational pairs".into()));
        }
        match (&self.x, &self.y, &self.q, &self.p) {
            (Some(x), Some(y), None, None) => CMPair::unchecked(rational_matrix(x)?, rational_matrix(y)?, flavor),
            (None, None, Some(q), Some(p)) => {
                let q = q.iter().map(|s| parse_rational(s)).collect::<Result<Vec<_>>>()?;
                let p = p.iter().map(|s| parse_rational(s)).collect::<Result<Vec<_>>>()?;
                coords_to_pair(&q, &p)
            }
            _ => Err(Error::Input("a pair file needs either x and y, or q and p".into())),
        }
    }

    pub fn to_pair(&self) -> Result<CMPair<Rational>> {
        let pair = self.to_pair_unchecked()?;
        CMPair::new(pair.x().clone(), pair.y().clone(), pair.flavor(), Pivoting::EXACT_ZERO)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LatticeJson {
    pub omega1: ComplexJson,
    pub omega2: ComplexJson,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CoordsFile {
    pub flavor: String,
    pub q: Vec<ComplexJson>,
    pub p: Vec<ComplexJson>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lattice: Option<LatticeJson>,
}

impl CoordsFile {
    pub fn to_coords(&self) -> Result<CMCoordinates> {
        let flavor = Flavor::parse(&self.flavor)?;
        let lattice = self
            .lattice
            .as_ref()
            .map(|l| WeierstrassLattice::new(l.omega1.into(), l.omega2.into()))
            .transpose()?;
        CMCoordinates::new(
            self.q.iter().map(|&z| z.into()).collect(),
            self.p.iter().map(|&z| z.into()).collect(),
            flavor,
            lattice,
        )
    }

    pub fn from_coords(c: &CMCoordinates) -> Self {
        Self {
            flavor: c.flavor().name().into(),
            q: c.q().iter().map(|&z| z.into()).collect(),
            p: c.p().iter().map(|&z| z.into()).collect(),
            lattice: c.lattice().map(|l| {
                let (a, b) = l.periods();
                LatticeJson {
                    omega1: a.into(),
                    omega2: b.into(),
                }
            }),
        }
    }
}

/// A point of the Grassmannian window. Each basis vector lists its
/// coordinates by degree from `−n` to `m`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PointFile {
    pub n: usize,
    pub m: usize,
    pub index: i64,
    pub basis: Vec<Vec<String>>,
}

impl PointFile {
    pub fn to_point(&self) -> Result<GrassmannPoint<Rational>> {
        let window = FockWindow::new(self.n, self.m)?;
        let basis = self
            .basis
            .iter()
            .map(|v| v.iter().map(|s| parse_rational(s)).collect::<Result<Vec<_>>>())
            .collect::<Result<Vec<_>>>()?;
        GrassmannPoint::new(window, basis, self.index, Pivoting::EXACT_ZERO)
    }
}

fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::Input(format!("cannot read {}: {e}", path.display())))
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    serde_json::from_str(&read_text(path)?).map_err(|e| Error::Input(format!("{}: {e}", path.display())))
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::Input(format!("cannot write {}: {e}", path.display())))
}

/// Wall-clock data, kept apart so the rest of a document is reproducible.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub elapsed_ms: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResultDocument {
    pub schema_version: String,
    pub command: Value,
    pub inputs: Value,
    pub outputs: Value,
    pub provenance: Value,
    pub timing: Timing,
}

impl ResultDocument {
    pub fn new(command: Value) -> Self {
        Self {
            schema_version: SCHEMA_VERSION.into(),
            command,
            inputs: json!({}),
            outputs: json!({}),
            provenance: json!({}),
            timing: Timing { elapsed_ms: 0.0 },
        }
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("documents serialize");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Input(format!("bad result document: {e}")))
    }
}

pub fn constants_json(k: &BridgeConstants) -> Value {
    json!({
        "a": rational_string(&k.a),
        "c2": rational_string(&k.c2),
        "c3": rational_string(&k.c3),
    })
}

fn collision_json(c: &PoleCollision) -> Value {
    json!({ "x": c.x, "s": c.s })
}

pub fn report_json(r: &CorrespondenceReport) -> Value {
    json!({
        "n": r.n,
        "passed": r.passed,
        "invariant_gate": r.invariant_gate,
        "residual_zero": r.residual_zero,
        "residual_terms": r.residual_terms,
        "poles_match_eigenvalues": r.poles_match_eigenvalues,
        "conserved_traces": r.conserved.iter().map(rational_string).collect::<Vec<_>>(),
        "conserved_exact": r.conserved_exact,
        "pole_particle_deviation": r.pole_particle_deviation,
        "particle_s_end": r.particle_s_end,
        "energy_drift": r.energy_drift,
        "collisions": r.collisions.iter().map(collision_json).collect::<Vec<_>>(),
        "collision_fit": r.collision_fit,
        "completed_phase_space_traversal": r.completed_phase_space_traversal,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn document_roundtrip() {
        let mut doc = ResultDocument::new(json!({ "name": "mdo eval", "expr": "D*t" }));
        doc.outputs = json!({ "normal_form": "t*D + 1", "z": complex_json(Complex64::new(0.5, -2.0)) });
        doc.provenance = json!({ "order": 8 });
        doc.timing.elapsed_ms = 1.25;
        let text = doc.to_json();
        let back = ResultDocument::from_json(&text).unwrap();
        assert_eq!(back, doc);
        assert_eq!(back.to_json(), text);
    }

    #[test]
    fn pair_file_forms() {
        let by_coords: PairFile = serde_json::from_str(r#"{"q": ["0", "1"], "p": ["1/2", "0"]}"#).unwrap();
        let pair = by_coords.to_pair().unwrap();
        let by_matrix = PairFile::from_pair(&pair);
        let text = serde_json::to_string(&by_matrix).unwrap();
        let back: PairFile = serde_json::from_str(&text).unwrap();
        assert_eq!(back.to_pair().unwrap(), pair);

        let bad: PairFile =
            serde_json::from_str(r#"{"x": [["1", "0"], ["0", "2"]], "y": [["0", "0"], ["0", "0"]]}"#).unwrap();
        assert!(bad.to_pair_unchecked().is_ok());
        assert!(matches!(bad.to_pair(), Err(Error::InvariantGate(_))));
        let junk: PairFile = serde_json::from_str(r#"{"q": ["x"], "p": ["0"]}"#).unwrap();
        assert!(matches!(junk.to_pair(), Err(Error::Input(_))));
    }

    #[test]
    fn coords_file_roundtrip() {
        let text = r#"{"flavor": "elliptic",
            "q": [{"re": 0.1, "im": 0}, {"re": 0.6, "im": 0.1}],
            "p": [{"re": 0, "im": 0}, {"re": 0.2, "im": 0}],
            "lattice": {"omega1": {"re": 1, "im": 0}, "omega2": {"re": 0, "im": 1.3}}}"#;
        let f: CoordsFile = serde_json::from_str(text).unwrap();
        let c = f.to_coords().unwrap();
        assert_eq!(CoordsFile::from_coords(&c).to_coords().unwrap(), c);
    }

    #[test]
    fn point_file() {
        let f = PointFile {
            n: 2,
            m: 2,
            index: 0,
            basis: vec![
                vec!["1/3".into(), "0".into(), "1".into(), "0".into(), "0".into()],
                vec!["0".into(), "0".into(), "0".into(), "1".into(), "0".into()],
                vec!["0".into(), "0".into(), "0".into(), "0".into(), "1".into()],
            ],
        };
        let p = f.to_point().unwrap();
        assert!(p.big_cell_test(Pivoting::EXACT_ZERO).unwrap());
    }
}
