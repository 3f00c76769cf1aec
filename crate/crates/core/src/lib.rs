//! Microdifferential operators, KP flows, Sato Grassmannian windows and
//! Calogero–Moser systems.
//!
//! The algebra is generic over [`Scalar`]; the aliases below fix the two
//! coefficient fields used in practice.

pub mod bridge;
pub mod cm;
pub mod error;
pub mod expr;
pub mod mdo;
pub mod scalar;
pub mod jet;
pub mod kp;
pub mod matrix;
pub mod sato;
pub mod series;
pub mod weierstrass;

pub use error::{Error, Result};
pub use expr::{parse_operator, print_operator, LoweringConfig, OperatorExpr};
pub use mdo::MicroDiffOp;
pub use scalar::{Rational, Scalar, GaussianRational};
pub use series::TruncatedSeries;

pub use num_complex::Complex64;

/// Exact series over ℚ.
pub type ExactSeries = TruncatedSeries<Rational>;
/// Exact operators over ℚ.
pub type ExactOp = MicroDiffOp<Rational>;
/// Floating operators over ℂ.
pub type ComplexOp = MicroDiffOp<Complex64>;
