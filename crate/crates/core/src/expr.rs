//! Textual operator syntax.
//!
//! ```text
//! expr   := ['-'] term (('+' | '-') term)*
//! term   := factor ('*' factor)*
//! factor := atom ['^' int]
//! atom   := rational | 'i' | 't' | 'D' | '(' expr ')'
//! ```
//!
//! `rational` is `digits`, `digits/digits` or a finite decimal. An exponent may
//! be negative only when its base is `D`. The printer emits the canonical
//! form: terms `c*t^m*D^k` in descending `k`, ascending `m`.

use std::fmt::Write as _;

use num_bigint::BigInt;
use num_traits::{One, Signed, Zero};

use crate::error::{Error, Result};
use crate::mdo::MicroDiffOp;
use crate::scalar::{Rational, Scalar};
use crate::series::TruncatedSeries;

#[derive(Debug, Clone, PartialEq)]
pub enum OperatorExpr {
    Num(Rational),
    I,
    T,
    D,
    Neg(Box<OperatorExpr>),
    Add(Box<OperatorExpr>, Box<OperatorExpr>),
    Sub(Box<OperatorExpr>, Box<OperatorExpr>),
    Mul(Box<OperatorExpr>, Box<OperatorExpr>),
    Pow(Box<OperatorExpr>, i64),
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Num { value: Rational, integral: bool },
    I,
    T,
    D,
    Plus,
    Minus,
    Star,
    Caret,
    LParen,
    RParen,
    End,
}

#[derive(Debug, Clone)]
struct Token {
    tok: Tok,
    line: usize,
    column: usize,
}

fn syntax(line: usize, column: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        line,
        column,
        message: message.into(),
    }
}

fn lex(text: &str) -> Result<Vec<Token>> {
    let chars: Vec<char> = text.chars().collect();
    let mut out = Vec::new();
    let (mut line, mut col) = (1usize, 1usize);
    let mut k = 0;
    while k < chars.len() {
        let c = chars[k];
        let (l0, c0) = (line, col);
        let single = match c {
            '\n' => {
                line += 1;
                col = 1;
                k += 1;
                continue;
            }
            c if c.is_whitespace() => {
                col += 1;
                k += 1;
                continue;
            }
            'i' => Some(Tok::I),
            't' => Some(Tok::T),
            'D' | '∂' => Some(Tok::D),
            '+' => Some(Tok::Plus),
            '-' | '−' => Some(Tok::Minus),
            '*' | '·' => Some(Tok::Star),
            '^' => Some(Tok::Caret),
            '(' => Some(Tok::LParen),
            ')' => Some(Tok::RParen),
            _ => None,
        };
        if let Some(tok) = single {
            out.push(Token {
                tok,
                line: l0,
                column: c0,
            });
            k += 1;
            col += 1;
            continue;
        }
        if !c.is_ascii_digit() {
            return Err(syntax(l0, c0, format!("unexpected character '{c}'")));
        }
        let start = k;
        while k < chars.len() && chars[k].is_ascii_digit() {
            k += 1;
        }
        let int_part: String = chars[start..k].iter().collect();
        let mut value = Rational::from_integer(int_part.parse::<BigInt>().expect("digits"));
        let mut integral = true;
        if k < chars.len() && (chars[k] == '/' || chars[k] == '.') {
            let sep = chars[k];
            k += 1;
            let frac_start = k;
            while k < chars.len() && chars[k].is_ascii_digit() {
                k += 1;
            }
            if frac_start == k {
                return Err(syntax(l0, c0 + (k - start), format!("digits expected after '{sep}'")));
            }
            let digits: String = chars[frac_start..k].iter().collect();
            let n: BigInt = digits.parse().expect("digits");
            integral = false;
            if sep == '/' {
                if n.is_zero() {
                    return Err(syntax(l0, c0, "zero denominator"));
                }
                value /= Rational::from_integer(n);
            } else {
                let scale = num_traits::pow(BigInt::from(10), digits.len());
                value += Rational::new(n, scale);
            }
        }
        col += k - start;
        out.push(Token {
            tok: Tok::Num { value, integral },
            line: l0,
            column: c0,
        });
    }
    out.push(Token {
        tok: Tok::End,
        line,
        column: col,
    });
    Ok(out)
}

struct Parser {
    toks: Vec<Token>,
    pos: usize,
}

impl Parser {
    fn peek(&self) -> &Token {
        &self.toks[self.pos]
    }

    fn bump(&mut self) -> Token {
        let t = self.toks[self.pos].clone();
        if self.pos + 1 < self.toks.len() {
            self.pos += 1;
        }
        t
    }

    fn expr(&mut self) -> Result<OperatorExpr> {
        let mut lhs = if self.peek().tok == Tok::Minus {
            self.bump();
            OperatorExpr::Neg(Box::new(self.term()?))
        } else {
            self.term()?
        };
        loop {
            match self.peek().tok {
                Tok::Plus => {
                    self.bump();
                    lhs = OperatorExpr::Add(Box::new(lhs), Box::new(self.term()?));
                }
                Tok::Minus => {
                    self.bump();
                    lhs = OperatorExpr::Sub(Box::new(lhs), Box::new(self.term()?));
                }
                _ => return Ok(lhs),
            }
        }
    }

    fn term(&mut self) -> Result<OperatorExpr> {
        let mut lhs = self.factor()?;
        while self.peek().tok == Tok::Star {
            self.bump();
            lhs = OperatorExpr::Mul(Box::new(lhs), Box::new(self.factor()?));
        }
        Ok(lhs)
    }

    fn factor(&mut self) -> Result<OperatorExpr> {
        let base = self.atom()?;
        if self.peek().tok != Tok::Caret {
            return Ok(base);
        }
        self.bump();
        let negative = if self.peek().tok == Tok::Minus {
            self.bump();
            true
        } else {
            false
        };
        let tok = self.bump();
        let exp = match tok.tok {
            Tok::Num { value, integral: true } => {
                let n: i64 = value
                    .to_integer()
                    .try_into()
                    .map_err(|_| syntax(tok.line, tok.column, "exponent too large"))?;
                if negative {
                    -n
                } else {
                    n
                }
            }
            Tok::Num { .. } => {
                return Err(syntax(tok.line, tok.column, "exponent must be an integer"));
            }
            _ => return Err(syntax(tok.line, tok.column, "integer exponent expected")),
        };
        if exp < 0 && base != OperatorExpr::D {
            return Err(syntax(
                tok.line,
                tok.column,
                "negative exponents are only allowed on D",
            ));
        }
        Ok(OperatorExpr::Pow(Box::new(base), exp))
    }

    fn atom(&mut self) -> Result<OperatorExpr> {
        let tok = self.bump();
        match tok.tok {
            Tok::Num { value, .. } => Ok(OperatorExpr::Num(value)),
            Tok::I => Ok(OperatorExpr::I),
            Tok::T => Ok(OperatorExpr::T),
            Tok::D => Ok(OperatorExpr::D),
            Tok::LParen => {
                let inner = self.expr()?;
                let close = self.bump();
                if close.tok != Tok::RParen {
                    return Err(syntax(close.line, close.column, "')' expected"));
                }
                Ok(inner)
            }
            Tok::End => Err(syntax(tok.line, tok.column, "unexpected end of input")),
            other => Err(syntax(
                tok.line,
                tok.column,
                format!("unexpected token {other:?}"),
            )),
        }
    }
}

/// Parses operator text into its syntax tree.
pub fn parse_expr(text: &str) -> Result<OperatorExpr> {
    let toks = lex(text)?;
    let mut p = Parser { toks, pos: 0 };
    let e = p.expr()?;
    let rest = p.peek();
    if rest.tok != Tok::End {
        return Err(syntax(rest.line, rest.column, "unexpected trailing input"));
    }
    Ok(e)
}

/// Series order and floor used when lowering text to an operator.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LoweringConfig {
    pub order: usize,
    pub floor: i32,
}

impl Default for LoweringConfig {
    fn default() -> Self {
        Self { order: 8, floor: -6 }
    }
}

impl OperatorExpr {
    /// Lowers the tree to a normal-form operator.
    pub fn lower<S: Scalar>(&self, cfg: LoweringConfig) -> Result<MicroDiffOp<S>> {
        let cap = Some(cfg.floor);
        let op = match self {
            OperatorExpr::Num(r) => {
                MicroDiffOp::from_series(TruncatedSeries::constant(S::from_rational(r), cfg.order))
            }
            OperatorExpr::I => {
                let i = S::imag_unit().ok_or_else(|| {
                    Error::Input("the imaginary unit needs a complex coefficient field".into())
                })?;
                MicroDiffOp::from_series(TruncatedSeries::constant(i, cfg.order))
            }
            OperatorExpr::T => MicroDiffOp::from_series(TruncatedSeries::t(cfg.order)),
            OperatorExpr::D => MicroDiffOp::d_pow(1, cfg.order),
            OperatorExpr::Neg(e) => e.lower::<S>(cfg)?.neg(),
            OperatorExpr::Add(a, b) => a.lower::<S>(cfg)?.add(&b.lower(cfg)?),
            OperatorExpr::Sub(a, b) => a.lower::<S>(cfg)?.sub(&b.lower(cfg)?),
            OperatorExpr::Mul(a, b) => a.lower::<S>(cfg)?.mul_capped(&b.lower(cfg)?, cap)?,
            OperatorExpr::Pow(base, k) => match (base.as_ref(), *k) {
                (OperatorExpr::D, k) => MicroDiffOp::d_pow(k as i32, cfg.order),
                (_, k) if k >= 0 => {
                    let b = base.lower::<S>(cfg)?;
                    if k == 0 {
                        MicroDiffOp::identity(cfg.order)
                    } else {
                        b.pow_capped(k as u32, cap)?
                    }
                }
                _ => return Err(Error::Input("negative exponent on a non-D base".into())),
            },
        };
        Ok(if op.floor() < cfg.floor {
            op.truncate_below(cfg.floor)
        } else {
            op
        })
    }
}

/// Parses and lowers operator text.
pub fn parse_operator<S: Scalar>(text: &str, cfg: LoweringConfig) -> Result<MicroDiffOp<S>> {
    parse_expr(text)?.lower(cfg)
}

fn push_term(out: &mut String, coeff: String, compound: bool, factors: &[String]) {
    let (negative, body) = if !compound && coeff.starts_with('-') {
        (true, coeff[1..].to_string())
    } else {
        (false, coeff)
    };
    let mut parts: Vec<String> = Vec::new();
    if factors.is_empty() || body != "1" {
        parts.push(if compound { format!("({body})") } else { body });
    }
    parts.extend(factors.iter().cloned());
    let text = parts.join("*");
    if out.is_empty() {
        if negative {
            out.push('-');
        }
    } else {
        out.push_str(if negative { " - " } else { " + " });
    }
    out.push_str(&text);
}

/// Canonical text of an operator's stored terms.
pub fn print_operator<S: Scalar>(op: &MicroDiffOp<S>) -> String {
    let mut out = String::new();
    for (k, series) in op.terms().rev() {
        for (m, c) in series.coeffs().iter().enumerate() {
            if c.is_zero() {
                continue;
            }
            let mut factors = Vec::new();
            match m {
                0 => {}
                1 => factors.push("t".to_string()),
                _ => factors.push(format!("t^{m}")),
            }
            match k {
                0 => {}
                1 => factors.push("D".to_string()),
                _ => factors.push(format!("D^{k}")),
            }
            push_term(&mut out, c.to_literal(), c.literal_is_compound(), &factors);
        }
    }
    if out.is_empty() {
        out.push('0');
    }
    out
}

impl std::fmt::Display for OperatorExpr {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            OperatorExpr::Num(r) => {
                if r.is_negative() {
                    write!(f, "(-{})", r.abs().to_literal())
                } else {
                    write!(f, "{}", r.to_literal())
                }
            }
            OperatorExpr::I => write!(f, "i"),
            OperatorExpr::T => write!(f, "t"),
            OperatorExpr::D => write!(f, "D"),
            OperatorExpr::Neg(e) => write!(f, "(-{e})"),
            OperatorExpr::Add(a, b) => write!(f, "({a} + {b})"),
            OperatorExpr::Sub(a, b) => write!(f, "({a} - {b})"),
            OperatorExpr::Mul(a, b) if matches!(**b, OperatorExpr::Mul(..)) => write!(f, "{a}*({b})"),
            OperatorExpr::Mul(a, b) => write!(f, "{a}*{b}"),
            OperatorExpr::Pow(b, k) => {
                let mut s = String::new();
                write!(s, "{b}").ok();
                if matches!(**b, OperatorExpr::Mul(..) | OperatorExpr::Pow(..)) {
                    s = format!("({s})");
                }
                write!(f, "{s}^{k}")
            }
        }
    }
}

/// Exact rational `n` as an expression node.
pub fn num(n: i64) -> OperatorExpr {
    if n >= 0 {
        OperatorExpr::Num(Rational::from_integer(n.into()))
    } else {
        OperatorExpr::Neg(Box::new(OperatorExpr::Num(Rational::from_integer((-n).into()))))
    }
}

impl OperatorExpr {
    /// `true` when the subtree is the constant one.
    pub fn is_one(&self) -> bool {
        matches!(self, OperatorExpr::Num(r) if r.is_one())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scalar::{rat, GaussianRational};

    type Op = MicroDiffOp<Rational>;

    fn cfg() -> LoweringConfig {
        LoweringConfig::default()
    }

    #[test]
    fn d_t_normal_form() {
        let op: Op = parse_operator("D*t", cfg()).unwrap();
        assert_eq!(print_operator(&op), "t*D + 1");
        let d = Op::d_pow(1, 8);
        let t = Op::from_series(TruncatedSeries::t(8));
        assert!(op.agrees_with(&t.mul(&d).unwrap().add(&Op::identity(8))));
    }

    #[test]
    fn d_inverse() {
        let op: Op = parse_operator("D^-1", cfg()).unwrap();
        assert!(op.agrees_with(&Op::d_pow(-1, 8)));
        assert_eq!(print_operator(&op), "D^-1");
        let op: Op = parse_operator("D^-1*t", cfg()).unwrap();
        assert_eq!(print_operator(&op), "t*D^-1 - D^-2");
    }

    #[test]
    fn grammar_errors_carry_positions() {
        match parse_expr("D^1.5") {
            Err(Error::Parse { line, column, .. }) => assert_eq!((line, column), (1, 3)),
            other => panic!("{other:?}"),
        }
        match parse_expr("t^-2") {
            Err(Error::Parse { column, .. }) => assert_eq!(column, 4),
            other => panic!("{other:?}"),
        }
        match parse_expr("D +\n (t") {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("{other:?}"),
        }
        assert!(parse_expr("D t").is_err());
    }

    #[test]
    fn imaginary_unit_needs_complex_field() {
        assert!(parse_operator::<Rational>("i*D", cfg()).is_err());
        let op: MicroDiffOp<GaussianRational> = parse_operator("(1/2 - i)*t*D", cfg()).unwrap();
        assert_eq!(print_operator(&op), "(1/2 - i)*t*D");
    }

    #[test]
    fn printer_signs() {
        let op: Op = parse_operator("-3/4*t^2*D^-1 + 5 - D", cfg()).unwrap();
        assert_eq!(print_operator(&op), "-D + 5 - 3/4*t^2*D^-1");
        assert_eq!(print_operator(&Op::zero(0, 3, true)), "0");
        let op: Op = parse_operator("0.25*t", cfg()).unwrap();
        assert_eq!(op.series(0).unwrap().coeffs()[1], rat(1, 4));
    }
}
