//! Field expressions: sums of coefficient·trig products with integer
//! frequencies.
//!
//! ```text
//! expr   := ['-'] term (('+' | '-') term)*
//! term   := factor ('*' factor)*
//! factor := number | ('sin' | 'cos') '(' lin ')' | '(' expr ')'
//! lin    := ['-'] mono (('+' | '-') mono)*
//! mono   := [int ['*']] coord          coord ∈ {t, x, y, z}
//! ```
//!
//! `sin(k·x)` means `sin(2π Σ_μ k_μ x_μ / L_μ)` with `L_μ` the coordinate period,
//! so every expression is exactly periodic on the grid.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{Grid, ScalarField, COORD_NAMES};
use crate::scalar::Real;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Trig {
    Sin,
    Cos,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Factor {
    pub trig: Trig,
    pub k: [i64; 4],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Term {
    pub coef: f64,
    pub factors: Vec<Factor>,
}

/// Expanded sum of products.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Expr {
    pub terms: Vec<Term>,
}

impl Expr {
    pub fn parse(src: &str) -> Result<Self> {
        let mut p = Parser { s: src.as_bytes(), pos: 0 };
        let e = p.expr()?;
        p.ws();
        if p.pos != p.s.len() {
            return Err(p.err("unexpected trailing input"));
        }
        Ok(e)
    }

    pub fn eval(&self, x: [f64; 4], period: [f64; 4]) -> f64 {
        self.terms
            .iter()
            .map(|t| {
                t.factors.iter().fold(t.coef, |acc, f| {
                    let ph: f64 = (0..4).map(|m| 2.0 * PI * f.k[m] as f64 * x[m] / period[m]).sum();
                    acc * match f.trig {
                        Trig::Sin => ph.sin(),
                        Trig::Cos => ph.cos(),
                    }
                })
            })
            .sum()
    }

    /// Largest `|k_μ|` summed over the factors of a term: the band the expression lives in.
    pub fn max_frequency(&self) -> i64 {
        self.terms
            .iter()
            .map(|t| (0..4).map(|m| t.factors.iter().map(|f| f.k[m].abs()).sum::<i64>()).max().unwrap_or(0))
            .max()
            .unwrap_or(0)
    }

    /// Frequencies on inactive grid axes are rejected: the field would not be
    /// invariant along them.
    pub fn sample<T: Real>(&self, grid: &Grid<T>) -> Result<ScalarField<T>> {
        for t in &self.terms {
            for f in &t.factors {
                if let Some(m) = (0..4).find(|m| !grid.is_active(*m) && f.k[*m] != 0) {
                    return Err(Error::InvalidParameter(format!("expression depends on inactive coordinate `{}`", COORD_NAMES[m])));
                }
            }
        }
        let period = grid.spec().period;
        Ok(grid.sample(|x| T::lit(self.eval(x.map(|v| v.to_f64()), period))))
    }

    fn product(a: &Self, b: &Self) -> Self {
        let mut terms = Vec::new();
        for s in &a.terms {
            for t in &b.terms {
                let mut factors = s.factors.clone();
                factors.extend(t.factors.iter().cloned());
                terms.push(Term { coef: s.coef * t.coef, factors });
            }
        }
        Self { terms }
    }

    fn negate(mut self) -> Self {
        for t in &mut self.terms {
            t.coef = -t.coef;
        }
        self
    }
}

struct Parser<'a> {
    s: &'a [u8],
    pos: usize,
}

impl Parser<'_> {
    fn err(&self, msg: &str) -> Error {
        Error::Expr { position: self.pos, message: msg.into() }
    }

    fn ws(&mut self) {
        while self.pos < self.s.len() && self.s[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
    }

    fn peek(&mut self) -> Option<u8> {
        self.ws();
        self.s.get(self.pos).copied()
    }

    fn eat(&mut self, c: u8) -> bool {
        if self.peek() == Some(c) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn expect(&mut self, c: u8) -> Result<()> {
        if self.eat(c) {
            Ok(())
        } else {
            Err(self.err(&format!("expected `{}`", c as char)))
        }
    }

    fn expr(&mut self) -> Result<Expr> {
        let neg = self.eat(b'-');
        let mut out = self.term()?;
        if neg {
            out = out.negate();
        }
        loop {
            if self.eat(b'+') {
                out.terms.extend(self.term()?.terms);
            } else if self.eat(b'-') {
                out.terms.extend(self.term()?.negate().terms);
            } else {
                return Ok(out);
            }
        }
    }

    fn term(&mut self) -> Result<Expr> {
        let mut out = self.factor()?;
        while self.eat(b'*') {
            out = Expr::product(&out, &self.factor()?);
        }
        Ok(out)
    }

    fn factor(&mut self) -> Result<Expr> {
        match self.peek() {
            Some(b'(') => {
                self.pos += 1;
                let e = self.expr()?;
                self.expect(b')')?;
                Ok(e)
            }
            Some(c) if c.is_ascii_digit() || c == b'.' => {
                let v = self.number()?;
                Ok(Expr { terms: vec![Term { coef: v, factors: Vec::new() }] })
            }
            Some(c) if c.is_ascii_alphabetic() => {
                let name = self.ident();
                let trig = match name.as_str() {
                    "sin" => Trig::Sin,
                    "cos" => Trig::Cos,
                    _ => return Err(self.err(&format!("unknown function `{name}`"))),
                };
                self.expect(b'(')?;
                let k = self.lin()?;
                self.expect(b')')?;
                Ok(Expr { terms: vec![Term { coef: 1.0, factors: vec![Factor { trig, k }] }] })
            }
            _ => Err(self.err("expected a number, sin, cos or `(`")),
        }
    }

    fn ident(&mut self) -> String {
        let start = self.pos;
        while self.pos < self.s.len() && self.s[self.pos].is_ascii_alphabetic() {
            self.pos += 1;
        }
        String::from_utf8_lossy(&self.s[start..self.pos]).into_owned()
    }

    fn number(&mut self) -> Result<f64> {
        self.ws();
        let start = self.pos;
        while self.pos < self.s.len() {
            let c = self.s[self.pos];
            let exp_sign = (c == b'-' || c == b'+') && self.pos > start && matches!(self.s[self.pos - 1], b'e' | b'E');
            if c.is_ascii_digit() || c == b'.' || c == b'e' || c == b'E' || exp_sign {
                self.pos += 1;
            } else {
                break;
            }
        }
        let txt = std::str::from_utf8(&self.s[start..self.pos]).unwrap_or("");
        txt.parse().map_err(|_| Error::Expr { position: start, message: format!("bad number `{txt}`") })
    }

    fn lin(&mut self) -> Result<[i64; 4]> {
        let mut k = [0i64; 4];
        let mut sign = if self.eat(b'-') { -1 } else { 1 };
        loop {
            let mut c = 1i64;
            if matches!(self.peek(), Some(d) if d.is_ascii_digit()) {
                let start = self.pos;
                let v = self.number()?;
                if v.fract() != 0.0 {
                    return Err(Error::Expr { position: start, message: "frequencies must be integers".into() });
                }
                c = v as i64;
                self.eat(b'*');
            }
            self.ws();
            let at = self.pos;
            let name = self.ident();
            let m = COORD_NAMES
                .iter()
                .position(|n| *n == name)
                .ok_or(Error::Expr { position: at, message: format!("expected a coordinate, got `{name}`") })?;
            k[m] += sign * c;
            if self.eat(b'+') {
                sign = 1;
            } else if self.eat(b'-') {
                sign = -1;
            } else {
                return Ok(k);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_and_evaluates() {
        let e = Expr::parse("0.5*sin(x) + cos(2*t - y)*sin(z) - 3").unwrap();
        assert_eq!(e.terms.len(), 3);
        assert_eq!(e.terms[1].factors[0].k, [2, 0, -1, 0]);
        let x = [0.1, 0.2, 0.3, 0.4];
        let tp = 2.0 * PI;
        let want = 0.5 * (tp * 0.2).sin() + (tp * (0.2 - 0.3)).cos() * (tp * 0.4).sin() - 3.0;
        assert!((e.eval(x, [1.0; 4]) - want).abs() < 1e-14);
        assert_eq!(e.max_frequency(), 2);
    }

    #[test]
    fn distributes_products() {
        let e = Expr::parse("-(1 + sin(x)) * 2*cos(y)").unwrap();
        assert_eq!(e.terms.len(), 2);
        assert_eq!(e.terms[0].coef, -2.0);
        assert_eq!(Expr::parse("1e-2*sin(x)").unwrap().terms[0].coef, 0.01);
    }

    #[test]
    fn reports_positions() {
        match Expr::parse("sin(x) + tan(y)") {
            Err(Error::Expr { position, .. }) => assert_eq!(position, 12),
            other => panic!("{other:?}"),
        }
        assert!(Expr::parse("sin(1.5*x)").is_err());
        assert!(Expr::parse("sin(w)").is_err());
        assert!(Expr::parse("sin(x))").is_err());
    }
}
