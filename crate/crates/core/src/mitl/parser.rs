//! Recursive-descent parser for the formula grammar
//!
//! ```text
//! until := or ("U" ival? until)?
//! or    := and ("|" and)*
//! and   := unary ("&" unary)*
//! unary := "!" unary | "X" ival? unary | "F" ival? unary | "G" ival unary | prim
//! prim  := "true" | SYMBOL | "(" until ")"
//! ival  := "[" number "," (number | "inf") "]"
//! ```
//!
//! `U` is right-associative; `&` and `|` are left-associative. A missing
//! interval means `[0,inf]`, which `G` does not accept.

use std::fmt;

use thiserror::Error;

use super::{Formula, Interval};
use crate::trace::Symbol;

#[derive(Debug, Clone, PartialEq, Error)]
pub struct ParseError {
    pub message: String,
    /// Byte offset into the input.
    pub offset: usize,
    pub expected: Vec<String>,
}

impl fmt::Display for ParseError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "at byte {}: {}", self.offset, self.message)?;
        if !self.expected.is_empty() {
            write!(f, " (expected {})", self.expected.join(", "))?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Word(String),
    Number(f64),
    Sym(char),
}

struct Lexer<'a> {
    src: &'a str,
    pos: usize,
}

impl<'a> Lexer<'a> {
    fn skip_ws(&mut self) {
        while let Some(c) = self.src[self.pos..].chars().next() {
            if !c.is_whitespace() {
                break;
            }
            self.pos += c.len_utf8();
        }
    }

    /// Next token and its start offset, without consuming it.
    fn peek(&mut self) -> Result<Option<(Tok, usize, usize)>, ParseError> {
        self.skip_ws();
        let start = self.pos;
        let rest = &self.src[start..];
        let Some(c) = rest.chars().next() else {
            return Ok(None);
        };
        if "()[],!&|".contains(c) {
            return Ok(Some((Tok::Sym(c), start, start + 1)));
        }
        if c.is_ascii_digit() || c == '.' {
            let len = rest
                .find(|ch: char| !(ch.is_ascii_digit() || ".eE+-".contains(ch)))
                .unwrap_or(rest.len());
            let text = &rest[..len];
            return match text.parse::<f64>() {
                Ok(v) => Ok(Some((Tok::Number(v), start, start + len))),
                Err(_) => Err(ParseError {
                    message: format!("invalid number {text:?}"),
                    offset: start,
                    expected: vec![],
                }),
            };
        }
        if c.is_alphanumeric() || c == '_' {
            let len = rest
                .find(|ch: char| !(ch.is_alphanumeric() || ch == '_'))
                .unwrap_or(rest.len());
            return Ok(Some((Tok::Word(rest[..len].to_string()), start, start + len)));
        }
        Err(ParseError {
            message: format!("unexpected character {c:?}"),
            offset: start,
            expected: vec![],
        })
    }

    fn bump(&mut self, end: usize) {
        self.pos = end;
    }
}

struct Parser<'a> {
    lex: Lexer<'a>,
}

fn err(message: impl Into<String>, offset: usize, expected: &[&str]) -> ParseError {
    ParseError {
        message: message.into(),
        offset,
        expected: expected.iter().map(|s| s.to_string()).collect(),
    }
}

impl<'a> Parser<'a> {
    fn peek_sym(&mut self, c: char) -> Result<Option<usize>, ParseError> {
        Ok(match self.lex.peek()? {
            Some((Tok::Sym(s), _, end)) if s == c => Some(end),
            _ => None,
        })
    }

    fn peek_word(&mut self, w: &str) -> Result<Option<usize>, ParseError> {
        Ok(match self.lex.peek()? {
            Some((Tok::Word(s), _, end)) if s == w => Some(end),
            _ => None,
        })
    }

    fn expect_sym(&mut self, c: char) -> Result<(), ParseError> {
        match self.lex.peek()? {
            Some((Tok::Sym(s), _, end)) if s == c => {
                self.lex.bump(end);
                Ok(())
            }
            Some((_, start, _)) => Err(err("unexpected token", start, &[&format!("'{c}'")])),
            None => Err(err("unexpected end of input", self.lex.pos, &[&format!("'{c}'")])),
        }
    }

    fn until(&mut self) -> Result<Formula, ParseError> {
        let lhs = self.or()?;
        if let Some(end) = self.peek_word("U")? {
            self.lex.bump(end);
            let ival = self.opt_interval()?.unwrap_or(Interval::unbounded());
            let rhs = self.until()?;
            return Ok(Formula::until(ival, lhs, rhs));
        }
        Ok(lhs)
    }

    fn or(&mut self) -> Result<Formula, ParseError> {
        let mut lhs = self.and()?;
        while let Some(end) = self.peek_sym('|')? {
            self.lex.bump(end);
            lhs = Formula::or(lhs, self.and()?);
        }
        Ok(lhs)
    }

    fn and(&mut self) -> Result<Formula, ParseError> {
        let mut lhs = self.unary()?;
        while let Some(end) = self.peek_sym('&')? {
            self.lex.bump(end);
            lhs = Formula::and(lhs, self.unary()?);
        }
        Ok(lhs)
    }

    fn unary(&mut self) -> Result<Formula, ParseError> {
        const START: &[&str] = &["'!'", "'('", "'X'", "'F'", "'G'", "'true'", "symbol"];
        let Some((tok, start, end)) = self.lex.peek()? else {
            return Err(err("unexpected end of input", self.lex.pos, START));
        };
        match tok {
            Tok::Sym('!') => {
                self.lex.bump(end);
                Ok(Formula::not(self.unary()?))
            }
            Tok::Sym('(') => {
                self.lex.bump(end);
                let f = self.until()?;
                self.expect_sym(')')?;
                Ok(f)
            }
            Tok::Word(w) => {
                self.lex.bump(end);
                match w.as_str() {
                    "true" => Ok(Formula::True),
                    "X" => {
                        let i = self.opt_interval()?.unwrap_or(Interval::unbounded());
                        Ok(Formula::next(i, self.unary()?))
                    }
                    "F" => {
                        let i = self.opt_interval()?.unwrap_or(Interval::unbounded());
                        Ok(Formula::eventually(i, self.unary()?))
                    }
                    "G" => match self.opt_interval()? {
                        Some(i) if i.hi().is_finite() => Ok(Formula::always(i, self.unary()?)),
                        _ => Err(err("G requires a finite interval", end, &["'[' lo ',' hi ']'"])),
                    },
                    "U" | "inf" => Err(err(format!("unexpected keyword {w:?}"), start, START)),
                    _ => {
                        let mut chars = w.chars();
                        match (chars.next(), chars.next()) {
                            (Some(c), None) => Ok(Formula::Atom(Symbol(c))),
                            _ => Err(err(
                                format!("{w:?} is not a single-character symbol"),
                                start,
                                START,
                            )),
                        }
                    }
                }
            }
            _ => Err(err("unexpected token", start, START)),
        }
    }

    fn opt_interval(&mut self) -> Result<Option<Interval>, ParseError> {
        let Some(end) = self.peek_sym('[')? else {
            return Ok(None);
        };
        let open = self.lex.pos;
        self.lex.bump(end);
        let lo = self.bound(false)?;
        self.expect_sym(',')?;
        let hi = self.bound(true)?;
        self.expect_sym(']')?;
        Interval::new(lo, hi)
            .map(Some)
            .map_err(|e| err(e.to_string(), open, &[]))
    }

    fn bound(&mut self, allow_inf: bool) -> Result<f64, ParseError> {
        let expected: &[&str] = if allow_inf { &["number", "'inf'"] } else { &["number"] };
        match self.lex.peek()? {
            Some((Tok::Number(v), _, end)) => {
                self.lex.bump(end);
                Ok(v)
            }
            Some((Tok::Word(w), _, end)) if allow_inf && w == "inf" => {
                self.lex.bump(end);
                Ok(f64::INFINITY)
            }
            Some((_, start, _)) => Err(err("unexpected token", start, expected)),
            None => Err(err("unexpected end of input", self.lex.pos, expected)),
        }
    }
}

pub fn parse_formula(text: &str) -> Result<Formula, ParseError> {
    let mut p = Parser {
        lex: Lexer { src: text, pos: 0 },
    };
    let f = p.until()?;
    match p.lex.peek()? {
        None => Ok(f),
        Some((_, start, _)) => Err(err(
            "trailing input",
            start,
            &["end of input", "'&'", "'|'", "'U'"],
        )),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn n() -> Formula {
        Formula::atom('N')
    }
    fn v() -> Formula {
        Formula::atom('V')
    }

    #[test]
    fn template_text() {
        let f = parse_formula("F G[0,3.8] (N & X[0,2.5] (V & X[0,2.5] true))").unwrap();
        let b = Interval::upto(2.5).unwrap();
        let want = Formula::eventually(
            Interval::unbounded(),
            Formula::always(
                Interval::upto(3.8).unwrap(),
                Formula::and(n(), Formula::next(b, Formula::and(v(), Formula::next(b, Formula::True)))),
            ),
        );
        assert_eq!(f, want);
    }

    #[test]
    fn precedence() {
        assert_eq!(parse_formula("true").unwrap(), Formula::True);
        assert_eq!(
            parse_formula("!N & V | N").unwrap(),
            Formula::or(Formula::and(Formula::not(n()), v()), n())
        );
        assert_eq!(
            parse_formula("N | V U N & V").unwrap(),
            Formula::until(Interval::unbounded(), Formula::or(n(), v()), Formula::and(n(), v()))
        );
        assert_eq!(
            parse_formula("N U V U N").unwrap(),
            Formula::until(
                Interval::unbounded(),
                n(),
                Formula::until(Interval::unbounded(), v(), n())
            )
        );
        assert_eq!(
            parse_formula("X N & V").unwrap(),
            Formula::and(Formula::next(Interval::unbounded(), n()), v())
        );
        assert_eq!(
            parse_formula("F[1,inf] N").unwrap(),
            Formula::eventually(Interval::new(1.0, f64::INFINITY).unwrap(), n())
        );
    }

    #[test]
    fn errors_carry_position() {
        let e = parse_formula("N U[2,1] V").unwrap_err();
        assert_eq!(e.offset, 3);
        let e = parse_formula("G N").unwrap_err();
        assert!(e.message.contains("finite"));
        assert!(parse_formula("G[0,inf] N").is_err());
        let e = parse_formula("(N & V").unwrap_err();
        assert_eq!(e.offset, 6);
        assert!(e.expected.contains(&"')'".to_string()));
        let e = parse_formula("N V").unwrap_err();
        assert_eq!(e.offset, 2);
        assert!(parse_formula("NV").is_err());
        assert!(parse_formula("").is_err());
        assert!(parse_formula("N # V").is_err());
    }

    fn arb_interval(finite: bool) -> impl Strategy<Value = Interval> {
        let hi = if finite {
            (0u32..40).prop_map(|x| x as f64 / 8.0).boxed()
        } else {
            prop_oneof![
                (0u32..40).prop_map(|x| x as f64 / 8.0),
                Just(f64::INFINITY)
            ]
            .boxed()
        };
        ((0u32..40).prop_map(|x| x as f64 / 8.0), hi)
            .prop_map(|(a, b)| Interval::new(a.min(b), a.max(b)).unwrap())
    }

    pub(crate) fn arb_formula() -> impl Strategy<Value = Formula> {
        let leaf = prop_oneof![
            Just(Formula::True),
            prop::sample::select(vec!['N', 'V', 'O']).prop_map(Formula::atom),
        ];
        leaf.prop_recursive(6, 64, 2, |inner| {
            prop_oneof![
                inner.clone().prop_map(Formula::not),
                (inner.clone(), inner.clone()).prop_map(|(a, b)| Formula::and(a, b)),
                (inner.clone(), inner.clone()).prop_map(|(a, b)| Formula::or(a, b)),
                (arb_interval(false), inner.clone()).prop_map(|(i, f)| Formula::next(i, f)),
                (arb_interval(false), inner.clone()).prop_map(|(i, f)| Formula::eventually(i, f)),
                (arb_interval(true), inner.clone()).prop_map(|(i, f)| Formula::always(i, f)),
                (arb_interval(false), inner.clone(), inner)
                    .prop_map(|(i, a, b)| Formula::until(i, a, b)),
            ]
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]
        #[test]
        fn format_parse_round_trip(f in arb_formula()) {
            let text = f.to_string();
            prop_assert_eq!(parse_formula(&text).unwrap(), f, "{}", text);
        }
    }

    proptest! {
        #[test]
        fn round_trip_arbitrary_bounds(lo in 0.0f64..100.0, w in 0.0f64..100.0) {
            let f = Formula::next(Interval::new(lo, lo + w).unwrap(), Formula::True);
            prop_assert_eq!(parse_formula(&f.to_string()).unwrap(), f);
        }
    }
}
