//! Metric interval temporal logic over timed beat sequences: abstract syntax,
//! a text grammar, and pointwise evaluation on finite traces.
//!
//! Evaluation uses strong finite-trace semantics with closed intervals
//! measured relative to the current position:
//!
//! * `X[a,b] φ` holds at `i` if beat `i + 1` exists, `T(i+1) - T(i)` lies in
//!   `[a,b]` and `φ` holds at `i + 1`.
//! * `φ U[a,b] ψ` needs a witness `j >= i` inside the trace with
//!   `T(j) - T(i)` in `[a,b]`, `ψ` at `j` and `φ` on `i..j`.
//! * `G[a,b] φ` additionally requires the trace to extend to `T(i) + b`, so
//!   persistence is never granted by running out of trace.
//!
//! Two monitors implement these rules: a bottom-up dynamic program used in
//! production and a naive recursive evaluator kept as a reference.

mod monitor;
mod parser;

use std::fmt;

use thiserror::Error;

use crate::trace::Symbol;

pub use monitor::{
    available_monitors, evaluate, evaluate_naive, monitor_by_name, satisfaction_vector,
    DpMonitor, Monitor, NaiveMonitor,
};
pub use parser::{parse_formula, ParseError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MonitorError {
    #[error("position {index} out of range for trace of {len} beats")]
    Position { index: usize, len: usize },
    #[error("G with an unbounded interval cannot be certified on a finite trace")]
    UnboundedAlways,
}

#[derive(Debug, Error, Clone, PartialEq)]
#[error("invalid interval [{lo}, {hi}]")]
pub struct IntervalError {
    pub lo: f64,
    pub hi: f64,
}

/// Closed time interval `[lo, hi]` with `0 <= lo <= hi`; `hi` may be infinite.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Interval {
    lo: f64,
    hi: f64,
}

impl Interval {
    pub fn new(lo: f64, hi: f64) -> Result<Self, IntervalError> {
        if lo.is_finite() && lo >= 0.0 && !hi.is_nan() && lo <= hi {
            Ok(Interval { lo, hi })
        } else {
            Err(IntervalError { lo, hi })
        }
    }

    /// `[0, inf]`, the interval of an operator written without bounds.
    pub const fn unbounded() -> Self {
        Interval {
            lo: 0.0,
            hi: f64::INFINITY,
        }
    }

    /// `[0, hi]`.
    pub fn upto(hi: f64) -> Result<Self, IntervalError> {
        Self::new(0.0, hi)
    }

    pub fn lo(&self) -> f64 {
        self.lo
    }

    pub fn hi(&self) -> f64 {
        self.hi
    }

    pub fn is_unbounded(&self) -> bool {
        self.lo == 0.0 && self.hi == f64::INFINITY
    }

    pub fn contains(&self, t: f64) -> bool {
        self.lo <= t && t <= self.hi
    }
}

impl fmt::Display for Interval {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.hi == f64::INFINITY {
            write!(f, "[{},inf]", self.lo)
        } else {
            write!(f, "[{},{}]", self.lo, self.hi)
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Formula {
    True,
    Atom(Symbol),
    Not(Box<Formula>),
    And(Box<Formula>, Box<Formula>),
    Or(Box<Formula>, Box<Formula>),
    Next(Interval, Box<Formula>),
    Until(Interval, Box<Formula>, Box<Formula>),
    Eventually(Interval, Box<Formula>),
    Always(Interval, Box<Formula>),
}

impl Formula {
    pub fn atom(code: char) -> Self {
        Formula::Atom(Symbol(code))
    }

    pub fn not(f: Formula) -> Self {
        Formula::Not(Box::new(f))
    }

    pub fn and(a: Formula, b: Formula) -> Self {
        Formula::And(Box::new(a), Box::new(b))
    }

    pub fn or(a: Formula, b: Formula) -> Self {
        Formula::Or(Box::new(a), Box::new(b))
    }

    pub fn next(i: Interval, f: Formula) -> Self {
        Formula::Next(i, Box::new(f))
    }

    pub fn until(i: Interval, a: Formula, b: Formula) -> Self {
        Formula::Until(i, Box::new(a), Box::new(b))
    }

    pub fn eventually(i: Interval, f: Formula) -> Self {
        Formula::Eventually(i, Box::new(f))
    }

    pub fn always(i: Interval, f: Formula) -> Self {
        Formula::Always(i, Box::new(f))
    }

    /// Height of the syntax tree; `true` and atoms have depth 0.
    pub fn depth(&self) -> usize {
        match self {
            Formula::True | Formula::Atom(_) => 0,
            Formula::Not(f) | Formula::Next(_, f) | Formula::Eventually(_, f) | Formula::Always(_, f) => {
                1 + f.depth()
            }
            Formula::And(a, b) | Formula::Or(a, b) | Formula::Until(_, a, b) => {
                1 + a.depth().max(b.depth())
            }
        }
    }

    /// Number of nodes in the syntax tree.
    pub fn size(&self) -> usize {
        match self {
            Formula::True | Formula::Atom(_) => 1,
            Formula::Not(f) | Formula::Next(_, f) | Formula::Eventually(_, f) | Formula::Always(_, f) => {
                1 + f.size()
            }
            Formula::And(a, b) | Formula::Or(a, b) | Formula::Until(_, a, b) => 1 + a.size() + b.size(),
        }
    }

    /// Largest number of nested `X` operators on any path.
    pub fn next_depth(&self) -> usize {
        match self {
            Formula::True | Formula::Atom(_) => 0,
            Formula::Next(_, f) => 1 + f.next_depth(),
            Formula::Not(f) | Formula::Eventually(_, f) | Formula::Always(_, f) => f.next_depth(),
            Formula::And(a, b) | Formula::Or(a, b) | Formula::Until(_, a, b) => {
                a.next_depth().max(b.next_depth())
            }
        }
    }

    /// Distinct atoms in order of first appearance.
    pub fn atoms(&self) -> Vec<Symbol> {
        fn walk(f: &Formula, out: &mut Vec<Symbol>) {
            match f {
                Formula::True => {}
                Formula::Atom(s) => {
                    if !out.contains(s) {
                        out.push(*s)
                    }
                }
                Formula::Not(f) | Formula::Next(_, f) | Formula::Eventually(_, f) | Formula::Always(_, f) => {
                    walk(f, out)
                }
                Formula::And(a, b) | Formula::Or(a, b) | Formula::Until(_, a, b) => {
                    walk(a, out);
                    walk(b, out);
                }
            }
        }
        let mut out = Vec::new();
        walk(self, &mut out);
        out
    }

    /// Checks that the formula can be evaluated on finite traces.
    pub fn check_finite(&self) -> Result<(), MonitorError> {
        match self {
            Formula::True | Formula::Atom(_) => Ok(()),
            Formula::Always(i, _) if i.hi().is_infinite() => Err(MonitorError::UnboundedAlways),
            Formula::Not(f) | Formula::Next(_, f) | Formula::Eventually(_, f) | Formula::Always(_, f) => {
                f.check_finite()
            }
            Formula::And(a, b) | Formula::Or(a, b) | Formula::Until(_, a, b) => {
                a.check_finite()?;
                b.check_finite()
            }
        }
    }
}

/// Canonical text: binary operators are always parenthesised, prefix
/// operators are followed by a space, and `[0,inf]` intervals are omitted.
impl fmt::Display for Formula {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fn ival(i: &Interval) -> String {
            if i.is_unbounded() {
                String::new()
            } else {
                i.to_string()
            }
        }
        match self {
            Formula::True => write!(f, "true"),
            Formula::Atom(s) => write!(f, "{s}"),
            Formula::Not(g) => write!(f, "!{g}"),
            Formula::And(a, b) => write!(f, "({a} & {b})"),
            Formula::Or(a, b) => write!(f, "({a} | {b})"),
            Formula::Next(i, g) => write!(f, "X{} {g}", ival(i)),
            Formula::Eventually(i, g) => write!(f, "F{} {g}", ival(i)),
            Formula::Always(i, g) => write!(f, "G{i} {g}"),
            Formula::Until(i, a, b) => write!(f, "({a} U{} {b})", ival(i)),
        }
    }
}

pub fn format_formula(f: &Formula) -> String {
    f.to_string()
}
