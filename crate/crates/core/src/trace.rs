//! Annotated beat sequences: symbols, timed traces, labelled segments and the
//! plain-text trace file format.
//!
//! A trace file is a sequence of blocks separated by blank lines. Each block
//! starts with a header line `@rhythm <label> [@record <id>]` followed by one
//! `<symbol> <duration>` line per beat, durations in decimal seconds. Lines
//! starting with `#` are comments.
//!
//! ```text
//! # patient 233, bigeminy
//! @rhythm bigeminy @record 233
//! N 0.8
//! V 0.5
//! ```

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Code used for every annotation that is not part of the alphabet.
pub const OTHER_CODE: char = 'O';

const RESERVED: [char; 4] = ['X', 'F', 'G', 'U'];

/// Errors raised while reading or slicing traces.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum TraceError {
    #[error("line {line}: {message}")]
    Malformed { line: usize, message: String },
    #[error("line {line}: beat {symbol} has nonpositive duration {duration}")]
    NonPositiveDuration {
        line: usize,
        symbol: String,
        duration: f64,
    },
    #[error("index {index} out of range for trace of {len} beats")]
    Index { index: usize, len: usize },
    #[error("invalid alphabet: {0}")]
    Alphabet(String),
}

/// A beat annotation code.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Symbol(pub char);

impl Symbol {
    pub fn code(self) -> char {
        self.0
    }
}

impl fmt::Display for Symbol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Ordered, duplicate-free set of beat codes. Always contains [`OTHER_CODE`],
/// which absorbs annotations outside the alphabet.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Symbol>", into = "Vec<Symbol>")]
pub struct Alphabet {
    symbols: Vec<Symbol>,
}

impl Alphabet {
    pub fn new(codes: impl IntoIterator<Item = char>) -> Result<Self, TraceError> {
        let symbols: Vec<Symbol> = codes.into_iter().map(Symbol).collect();
        Self::try_from(symbols)
    }

    /// Parse a compact code list such as `"NVLRjO"` or `"N,V,O"`.
    pub fn parse(spec: &str) -> Result<Self, TraceError> {
        Self::new(spec.chars().filter(|c| !c.is_whitespace() && *c != ','))
    }

    pub fn symbols(&self) -> &[Symbol] {
        &self.symbols
    }

    pub fn len(&self) -> usize {
        self.symbols.len()
    }

    pub fn is_empty(&self) -> bool {
        self.symbols.is_empty()
    }

    pub fn index_of(&self, symbol: Symbol) -> Option<usize> {
        self.symbols.iter().position(|s| *s == symbol)
    }

    pub fn contains(&self, symbol: Symbol) -> bool {
        self.index_of(symbol).is_some()
    }

    pub fn other(&self) -> Symbol {
        Symbol(OTHER_CODE)
    }

    /// Map a raw annotation token onto the alphabet; unknown tokens become `O`.
    pub fn map_token(&self, token: &str) -> Symbol {
        let mut chars = token.chars();
        match (chars.next(), chars.next()) {
            (Some(c), None) if self.contains(Symbol(c)) => Symbol(c),
            _ => self.other(),
        }
    }
}

impl Default for Alphabet {
    fn default() -> Self {
        Alphabet {
            symbols: "NVLRjO".chars().map(Symbol).collect(),
        }
    }
}

impl TryFrom<Vec<Symbol>> for Alphabet {
    type Error = TraceError;

    fn try_from(symbols: Vec<Symbol>) -> Result<Self, TraceError> {
        for (i, s) in symbols.iter().enumerate() {
            if symbols[..i].contains(s) {
                return Err(TraceError::Alphabet(format!("duplicate code {s}")));
            }
            // Codes double as formula atoms, so they must lex as one-letter
            // words that are not temporal operators.
            if !s.0.is_alphabetic() || RESERVED.contains(&s.0) {
                return Err(TraceError::Alphabet(format!("unusable code {:?}", s.0)));
            }
        }
        if !symbols.contains(&Symbol(OTHER_CODE)) {
            return Err(TraceError::Alphabet(format!(
                "alphabet must contain the catch-all code {OTHER_CODE}"
            )));
        }
        Ok(Alphabet { symbols })
    }
}

impl From<Alphabet> for Vec<Symbol> {
    fn from(a: Alphabet) -> Self {
        a.symbols
    }
}

impl fmt::Display for Alphabet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for s in &self.symbols {
            write!(f, "{s}")?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Beat {
    pub symbol: Symbol,
    /// Seconds, strictly positive.
    pub duration: f64,
}

impl Beat {
    pub fn new(symbol: char, duration: f64) -> Self {
        Beat {
            symbol: Symbol(symbol),
            duration,
        }
    }
}

/// Finite sequence of beats with cumulative entry times.
///
/// `entry_times[i]` is the time at which beat `i` starts; the vector has one
/// extra trailing element holding the total duration, so
/// `entry_times[i + 1] - entry_times[i] == beats[i].duration` exactly.
#[derive(Debug, Clone, PartialEq)]
pub struct TimedTrace {
    beats: Vec<Beat>,
    entry_times: Vec<f64>,
}

impl TimedTrace {
    /// Builds a trace, panicking on a nonpositive or non-finite duration.
    /// Use [`TimedTrace::try_new`] for untrusted input.
    pub fn new(beats: Vec<Beat>) -> Self {
        Self::try_new(beats).expect("beat durations must be positive")
    }

    pub fn try_new(beats: Vec<Beat>) -> Result<Self, TraceError> {
        let mut entry_times = Vec::with_capacity(beats.len() + 1);
        let mut t = 0.0;
        entry_times.push(t);
        for (i, b) in beats.iter().enumerate() {
            if !(b.duration > 0.0 && b.duration.is_finite()) {
                return Err(TraceError::NonPositiveDuration {
                    line: i,
                    symbol: b.symbol.to_string(),
                    duration: b.duration,
                });
            }
            t += b.duration;
            entry_times.push(t);
        }
        Ok(TimedTrace { beats, entry_times })
    }

    pub fn empty() -> Self {
        TimedTrace {
            beats: Vec::new(),
            entry_times: vec![0.0],
        }
    }

    /// Convenience constructor from `(code, seconds)` pairs.
    pub fn from_pairs(pairs: &[(char, f64)]) -> Self {
        Self::new(pairs.iter().map(|&(c, d)| Beat::new(c, d)).collect())
    }

    pub fn beats(&self) -> &[Beat] {
        &self.beats
    }

    pub fn len(&self) -> usize {
        self.beats.len()
    }

    pub fn is_empty(&self) -> bool {
        self.beats.is_empty()
    }

    /// Entry time of position `i`, for `0 <= i <= len()`.
    pub fn entry_time(&self, i: usize) -> f64 {
        self.entry_times[i]
    }

    /// Entry times of every beat (without the trailing total).
    pub fn entry_times(&self) -> &[f64] {
        &self.entry_times[..self.beats.len()]
    }

    pub fn total_duration(&self) -> f64 {
        self.entry_times[self.beats.len()]
    }

    pub fn symbol(&self, i: usize) -> Symbol {
        self.beats[i].symbol
    }

    /// Suffix starting at beat `i`, with entry times rebased to zero.
    pub fn suffix(&self, i: usize) -> Result<TimedTrace, TraceError> {
        if i > self.beats.len() {
            return Err(TraceError::Index {
                index: i,
                len: self.beats.len(),
            });
        }
        Ok(TimedTrace::new(self.beats[i..].to_vec()))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSegment {
    pub record_id: String,
    pub rhythm_label: String,
    pub trace: TimedTrace,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub alphabet: Alphabet,
    pub segments: Vec<LabeledSegment>,
}

impl Dataset {
    pub fn new(alphabet: Alphabet) -> Self {
        Dataset {
            alphabet,
            segments: Vec::new(),
        }
    }

    /// Traces of every segment carrying `label`, in file order.
    pub fn filter_by_rhythm(&self, label: &str) -> Vec<TimedTrace> {
        self.segments
            .iter()
            .filter(|s| s.rhythm_label == label)
            .map(|s| s.trace.clone())
            .collect()
    }

    pub fn labels(&self) -> Vec<&str> {
        let mut out: Vec<&str> = Vec::new();
        for s in &self.segments {
            if !out.contains(&s.rhythm_label.as_str()) {
                out.push(&s.rhythm_label);
            }
        }
        out
    }
}

/// Parses the trace file format with the default alphabet.
pub fn parse_trace_file(text: &str, source: &str) -> Result<Dataset, TraceError> {
    parse_trace_file_with(text, source, &Alphabet::default())
}

pub fn parse_trace_file_with(
    text: &str,
    source: &str,
    alphabet: &Alphabet,
) -> Result<Dataset, TraceError> {
    struct Open {
        record_id: String,
        label: String,
        beats: Vec<Beat>,
    }

    fn close(ds: &mut Dataset, open: Option<Open>) {
        if let Some(o) = open {
            ds.segments.push(LabeledSegment {
                record_id: o.record_id,
                rhythm_label: o.label,
                trace: TimedTrace::new(o.beats),
            });
        }
    }

    let mut ds = Dataset::new(alphabet.clone());
    let mut open: Option<Open> = None;
    let mut block_index = 0usize;

    for (n, raw) in text.lines().enumerate() {
        let line_no = n + 1;
        let line = raw.trim();
        if line.starts_with('#') {
            continue;
        }
        if line.is_empty() {
            close(&mut ds, open.take());
            continue;
        }
        if let Some(rest) = line.strip_prefix("@rhythm") {
            if open.is_some() {
                return Err(TraceError::Malformed {
                    line: line_no,
                    message: "header inside an open block (missing blank line)".into(),
                });
            }
            let (label, record) = parse_header(rest, line_no)?;
            let record_id = record.unwrap_or_else(|| format!("{source}#{block_index}"));
            block_index += 1;
            open = Some(Open {
                record_id,
                label,
                beats: Vec::new(),
            });
            continue;
        }
        let Some(block) = open.as_mut() else {
            return Err(TraceError::Malformed {
                line: line_no,
                message: "beat line outside a block (expected `@rhythm <label>`)".into(),
            });
        };
        let mut fields = line.split_whitespace();
        let (Some(sym), Some(dur), None) = (fields.next(), fields.next(), fields.next()) else {
            return Err(TraceError::Malformed {
                line: line_no,
                message: format!("expected `<symbol> <duration>`, got {line:?}"),
            });
        };
        let duration: f64 = dur.parse().map_err(|_| TraceError::Malformed {
            line: line_no,
            message: format!("invalid duration {dur:?}"),
        })?;
        if !(duration > 0.0 && duration.is_finite()) {
            return Err(TraceError::NonPositiveDuration {
                line: line_no,
                symbol: sym.to_string(),
                duration,
            });
        }
        block.beats.push(Beat {
            symbol: alphabet.map_token(sym),
            duration,
        });
    }
    close(&mut ds, open.take());
    Ok(ds)
}

fn parse_header(rest: &str, line: usize) -> Result<(String, Option<String>), TraceError> {
    let mut tokens = rest.split_whitespace();
    let label = match tokens.next() {
        Some(l) if !l.starts_with('@') => l.to_string(),
        _ => {
            return Err(TraceError::Malformed {
                line,
                message: "missing rhythm label".into(),
            })
        }
    };
    let record = match (tokens.next(), tokens.next(), tokens.next()) {
        (None, _, _) => None,
        (Some("@record"), Some(id), None) => Some(id.to_string()),
        _ => {
            return Err(TraceError::Malformed {
                line,
                message: "header must be `@rhythm <label> [@record <id>]`".into(),
            })
        }
    };
    Ok((label, record))
}

/// Writes a dataset back in the trace file format. Every block carries an
/// explicit `@record`, so re-parsing yields an identical dataset.
pub fn format_trace_file(ds: &Dataset) -> String {
    let mut out = String::new();
    for (i, seg) in ds.segments.iter().enumerate() {
        if i > 0 {
            out.push('\n');
        }
        out.push_str(&format!(
            "@rhythm {} @record {}\n",
            seg.rhythm_label, seg.record_id
        ));
        for b in seg.trace.beats() {
            out.push_str(&format!("{} {}\n", b.symbol, b.duration));
        }
    }
    out
}
