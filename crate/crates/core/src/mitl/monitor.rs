use std::cell::RefCell;

use super::{Formula, Interval, MonitorError};
use crate::trace::TimedTrace;

/// A formula evaluator over finite timed traces.
pub trait Monitor: Send + Sync {
    fn name(&self) -> &'static str;

    /// Truth value of `f` at position `i` of `trace`.
    fn evaluate(&self, f: &Formula, trace: &TimedTrace, i: usize) -> Result<bool, MonitorError>;

    /// Truth value of `f` at every position of `trace`.
    fn evaluate_all(&self, f: &Formula, trace: &TimedTrace) -> Result<Vec<bool>, MonitorError> {
        (0..trace.len()).map(|i| self.evaluate(f, trace, i)).collect()
    }
}

/// Bottom-up dynamic program: one truth vector per subformula (a bitmask for
/// traces of up to 64 beats), with windowed operators resolved by a
/// two-pointer sweep over entry times, `O(|f| n)` per trace.
#[derive(Debug, Clone, Copy, Default)]
pub struct DpMonitor;

/// Direct recursive transcription of the semantics, kept as a test oracle.
/// Exponential in the nesting of temporal operators.
#[derive(Debug, Clone, Copy, Default)]
pub struct NaiveMonitor;

impl Monitor for DpMonitor {
    fn name(&self) -> &'static str {
        "dp"
    }

    fn evaluate(&self, f: &Formula, trace: &TimedTrace, i: usize) -> Result<bool, MonitorError> {
        check_position(trace, i)?;
        dp_at(f, trace, i)
    }

    fn evaluate_all(&self, f: &Formula, trace: &TimedTrace) -> Result<Vec<bool>, MonitorError> {
        satisfaction_vector(f, trace)
    }
}

impl Monitor for NaiveMonitor {
    fn name(&self) -> &'static str {
        "naive"
    }

    fn evaluate(&self, f: &Formula, trace: &TimedTrace, i: usize) -> Result<bool, MonitorError> {
        check_position(trace, i)?;
        f.check_finite()?;
        Ok(naive(f, trace, i))
    }

    fn evaluate_all(&self, f: &Formula, trace: &TimedTrace) -> Result<Vec<bool>, MonitorError> {
        f.check_finite()?;
        Ok((0..trace.len()).map(|i| naive(f, trace, i)).collect())
    }
}

type Constructor = fn() -> Box<dyn Monitor>;

const REGISTRY: &[(&str, Constructor)] = &[
    ("dp", || Box::new(DpMonitor)),
    ("naive", || Box::new(NaiveMonitor)),
];

/// Names accepted by [`monitor_by_name`].
pub fn available_monitors() -> Vec<&'static str> {
    REGISTRY.iter().map(|(n, _)| *n).collect()
}

pub fn monitor_by_name(name: &str) -> Option<Box<dyn Monitor>> {
    REGISTRY.iter().find(|(n, _)| *n == name).map(|(_, make)| make())
}

pub fn evaluate(f: &Formula, trace: &TimedTrace, i: usize) -> Result<bool, MonitorError> {
    DpMonitor.evaluate(f, trace, i)
}

pub fn evaluate_naive(f: &Formula, trace: &TimedTrace, i: usize) -> Result<bool, MonitorError> {
    NaiveMonitor.evaluate(f, trace, i)
}

fn check_position(trace: &TimedTrace, i: usize) -> Result<(), MonitorError> {
    if i < trace.len() {
        Ok(())
    } else {
        Err(MonitorError::Position {
            index: i,
            len: trace.len(),
        })
    }
}

/// Relative time from position `i` to position `j`. Both monitors measure
/// offsets through this one expression so they agree at interval boundaries.
#[inline]
fn offset(trace: &TimedTrace, i: usize, j: usize) -> f64 {
    trace.entry_time(j) - trace.entry_time(i)
}

/// Whether the trace extends at least `b` seconds past position `i`.
#[inline]
fn covered(trace: &TimedTrace, i: usize, b: f64) -> bool {
    trace.entry_time(i) + b <= trace.total_duration()
}

fn naive(f: &Formula, tr: &TimedTrace, i: usize) -> bool {
    let n = tr.len();
    match f {
        Formula::True => true,
        Formula::Atom(s) => tr.symbol(i) == *s,
        Formula::Not(g) => !naive(g, tr, i),
        Formula::And(a, b) => naive(a, tr, i) && naive(b, tr, i),
        Formula::Or(a, b) => naive(a, tr, i) || naive(b, tr, i),
        Formula::Next(iv, g) => i + 1 < n && iv.contains(offset(tr, i, i + 1)) && naive(g, tr, i + 1),
        // Scan witnesses in order; the left operand must hold before each.
        Formula::Until(iv, a, b) => {
            for j in i..n {
                if iv.contains(offset(tr, i, j)) && naive(b, tr, j) {
                    return true;
                }
                if !naive(a, tr, j) {
                    return false;
                }
            }
            false
        }
        Formula::Eventually(iv, g) => (i..n).any(|j| iv.contains(offset(tr, i, j)) && naive(g, tr, j)),
        Formula::Always(iv, g) => {
            covered(tr, i, iv.hi())
                && (i..n).all(|j| !iv.contains(offset(tr, i, j)) || naive(g, tr, j))
        }
    }
}

/// Truth value of `f` at every position of `trace`.
pub fn satisfaction_vector(f: &Formula, trace: &TimedTrace) -> Result<Vec<bool>, MonitorError> {
    f.check_finite()?;
    let n = trace.len();
    if n <= WORD {
        let bits = packed(f, trace);
        Ok((0..n).map(|i| bits >> i & 1 == 1).collect())
    } else {
        Ok(with_scratch(f, trace, <[bool]>::to_vec))
    }
}

fn dp_at(f: &Formula, trace: &TimedTrace, i: usize) -> Result<bool, MonitorError> {
    f.check_finite()?;
    if trace.len() <= WORD {
        Ok(packed(f, trace) >> i & 1 == 1)
    } else {
        Ok(with_scratch(f, trace, |v| v[i]))
    }
}

/// Traces up to this many beats keep each truth vector in one machine word.
const WORD: usize = 64;

#[inline]
fn below(k: usize) -> u64 {
    if k >= WORD {
        !0
    } else {
        (1 << k) - 1
    }
}

/// Bits `lo..hi`.
#[inline]
fn span(lo: usize, hi: usize) -> u64 {
    below(hi) & !below(lo)
}

/// The dynamic program with bit `i` holding the truth value at position `i`.
fn packed(f: &Formula, tr: &TimedTrace) -> u64 {
    let n = tr.len();
    let full = below(n);
    fn collect(n: usize, mut pred: impl FnMut(usize) -> bool) -> u64 {
        (0..n).filter(|&i| pred(i)).fold(0, |acc, i| acc | 1 << i)
    }
    match f {
        Formula::True => full,
        Formula::Atom(s) => collect(n, |i| tr.symbol(i) == *s),
        Formula::Not(g) => !packed(g, tr) & full,
        Formula::And(a, b) => packed(a, tr) & packed(b, tr),
        Formula::Or(a, b) => packed(a, tr) | packed(b, tr),
        Formula::Next(iv, g) => {
            let v = packed(g, tr);
            collect(n, |i| i + 1 < n && iv.contains(offset(tr, i, i + 1)) && v >> (i + 1) & 1 == 1)
        }
        Formula::Eventually(iv, g) => {
            let v = packed(g, tr);
            let mut w = Window::default();
            collect(n, |i| {
                let (lo, hi) = w.advance(tr, i, iv);
                v & span(lo, hi) != 0
            })
        }
        Formula::Until(iv, a, b) => {
            let (hold, sat) = (packed(a, tr), packed(b, tr));
            let fails = !hold & full;
            let mut w = Window::default();
            collect(n, |i| {
                let (lo, hi) = w.advance(tr, i, iv);
                let later = fails & !below(i);
                let first_fail = if later == 0 { n } else { later.trailing_zeros() as usize };
                // A witness j may sit on the first failure itself.
                sat & span(lo, hi.min(first_fail + 1)) != 0
            })
        }
        Formula::Always(iv, g) => {
            let v = packed(g, tr);
            let mut w = Window::default();
            collect(n, |i| {
                let (lo, hi) = w.advance(tr, i, iv);
                covered(tr, i, iv.hi()) && !v & span(lo, hi) == 0
            })
        }
    }
}

thread_local! {
    static SCRATCH: RefCell<(Vec<bool>, Vec<u32>)> = const { RefCell::new((Vec::new(), Vec::new())) };
}

/// Runs the vector form of the dynamic program, for traces too long for a
/// word, in per-thread scratch space and hands the truth vector to `read`.
fn with_scratch<R>(f: &Formula, trace: &TimedTrace, read: impl FnOnce(&[bool]) -> R) -> R {
    let n = trace.len();
    SCRATCH.with(|cell| {
        let mut guard = cell.borrow_mut();
        let (buf, counts) = &mut *guard;
        // Each node's vector gets its own n-slot block: at most one per node.
        buf.clear();
        buf.resize(n * f.size(), false);
        counts.clear();
        counts.resize(2 * (n + 1), 0);
        dp(f, trace, buf, counts);
        let out = read(&buf[..n]);
        buf.shrink_to(1 << 16);
        counts.shrink_to(1 << 16);
        out
    })
}

/// Writes the truth vector of `f` to `buf[..n]`, using the rest of `buf` for
/// subformulas and `scratch` for per-node counters.
fn dp(f: &Formula, tr: &TimedTrace, buf: &mut [bool], scratch: &mut [u32]) {
    let n = tr.len();
    let (out, rest) = buf.split_at_mut(n);
    match f {
        Formula::True => out.fill(true),
        Formula::Atom(s) => {
            for (o, b) in out.iter_mut().zip(tr.beats()) {
                *o = b.symbol == *s;
            }
        }
        Formula::Not(g) => {
            dp(g, tr, rest, scratch);
            for (o, x) in out.iter_mut().zip(&rest[..n]) {
                *o = !x;
            }
        }
        Formula::And(a, b) => {
            let (x, y) = operands(a, b, tr, rest, scratch);
            for ((o, x), y) in out.iter_mut().zip(x).zip(y) {
                *o = *x && *y;
            }
        }
        Formula::Or(a, b) => {
            let (x, y) = operands(a, b, tr, rest, scratch);
            for ((o, x), y) in out.iter_mut().zip(x).zip(y) {
                *o = *x || *y;
            }
        }
        Formula::Next(iv, g) => {
            dp(g, tr, rest, scratch);
            for (i, o) in out.iter_mut().enumerate() {
                *o = i + 1 < n && iv.contains(offset(tr, i, i + 1)) && rest[i + 1];
            }
        }
        Formula::Eventually(iv, g) => {
            dp(g, tr, rest, scratch);
            let target = prefix_counts(&rest[..n], true, scratch);
            let mut w = Window::default();
            for (i, o) in out.iter_mut().enumerate() {
                let (lo, hi) = w.advance(tr, i, iv);
                *o = lo < hi && target[hi] > target[lo];
            }
        }
        Formula::Until(iv, a, b) => {
            let (hold, sat) = operands(a, b, tr, rest, scratch);
            let (target, first_fail) = scratch.split_at_mut(n + 1);
            let target = prefix_counts(sat, true, target);
            // first_fail[i]: first m >= i where the left operand fails.
            first_fail[n] = n as u32;
            for m in (0..n).rev() {
                first_fail[m] = if hold[m] { first_fail[m + 1] } else { m as u32 };
            }
            let mut w = Window::default();
            for (i, o) in out.iter_mut().enumerate() {
                let (lo, hi) = w.advance(tr, i, iv);
                // A witness j may sit on the first failure itself.
                let hi = hi.min(first_fail[i] as usize + 1);
                *o = lo < hi && target[hi] > target[lo];
            }
        }
        Formula::Always(iv, g) => {
            dp(g, tr, rest, scratch);
            let failures = prefix_counts(&rest[..n], false, scratch);
            let mut w = Window::default();
            for (i, o) in out.iter_mut().enumerate() {
                let (lo, hi) = w.advance(tr, i, iv);
                *o = covered(tr, i, iv.hi()) && (lo >= hi || failures[hi] == failures[lo]);
            }
        }
    }
}

/// Evaluates both operands of a binary node into consecutive blocks.
fn operands<'a>(
    a: &Formula,
    b: &Formula,
    tr: &TimedTrace,
    buf: &'a mut [bool],
    scratch: &mut [u32],
) -> (&'a [bool], &'a [bool]) {
    let n = tr.len();
    dp(a, tr, buf, scratch);
    let (x, rest) = buf.split_at_mut(n);
    dp(b, tr, rest, scratch);
    (x, &rest[..n])
}

/// `counts[k]` is the number of positions below `k` whose value equals `want`.
fn prefix_counts<'a>(v: &[bool], want: bool, counts: &'a mut [u32]) -> &'a [u32] {
    let mut c = 0;
    counts[0] = 0;
    for (k, &x) in v.iter().enumerate() {
        c += u32::from(x == want);
        counts[k + 1] = c;
    }
    &counts[..v.len() + 1]
}

/// Half-open range `[lo, hi)` of positions `j >= i` with `T(j) - T(i)` in an
/// interval. Both ends only move forward as `i` grows, so a sweep over all
/// positions in increasing order costs `O(n)`.
#[derive(Default)]
struct Window {
    lo: usize,
    hi: usize,
}

impl Window {
    #[inline]
    fn advance(&mut self, tr: &TimedTrace, i: usize, iv: &Interval) -> (usize, usize) {
        let times = tr.entry_times();
        let (n, t0) = (times.len(), times[i]);
        self.lo = self.lo.max(i);
        while self.lo < n && times[self.lo] - t0 < iv.lo() {
            self.lo += 1;
        }
        self.hi = self.hi.max(self.lo);
        while self.hi < n && times[self.hi] - t0 <= iv.hi() {
            self.hi += 1;
        }
        (self.lo, self.hi)
    }
}
