//! Hidden Markov models whose states emit a beat symbol from a categorical
//! distribution and a beat duration from an (untruncated) Gaussian.

mod inference;
mod learn;
pub(crate) mod simulate;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::trace::{Alphabet, Beat, TimedTrace};

pub use inference::{forward_backward, log_likelihood, PosteriorMarginals};
pub use learn::{baum_welch, select_model, BaumWelchConfig, FitReport, Selection};
pub use simulate::{simulate, simulate_with};

/// Lower bound on every state's duration standard deviation, in seconds.
pub const STD_FLOOR: f64 = 1e-3;

const PROB_TOL: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum HmmError {
    #[error("no traces supplied")]
    NoTraces,
    #[error("trace {0} is empty")]
    EmptyTrace(usize),
    #[error("{n_states} states requested but only {beats} beats available")]
    TooManyStates { n_states: usize, beats: usize },
    #[error("symbol {symbol} at position {position} of trace {trace} is not in the model alphabet")]
    UnknownSymbol {
        trace: usize,
        position: usize,
        symbol: char,
    },
    #[error("trace {trace} has zero likelihood under the model (position {position})")]
    ZeroLikelihood { trace: usize, position: usize },
    #[error("invalid model: {0}")]
    InvalidModel(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

/// Provenance carried alongside a model file.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ModelMetadata {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rhythm: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub aic: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ModelFile", into = "ModelFile")]
pub struct HybridHmm {
    pub alphabet: Alphabet,
    pub pi: Vec<f64>,
    pub trans: Vec<Vec<f64>>,
    /// `sym_probs[state][k]` is the probability of `alphabet.symbols()[k]`.
    pub sym_probs: Vec<Vec<f64>>,
    pub dur_mean: Vec<f64>,
    pub dur_std: Vec<f64>,
    pub metadata: ModelMetadata,
}

/// On-disk shape: the in-memory model plus an explicit state count.
#[derive(Serialize, Deserialize)]
struct ModelFile {
    alphabet: Alphabet,
    n_states: usize,
    pi: Vec<f64>,
    trans: Vec<Vec<f64>>,
    sym_probs: Vec<Vec<f64>>,
    dur_mean: Vec<f64>,
    dur_std: Vec<f64>,
    #[serde(default)]
    metadata: ModelMetadata,
}

impl TryFrom<ModelFile> for HybridHmm {
    type Error = HmmError;

    fn try_from(f: ModelFile) -> Result<Self, HmmError> {
        if f.pi.len() != f.n_states {
            return Err(HmmError::InvalidModel(format!(
                "n_states is {} but pi has {} entries",
                f.n_states,
                f.pi.len()
            )));
        }
        let m = HybridHmm {
            alphabet: f.alphabet,
            pi: f.pi,
            trans: f.trans,
            sym_probs: f.sym_probs,
            dur_mean: f.dur_mean,
            dur_std: f.dur_std,
            metadata: f.metadata,
        };
        m.validate()?;
        Ok(m)
    }
}

impl From<HybridHmm> for ModelFile {
    fn from(m: HybridHmm) -> Self {
        ModelFile {
            n_states: m.n_states(),
            alphabet: m.alphabet,
            pi: m.pi,
            trans: m.trans,
            sym_probs: m.sym_probs,
            dur_mean: m.dur_mean,
            dur_std: m.dur_std,
            metadata: m.metadata,
        }
    }
}

impl HybridHmm {
    /// Builds and validates a model.
    pub fn new(
        alphabet: Alphabet,
        pi: Vec<f64>,
        trans: Vec<Vec<f64>>,
        sym_probs: Vec<Vec<f64>>,
        dur_mean: Vec<f64>,
        dur_std: Vec<f64>,
    ) -> Result<Self, HmmError> {
        let m = HybridHmm {
            alphabet,
            pi,
            trans,
            sym_probs,
            dur_mean,
            dur_std,
            metadata: ModelMetadata::default(),
        };
        m.validate()?;
        Ok(m)
    }

    pub fn n_states(&self) -> usize {
        self.pi.len()
    }

    pub fn validate(&self) -> Result<(), HmmError> {
        let n = self.pi.len();
        let m = self.alphabet.len();
        let bad = |msg: String| Err(HmmError::InvalidModel(msg));
        if n == 0 {
            return bad("model needs at least one state".into());
        }
        if self.trans.len() != n
            || self.sym_probs.len() != n
            || self.dur_mean.len() != n
            || self.dur_std.len() != n
        {
            return bad("per-state arrays disagree on the number of states".into());
        }
        check_distribution(&self.pi, n, "pi")?;
        for (s, row) in self.trans.iter().enumerate() {
            check_distribution(row, n, &format!("trans[{s}]"))?;
        }
        for (s, row) in self.sym_probs.iter().enumerate() {
            check_distribution(row, m, &format!("sym_probs[{s}]"))?;
        }
        for s in 0..n {
            if !self.dur_mean[s].is_finite() {
                return bad(format!("dur_mean[{s}] is not finite"));
            }
            if !(self.dur_std[s] >= STD_FLOOR && self.dur_std[s].is_finite()) {
                return bad(format!(
                    "dur_std[{s}] = {} is below the floor {STD_FLOOR}",
                    self.dur_std[s]
                ));
            }
        }
        Ok(())
    }

    /// Log of the hybrid emission density of `beat` in `state`.
    /// Returns `-inf` when the beat's symbol is impossible in that state or
    /// not in the alphabet at all.
    pub fn emission_log_density(&self, state: usize, beat: &Beat) -> f64 {
        match self.alphabet.index_of(beat.symbol) {
            Some(k) => self.emission_log_density_idx(state, k, beat.duration),
            None => f64::NEG_INFINITY,
        }
    }

    pub(crate) fn emission_log_density_idx(&self, state: usize, sym: usize, duration: f64) -> f64 {
        let p = self.sym_probs[state][sym];
        if p == 0.0 {
            return f64::NEG_INFINITY;
        }
        p.ln() + normal_ln_pdf(duration, self.dur_mean[state], self.dur_std[state])
    }

    /// Number of free parameters: initial distribution, transitions, symbol
    /// emissions, and a mean and deviation per state.
    pub fn param_count(&self) -> usize {
        let n = self.n_states();
        let m = self.alphabet.len();
        (n - 1) + n * (n - 1) + n * m.saturating_sub(1) + 2 * n
    }
}

fn check_distribution(p: &[f64], len: usize, what: &str) -> Result<(), HmmError> {
    if p.len() != len {
        return Err(HmmError::InvalidModel(format!(
            "{what} has {} entries, expected {len}",
            p.len()
        )));
    }
    if p.iter().any(|&x| !(0.0..=1.0).contains(&x)) {
        return Err(HmmError::InvalidModel(format!(
            "{what} has an entry outside [0, 1]"
        )));
    }
    let total: f64 = p.iter().sum();
    if (total - 1.0).abs() > PROB_TOL {
        return Err(HmmError::InvalidModel(format!("{what} sums to {total}")));
    }
    Ok(())
}

pub(crate) fn normal_ln_pdf(x: f64, mean: f64, std: f64) -> f64 {
    const HALF_LN_TAU: f64 = 0.918_938_533_204_672_8;
    let z = (x - mean) / std;
    -HALF_LN_TAU - std.ln() - 0.5 * z * z
}

/// Akaike information criterion of `model` on `traces`.
pub fn aic(model: &HybridHmm, traces: &[TimedTrace]) -> Result<f64, HmmError> {
    let ll = log_likelihood(model, traces)?;
    Ok(aic_from(model.param_count(), ll))
}

pub fn aic_from(param_count: usize, loglik: f64) -> f64 {
    2.0 * param_count as f64 - 2.0 * loglik
}

/// Maps each beat to its alphabet index, rejecting empty traces and symbols
/// outside the alphabet.
pub(crate) fn encode(
    alphabet: &Alphabet,
    traces: &[TimedTrace],
) -> Result<Vec<Vec<(usize, f64)>>, HmmError> {
    if traces.is_empty() {
        return Err(HmmError::NoTraces);
    }
    traces
        .iter()
        .enumerate()
        .map(|(t, trace)| {
            if trace.is_empty() {
                return Err(HmmError::EmptyTrace(t));
            }
            trace
                .beats()
                .iter()
                .enumerate()
                .map(|(i, b)| {
                    alphabet
                        .index_of(b.symbol)
                        .map(|k| (k, b.duration))
                        .ok_or(HmmError::UnknownSymbol {
                            trace: t,
                            position: i,
                            symbol: b.symbol.code(),
                        })
                })
                .collect()
        })
        .collect()
}
