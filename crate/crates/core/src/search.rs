//! Template formulae and the two-phase greedy search for formulae that
//! separate two models.
//!
//! A template `F G[0,T] (c_1 | ... | c_m)` disjoins beat-pattern chains
//! `q_1 & X[0,b_q1] (q_2 & ... X[0,b_qk] true)`. Its free parameters are the
//! persistence bound `T` and one duration bound per symbol, shared by every
//! occurrence of that symbol.

use std::collections::HashSet;
use std::fmt;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gpucb::{self, FinalChoice, GpucbError, OptResult, ParamBox, UcbConfig};
use crate::hmm::HybridHmm;
use crate::mitl::{monitor_by_name, Formula, Interval, Monitor};
use crate::rng::{mix, tag};
use crate::smc::{LogOddResult, SatEstimate, SmcConfig, SmcError, TraceBank};
use crate::trace::Symbol;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SearchError {
    #[error("invalid template: {0}")]
    Template(String),
    #[error("expected {expected} parameters, got {got}")]
    Parameters { expected: usize, got: usize },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Smc(#[from] SmcError),
    #[error(transparent)]
    Optimizer(#[from] GpucbError),
}

/// A non-empty set of equal-length beat patterns.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct PatternTemplate {
    patterns: Vec<Vec<Symbol>>,
}

impl PatternTemplate {
    /// Patterns are sorted and deduplicated so that equal sets compare equal.
    pub fn new(mut patterns: Vec<Vec<Symbol>>) -> Result<Self, SearchError> {
        patterns.sort();
        patterns.dedup();
        let Some(first) = patterns.first() else {
            return Err(SearchError::Template("no patterns".into()));
        };
        let k = first.len();
        if k < 2 {
            return Err(SearchError::Template("patterns need at least two symbols".into()));
        }
        if patterns.iter().any(|p| p.len() != k) {
            return Err(SearchError::Template("patterns differ in length".into()));
        }
        Ok(PatternTemplate { patterns })
    }

    /// Parses `"NV"` or `"NV|VN"`.
    pub fn parse(text: &str) -> Result<Self, SearchError> {
        Self::new(
            text.split('|')
                .map(|p| p.trim().chars().map(Symbol).collect())
                .collect(),
        )
    }

    pub fn singleton(pattern: &[Symbol]) -> Result<Self, SearchError> {
        Self::new(vec![pattern.to_vec()])
    }

    pub fn patterns(&self) -> &[Vec<Symbol>] {
        &self.patterns
    }

    pub fn k(&self) -> usize {
        self.patterns[0].len()
    }

    /// Symbols carrying a duration bound, in code order.
    pub fn symbols(&self) -> Vec<Symbol> {
        let mut s: Vec<Symbol> = self.patterns.iter().flatten().copied().collect();
        s.sort();
        s.dedup();
        s
    }

    /// `T` followed by `b_<symbol>` for each bound symbol.
    pub fn param_names(&self) -> Vec<String> {
        std::iter::once("T".to_string())
            .chain(self.symbols().iter().map(|s| format!("b_{s}")))
            .collect()
    }

    pub fn param_box(&self, t_max: f64, dur_max: f64) -> Result<ParamBox, SearchError> {
        let dims = self
            .param_names()
            .into_iter()
            .enumerate()
            .map(|(i, n)| (n, 0.0, if i == 0 { t_max } else { dur_max }))
            .collect();
        Ok(ParamBox::new(dims)?)
    }

    /// Builds the formula for parameters ordered as [`Self::param_names`].
    pub fn instantiate(&self, theta: &[f64]) -> Result<Formula, SearchError> {
        let symbols = self.symbols();
        if theta.len() != symbols.len() + 1 {
            return Err(SearchError::Parameters {
                expected: symbols.len() + 1,
                got: theta.len(),
            });
        }
        let bound = |s: Symbol| -> Result<Interval, SearchError> {
            let i = symbols.binary_search(&s).expect("symbol collected above");
            Interval::upto(theta[i + 1]).map_err(|e| SearchError::Template(e.to_string()))
        };
        let mut body: Option<Formula> = None;
        for p in &self.patterns {
            let mut chain = Formula::True;
            for &s in p.iter().rev() {
                chain = Formula::and(Formula::Atom(s), Formula::next(bound(s)?, chain));
            }
            body = Some(match body {
                None => chain,
                Some(acc) => Formula::or(acc, chain),
            });
        }
        let persist = Interval::upto(theta[0]).map_err(|e| SearchError::Template(e.to_string()))?;
        Ok(Formula::eventually(
            Interval::unbounded(),
            Formula::always(persist, body.expect("at least one pattern")),
        ))
    }
}

impl fmt::Display for PatternTemplate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, p) in self.patterns.iter().enumerate() {
            if i > 0 {
                write!(f, "|")?;
            }
            for s in p {
                write!(f, "{s}")?;
            }
        }
        Ok(())
    }
}

impl Serialize for PatternTemplate {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for PatternTemplate {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        PatternTemplate::parse(&s).map_err(serde::de::Error::custom)
    }
}

/// Every singleton template of length `k` over `alphabet`, in lexicographic
/// order of the alphabet as given.
pub fn enumerate_templates(alphabet: &[Symbol], k: usize) -> Vec<PatternTemplate> {
    if alphabet.is_empty() || k < 2 {
        return Vec::new();
    }
    let mut out = Vec::with_capacity(alphabet.len().pow(k as u32));
    let mut idx = vec![0usize; k];
    loop {
        let pattern: Vec<Symbol> = idx.iter().map(|&i| alphabet[i]).collect();
        out.push(PatternTemplate::singleton(&pattern).expect("length checked"));
        let mut pos = k;
        loop {
            if pos == 0 {
                return out;
            }
            pos -= 1;
            idx[pos] += 1;
            if idx[pos] < alphabet.len() {
                break;
            }
            idx[pos] = 0;
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchConfig {
    pub alphabet: Vec<Symbol>,
    pub k_start: usize,
    pub k_max: usize,
    pub t_max: f64,
    pub dur_max: f64,
    pub phase1_score_floor: f64,
    pub phase1_psat_floor: f64,
    pub escalation_threshold: f64,
    pub final_psat_floor: f64,
    pub smc: SmcConfig,
    pub ucb: UcbConfig,
    /// Registered monitor used for every satisfaction check.
    pub monitor: String,
}

impl Default for SearchConfig {
    fn default() -> Self {
        SearchConfig {
            alphabet: vec![Symbol('N'), Symbol('V')],
            k_start: 2,
            k_max: 4,
            t_max: 4.0,
            dur_max: 2.5,
            phase1_score_floor: 0.0,
            phase1_psat_floor: 0.2,
            escalation_threshold: 3.5,
            final_psat_floor: 0.9,
            smc: SmcConfig::default(),
            // Log-odds surfaces are piecewise constant with sharp edges, so
            // the reported optimum is restricted to evaluated points.
            ucb: UcbConfig {
                final_choice: FinalChoice::Observed,
                ..UcbConfig::default()
            },
            monitor: "dp".into(),
        }
    }
}

impl SearchConfig {
    pub fn validate(&self) -> Result<(), SearchError> {
        let bad = |m: String| Err(SearchError::Config(m));
        if self.alphabet.is_empty() {
            return bad("empty search alphabet".into());
        }
        if self.k_start < 2 || self.k_start > self.k_max {
            return bad(format!("need 2 <= k_start <= k_max, got {}..{}", self.k_start, self.k_max));
        }
        if !(self.t_max > 0.0 && self.dur_max > 0.0 && self.t_max.is_finite() && self.dur_max.is_finite()) {
            return bad("t_max and dur_max must be positive".into());
        }
        for (name, v) in [
            ("phase1_score_floor", self.phase1_score_floor),
            ("phase1_psat_floor", self.phase1_psat_floor),
            ("escalation_threshold", self.escalation_threshold),
            ("final_psat_floor", self.final_psat_floor),
        ] {
            if !v.is_finite() {
                return bad(format!("{name} must be finite"));
            }
        }
        if monitor_by_name(&self.monitor).is_none() {
            return bad(format!("unknown monitor {:?}", self.monitor));
        }
        self.smc.validate()?;
        self.ucb.validate()?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredFormula {
    pub template: PatternTemplate,
    pub param_names: Vec<String>,
    pub theta: Vec<f64>,
    /// Canonical text of the instantiated formula.
    pub formula: String,
    pub est1: SatEstimate,
    pub est2: SatEstimate,
    #[serde(rename = "R")]
    pub r: f64,
    /// Posterior-mean objective at `theta` reported by the optimiser.
    pub predicted_r: f64,
    pub evaluations: usize,
}

impl ScoredFormula {
    pub fn p1(&self) -> f64 {
        self.est1.p_hat
    }

    pub fn p2(&self) -> f64 {
        self.est2.p_hat
    }
}

/// Simulated traces for both models: one pair of banks drives the optimiser
/// (common random numbers across all templates and parameters), an
/// independent pair re-scores each optimum.
pub struct Evaluator {
    opt: (TraceBank, TraceBank),
    fresh: (TraceBank, TraceBank),
    monitor: Box<dyn Monitor>,
    cfg: SearchConfig,
}

impl Evaluator {
    pub fn new(m1: &HybridHmm, m2: &HybridHmm, cfg: &SearchConfig) -> Result<Self, SearchError> {
        cfg.validate()?;
        if m1.alphabet != m2.alphabet {
            return Err(SearchError::Config("models use different alphabets".into()));
        }
        if let Some(s) = cfg.alphabet.iter().find(|s| !m1.alphabet.contains(**s)) {
            return Err(SearchError::Config(format!("symbol {s} is not in the models' alphabet")));
        }
        let seeded = |stream: &str| SmcConfig {
            master_seed: mix(&[cfg.smc.master_seed, tag(stream)]),
            ..cfg.smc
        };
        let (opt_cfg, fresh_cfg) = (seeded("optimise"), seeded("validate"));
        Ok(Evaluator {
            opt: (TraceBank::simulate(m1, &opt_cfg)?, TraceBank::simulate(m2, &opt_cfg)?),
            fresh: (TraceBank::simulate(m1, &fresh_cfg)?, TraceBank::simulate(m2, &fresh_cfg)?),
            monitor: monitor_by_name(&cfg.monitor).expect("validated"),
            cfg: cfg.clone(),
        })
    }

    pub fn config(&self) -> &SearchConfig {
        &self.cfg
    }

    fn score(&self, banks: &(TraceBank, TraceBank), f: &Formula) -> Result<LogOddResult, SearchError> {
        Ok(LogOddResult::from_estimates(
            banks.0.estimate(f, self.monitor.as_ref())?,
            banks.1.estimate(f, self.monitor.as_ref())?,
        ))
    }

    /// Log-odds of a fixed formula on the validation banks.
    pub fn validate_formula(&self, f: &Formula) -> Result<LogOddResult, SearchError> {
        self.score(&self.fresh, f)
    }

    /// Maximises the log-odds of `t` over its parameter box, then re-scores
    /// the optimum on independent traces.
    pub fn optimize_template(&self, t: &PatternTemplate) -> Result<ScoredFormula, SearchError> {
        let bounds = t.param_box(self.cfg.t_max, self.cfg.dur_max)?;
        let ucb = UcbConfig {
            seed: mix(&[self.cfg.ucb.seed, tag(&t.to_string())]),
            ..self.cfg.ucb
        };
        let objective = |theta: &[f64]| -> Result<f64, SearchError> {
            Ok(self.score(&self.opt, &t.instantiate(theta)?)?.r)
        };
        let OptResult {
            theta_star,
            value_star,
            evaluations,
            ..
        } = gpucb::optimize(objective, &bounds, &ucb)?;
        let formula = t.instantiate(&theta_star)?;
        let res = self.score(&self.fresh, &formula)?;
        Ok(ScoredFormula {
            template: t.clone(),
            param_names: t.param_names(),
            theta: theta_star,
            formula: formula.to_string(),
            est1: res.est1,
            est2: res.est2,
            r: res.r,
            predicted_r: value_star,
            evaluations,
        })
    }

    /// Optimises every template, keeping input order in the output.
    fn optimize_all(&self, templates: &[PatternTemplate]) -> Result<Vec<ScoredFormula>, SearchError> {
        templates.par_iter().map(|t| self.optimize_template(t)).collect()
    }

    /// Scores every length-`k` singleton and selects the supported ones.
    pub fn phase1(&self, k: usize) -> Result<Phase1, SearchError> {
        let mut ranked = self.optimize_all(&enumerate_templates(&self.cfg.alphabet, k))?;
        rank(&mut ranked);
        let t_best = ranked
            .iter()
            .filter(|s| s.r > self.cfg.phase1_score_floor && s.p1() > self.cfg.phase1_psat_floor)
            .map(|s| s.template.clone())
            .collect();
        Ok(Phase1 { ranked, t_best })
    }

    /// Scores the disjunction of every subset of `t_best` with two or more
    /// members; empty when fewer than two templates are supplied.
    pub fn phase2(&self, t_best: &[PatternTemplate]) -> Result<Vec<ScoredFormula>, SearchError> {
        let mut ranked = self.optimize_all(&combinations(t_best))?;
        rank(&mut ranked);
        Ok(ranked)
    }

    pub fn learn(&self) -> Result<SearchReport, SearchError> {
        let cfg = &self.cfg;
        let mut levels = Vec::new();
        for k in cfg.k_start..=cfg.k_max {
            let p1 = self.phase1(k)?;
            let max_r = p1.ranked.first().map_or(f64::NEG_INFINITY, |s| s.r);
            let last = k == cfg.k_max;
            let escalate = (max_r < cfg.escalation_threshold || p1.t_best.is_empty()) && !last;
            if escalate || p1.t_best.is_empty() {
                levels.push(Level {
                    k,
                    max_phase1_r: max_r,
                    escalated: escalate,
                    phase1: p1.ranked,
                    t_best: p1.t_best,
                    phase2: Vec::new(),
                });
                continue;
            }
            let phase2 = self.phase2(&p1.t_best)?;
            let candidates: Vec<&ScoredFormula> = phase2.iter().chain(&p1.ranked).collect();
            let chosen = final_pick(&candidates, cfg.final_psat_floor).cloned();
            levels.push(Level {
                k,
                max_phase1_r: max_r,
                escalated: false,
                phase1: p1.ranked,
                t_best: p1.t_best,
                phase2,
            });
            return Ok(SearchReport {
                levels,
                selected: chosen,
                terminated_at_k: Some(k),
            });
        }
        Ok(SearchReport {
            levels,
            selected: None,
            terminated_at_k: None,
        })
    }
}

pub struct Phase1 {
    pub ranked: Vec<ScoredFormula>,
    pub t_best: Vec<PatternTemplate>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Level {
    pub k: usize,
    pub max_phase1_r: f64,
    pub escalated: bool,
    pub phase1: Vec<ScoredFormula>,
    pub t_best: Vec<PatternTemplate>,
    pub phase2: Vec<ScoredFormula>,
}

/// Full trail of a search. `selected` is `None` when no level produced a
/// supported template.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchReport {
    pub levels: Vec<Level>,
    pub selected: Option<ScoredFormula>,
    pub terminated_at_k: Option<usize>,
}

/// Orders by R descending, then fewer patterns, then template text.
fn better(a: &ScoredFormula, b: &ScoredFormula) -> std::cmp::Ordering {
    b.r.total_cmp(&a.r)
        .then(a.template.patterns().len().cmp(&b.template.patterns().len()))
        .then(a.template.to_string().cmp(&b.template.to_string()))
}

fn rank(v: &mut [ScoredFormula]) {
    v.sort_by(better);
}

/// Highest-scoring candidate whose first-model probability clears `floor`,
/// or the highest-scoring candidate overall if none does. Exact ties go to
/// the candidate listed first; the search lists combinations before
/// singletons, so a disjunction is kept when a single pattern does no better.
pub fn final_pick<'a>(candidates: &[&'a ScoredFormula], floor: f64) -> Option<&'a ScoredFormula> {
    let best_of = |it: &mut dyn Iterator<Item = &'a ScoredFormula>| {
        it.fold(None, |best: Option<&'a ScoredFormula>, s| match best {
            Some(b) if s.r <= b.r => Some(b),
            _ => Some(s),
        })
    };
    best_of(&mut candidates.iter().copied().filter(|s| s.p1() >= floor))
        .or_else(|| best_of(&mut candidates.iter().copied()))
}

/// Disjunctions of all subsets of size two or more, by increasing size and
/// then lexicographically by member position.
pub fn combinations(t_best: &[PatternTemplate]) -> Vec<PatternTemplate> {
    let n = t_best.len();
    if n < 2 {
        return Vec::new();
    }
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for size in 2..=n {
        let mut idx: Vec<usize> = (0..size).collect();
        loop {
            let patterns = idx.iter().flat_map(|&i| t_best[i].patterns().to_vec()).collect();
            let t = PatternTemplate::new(patterns).expect("members share k");
            if seen.insert(t.clone()) {
                out.push(t);
            }
            let mut i = size;
            loop {
                if i == 0 {
                    break;
                }
                i -= 1;
                if idx[i] < n - size + i {
                    idx[i] += 1;
                    for j in i + 1..size {
                        idx[j] = idx[j - 1] + 1;
                    }
                    break;
                }
                if i == 0 {
                    i = usize::MAX;
                    break;
                }
            }
            if i == usize::MAX {
                break;
            }
        }
    }
    out
}

/// Convenience wrapper: builds the evaluator and runs the full search.
pub fn learn_discriminative(
    m1: &HybridHmm,
    m2: &HybridHmm,
    cfg: &SearchConfig,
) -> Result<SearchReport, SearchError> {
    Evaluator::new(m1, m2, cfg)?.learn()
}
