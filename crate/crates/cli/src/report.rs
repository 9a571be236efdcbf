//! Machine-readable reports. Every human summary is rendered from the report
//! value alone, so a report read back from JSON prints the same summary.

use std::fmt::Write as _;

use rhythm_miner::hmm::{FitReport, HybridHmm};
use rhythm_miner::search::{ScoredFormula, SearchConfig, SearchReport};
use rhythm_miner::smc::{LogOddResult, SatEstimate};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "command", rename_all = "lowercase")]
pub enum Report {
    Train(TrainReport),
    Simulate(SimulateReport),
    Check(CheckReport),
    Monitor(MonitorReport),
    Discriminate(DiscriminateReport),
    Learn(LearnReport),
    Demo(DemoReport),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub seed: u64,
    pub traces: String,
    pub rhythm: Option<String>,
    pub segments: usize,
    pub beats: usize,
    pub model_file: String,
    pub chosen_states: usize,
    pub candidates: Vec<FitReport>,
    pub model: HybridHmm,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulateReport {
    pub seed: u64,
    pub model_file: String,
    pub out_file: String,
    pub rhythm: String,
    pub count: usize,
    pub trace_duration: f64,
    pub beats: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckReport {
    pub seed: u64,
    pub model_file: String,
    pub formula: String,
    pub monitor: String,
    pub runs: usize,
    pub trace_duration: f64,
    pub estimate: SatEstimate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub record_id: String,
    pub rhythm: String,
    pub satisfied: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonitorReport {
    pub traces: String,
    pub rhythm: Option<String>,
    pub formula: String,
    pub monitor: String,
    pub verdicts: Vec<Verdict>,
    pub satisfied: usize,
    pub total: usize,
    pub fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscriminateReport {
    pub seed: u64,
    pub pos_file: String,
    pub neg_file: String,
    pub formula: String,
    pub monitor: String,
    pub runs: usize,
    pub trace_duration: f64,
    pub result: LogOddResult,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LearnReport {
    pub seed: u64,
    pub pos_file: String,
    pub neg_file: String,
    pub config: SearchConfig,
    pub search: SearchReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DemoReport {
    pub seed: u64,
    pub out_dir: String,
    pub files: Vec<String>,
}

fn scored_line(s: &ScoredFormula) -> String {
    let theta: Vec<String> = s
        .param_names
        .iter()
        .zip(&s.theta)
        .map(|(n, v)| format!("{n}={v:.3}"))
        .collect();
    format!(
        "{:<14} R={:>7.3}  p1={:.4}  p2={:.4}  {}",
        s.template.to_string(),
        s.r,
        s.p1(),
        s.p2(),
        theta.join(" ")
    )
}

impl Report {
    pub fn summary(&self) -> String {
        let mut o = String::new();
        match self {
            Report::Train(r) => {
                let _ = writeln!(
                    o,
                    "trained on {} segments ({} beats) from {}{}",
                    r.segments,
                    r.beats,
                    r.traces,
                    r.rhythm.as_ref().map(|l| format!(" [{l}]")).unwrap_or_default()
                );
                for c in &r.candidates {
                    let mark = if c.n_states == r.chosen_states { '*' } else { ' ' };
                    let _ = writeln!(
                        o,
                        "{mark} states={} loglik={:.3} params={} AIC={:.3} iterations={}{}",
                        c.n_states,
                        c.final_loglik,
                        c.param_count,
                        c.aic,
                        c.iterations,
                        if c.converged { "" } else { " (not converged)" }
                    );
                }
                let _ = writeln!(o, "model with {} states written to {}", r.chosen_states, r.model_file);
            }
            Report::Simulate(r) => {
                let _ = writeln!(
                    o,
                    "simulated {} traces of {} s ({} beats, rhythm {}) from {} into {}",
                    r.count, r.trace_duration, r.beats, r.rhythm, r.model_file, r.out_file
                );
            }
            Report::Check(r) => {
                let e = &r.estimate;
                let _ = writeln!(o, "formula: {}", r.formula);
                let _ = writeln!(
                    o,
                    "P(sat) = {:.4}  95% interval [{:.4}, {:.4}]  ({}/{} runs of {} s, model {})",
                    e.p_hat, e.ci_low, e.ci_high, e.successes, e.runs, r.trace_duration, r.model_file
                );
            }
            Report::Monitor(r) => {
                let _ = writeln!(o, "formula: {}", r.formula);
                for v in &r.verdicts {
                    let _ = writeln!(o, "{}\t{}\t{}", v.record_id, v.rhythm, if v.satisfied { "sat" } else { "unsat" });
                }
                let _ = writeln!(o, "satisfied {}/{} ({:.4})", r.satisfied, r.total, r.fraction);
            }
            Report::Discriminate(r) => {
                let _ = writeln!(o, "formula: {}", r.formula);
                let _ = writeln!(o, "p1 = {:.4} ({})", r.result.est1.p_hat, r.pos_file);
                let _ = writeln!(o, "p2 = {:.4} ({})", r.result.est2.p_hat, r.neg_file);
                let _ = writeln!(o, "R  = {:.4}", r.result.r);
            }
            Report::Learn(r) => {
                for l in &r.search.levels {
                    let _ = writeln!(
                        o,
                        "k={}: best single-pattern R={:.3}{}",
                        l.k,
                        l.max_phase1_r,
                        if l.escalated { ", escalating" } else { "" }
                    );
                    for s in &l.phase1 {
                        let _ = writeln!(o, "  {}", scored_line(s));
                    }
                    let kept: Vec<String> = l.t_best.iter().map(|t| t.to_string()).collect();
                    let _ = writeln!(o, "  kept: {}", if kept.is_empty() { "none".into() } else { kept.join(", ") });
                    for s in &l.phase2 {
                        let _ = writeln!(o, "  {}", scored_line(s));
                    }
                }
                match &r.search.selected {
                    Some(s) => {
                        let _ = writeln!(o, "selected: {}", scored_line(s));
                        let _ = writeln!(o, "formula: {}", s.formula);
                    }
                    None => {
                        let _ = writeln!(o, "no discriminating formula found");
                    }
                }
            }
            Report::Demo(r) => {
                let _ = writeln!(o, "wrote {} files to {}", r.files.len(), r.out_dir);
                for f in &r.files {
                    let _ = writeln!(o, "  {f}");
                }
            }
        }
        o
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("reports serialise");
        s.push('\n');
        s
    }
}
