//! Statistical model checking: Monte Carlo estimates of the probability that
//! a model's traces satisfy a formula, regularised with a uniform Beta prior,
//! and the log-odds score comparing two models.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{Beta, ContinuousCDF};
use thiserror::Error;

use crate::hmm::simulate::Sampler;
use crate::hmm::HybridHmm;
use crate::mitl::{DpMonitor, Formula, Monitor, MonitorError};
use crate::rng::{mix, rng_from, tag};
use crate::trace::TimedTrace;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SmcError {
    #[error(transparent)]
    Monitor(#[from] MonitorError),
    #[error("invalid configuration: {0}")]
    Config(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SmcConfig {
    pub runs: usize,
    /// Length of each simulated trace, in seconds.
    pub trace_duration: f64,
    pub master_seed: u64,
}

impl Default for SmcConfig {
    fn default() -> Self {
        SmcConfig {
            runs: 1000,
            trace_duration: 15.0,
            master_seed: 0,
        }
    }
}

impl SmcConfig {
    pub fn validate(&self) -> Result<(), SmcError> {
        if self.runs == 0 {
            return Err(SmcError::Config("runs must be at least 1".into()));
        }
        if !(self.trace_duration > 0.0 && self.trace_duration.is_finite()) {
            return Err(SmcError::Config("trace_duration must be positive".into()));
        }
        Ok(())
    }
}

/// Posterior summary of a satisfaction probability under a uniform prior.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SatEstimate {
    pub successes: usize,
    pub runs: usize,
    /// Posterior mean `(k + 1) / (n + 2)`.
    pub p_hat: f64,
    /// Equal-tailed 95% credible bounds of `Beta(k + 1, n - k + 1)`.
    pub ci_low: f64,
    pub ci_high: f64,
}

impl SatEstimate {
    pub fn from_counts(successes: usize, runs: usize) -> Self {
        assert!(successes <= runs, "more successes than runs");
        let a = successes as f64 + 1.0;
        let b = (runs - successes) as f64 + 1.0;
        let post = Beta::new(a, b).expect("positive shape parameters");
        SatEstimate {
            successes,
            runs,
            p_hat: a / (a + b),
            ci_low: post.inverse_cdf(0.025),
            ci_high: post.inverse_cdf(0.975),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogOddResult {
    pub est1: SatEstimate,
    pub est2: SatEstimate,
    /// `ln(p_hat1 / p_hat2)`.
    #[serde(rename = "R")]
    pub r: f64,
}

impl LogOddResult {
    pub fn from_estimates(est1: SatEstimate, est2: SatEstimate) -> Self {
        LogOddResult {
            est1,
            est2,
            r: (est1.p_hat / est2.p_hat).ln(),
        }
    }
}

/// Stream tag derived from a model's parameters (not its metadata), so that
/// two different models never share a random stream while one model always
/// sees the same stream for a given seed.
pub fn model_fingerprint(model: &HybridHmm) -> u64 {
    let mut words = vec![tag(&model.alphabet.to_string()), model.n_states() as u64];
    words.extend(model.pi.iter().map(|x| x.to_bits()));
    for s in 0..model.n_states() {
        words.extend(model.trans[s].iter().map(|x| x.to_bits()));
        words.extend(model.sym_probs[s].iter().map(|x| x.to_bits()));
        words.push(model.dur_mean[s].to_bits());
        words.push(model.dur_std[s].to_bits());
    }
    mix(&words)
}

/// Simulated traces of one model; run `i` is drawn from a stream keyed by
/// `(master_seed, model fingerprint, i)`, independent of thread scheduling.
///
/// Reusing one bank across many formulas gives common random numbers, which
/// keeps the objective smooth while formula parameters are optimised.
#[derive(Debug, Clone)]
pub struct TraceBank {
    traces: Vec<TimedTrace>,
}

impl TraceBank {
    pub fn simulate(model: &HybridHmm, cfg: &SmcConfig) -> Result<Self, SmcError> {
        cfg.validate()?;
        let sampler = Sampler::new(model);
        let fp = model_fingerprint(model);
        let traces = (0..cfg.runs)
            .into_par_iter()
            .map(|i| {
                let mut rng = rng_from(&[cfg.master_seed, fp, i as u64]);
                sampler.sample(cfg.trace_duration, &mut rng)
            })
            .collect();
        Ok(TraceBank { traces })
    }

    pub fn traces(&self) -> &[TimedTrace] {
        &self.traces
    }

    pub fn count(&self, f: &Formula, monitor: &dyn Monitor) -> Result<usize, SmcError> {
        f.check_finite()?;
        let hits: Result<Vec<bool>, MonitorError> = self
            .traces
            .par_iter()
            .map(|t| monitor.evaluate(f, t, 0))
            .collect();
        Ok(hits?.into_iter().filter(|&h| h).count())
    }

    pub fn estimate(&self, f: &Formula, monitor: &dyn Monitor) -> Result<SatEstimate, SmcError> {
        Ok(SatEstimate::from_counts(self.count(f, monitor)?, self.traces.len()))
    }
}

/// Satisfaction probability of `f` at the first beat of simulated traces.
pub fn estimate_probability(
    model: &HybridHmm,
    f: &Formula,
    cfg: &SmcConfig,
) -> Result<SatEstimate, SmcError> {
    estimate_probability_with(model, f, cfg, &DpMonitor)
}

pub fn estimate_probability_with(
    model: &HybridHmm,
    f: &Formula,
    cfg: &SmcConfig,
    monitor: &dyn Monitor,
) -> Result<SatEstimate, SmcError> {
    f.check_finite()?;
    TraceBank::simulate(model, cfg)?.estimate(f, monitor)
}

/// Log-odds of `f` supporting `m1` over `m2`.
pub fn log_odds(
    m1: &HybridHmm,
    m2: &HybridHmm,
    f: &Formula,
    cfg: &SmcConfig,
) -> Result<LogOddResult, SmcError> {
    log_odds_with(m1, m2, f, cfg, &DpMonitor)
}

pub fn log_odds_with(
    m1: &HybridHmm,
    m2: &HybridHmm,
    f: &Formula,
    cfg: &SmcConfig,
    monitor: &dyn Monitor,
) -> Result<LogOddResult, SmcError> {
    let est1 = estimate_probability_with(m1, f, cfg, monitor)?;
    let est2 = estimate_probability_with(m2, f, cfg, monitor)?;
    Ok(LogOddResult::from_estimates(est1, est2))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mitl::{parse_formula, NaiveMonitor};
    use crate::trace::Alphabet;
    use proptest::prelude::*;
    use rand::Rng as _;

    fn model(p_v: f64) -> HybridHmm {
        HybridHmm::new(
            Alphabet::parse("NVO").unwrap(),
            vec![1.0],
            vec![vec![1.0]],
            vec![vec![1.0 - p_v, p_v, 0.0]],
            vec![0.8],
            vec![0.1],
        )
        .unwrap()
    }

    #[test]
    fn estimator_edge_cases() {
        let cfg = SmcConfig::default();
        let m = model(0.3);
        let t = estimate_probability(&m, &Formula::True, &cfg).unwrap();
        assert_eq!(t.successes, 1000);
        assert_eq!(t.p_hat, 1001.0 / 1002.0);
        let never = parse_formula("V & !V").unwrap();
        let z = estimate_probability(&m, &never, &cfg).unwrap();
        assert_eq!(z.successes, 0);
        assert_eq!(z.p_hat, 1.0 / 1002.0);
        assert!(0.0 < z.ci_low && z.ci_low < z.ci_high && z.ci_high < 1.0);
    }

    #[test]
    fn log_odds_arithmetic_and_symmetry() {
        let est1 = SatEstimate {
            p_hat: 0.9994,
            ..SatEstimate::from_counts(0, 1)
        };
        let est2 = SatEstimate {
            p_hat: 0.016,
            ..SatEstimate::from_counts(0, 1)
        };
        let r = LogOddResult::from_estimates(est1, est2).r;
        assert!((r - 4.1345).abs() < 1e-3);
        assert_eq!(LogOddResult::from_estimates(est2, est1).r, -r);

        let cfg = SmcConfig {
            runs: 300,
            ..Default::default()
        };
        let m = model(0.3);
        let f = parse_formula("F[0,3] V").unwrap();
        assert_eq!(log_odds(&m, &m, &f, &cfg).unwrap().r, 0.0);
        let t = log_odds(&m, &model(0.6), &Formula::True, &cfg).unwrap();
        assert_eq!(t.r, 0.0);
        assert_eq!(t.est1.p_hat, 301.0 / 302.0);
    }

    #[test]
    fn reproducible_and_monitor_independent() {
        let cfg = SmcConfig {
            runs: 200,
            master_seed: 9,
            ..Default::default()
        };
        let m = model(0.2);
        let f = parse_formula("F G[0,2] (N & X[0,1] true)").unwrap();
        let a = estimate_probability(&m, &f, &cfg).unwrap();
        let b = estimate_probability(&m, &f, &cfg).unwrap();
        assert_eq!(a, b);
        let c = estimate_probability_with(&m, &f, &cfg, &NaiveMonitor).unwrap();
        assert_eq!(a, c);
    }

    #[test]
    fn unbounded_always_is_rejected() {
        let f = Formula::always(crate::mitl::Interval::unbounded(), Formula::True);
        let e = estimate_probability(&model(0.2), &f, &SmcConfig::default());
        assert_eq!(e, Err(SmcError::Monitor(MonitorError::UnboundedAlways)));
    }

    #[test]
    fn credible_interval_coverage() {
        let mut covered = 0;
        for rep in 0..500u64 {
            let mut rng = rng_from(&[rep, tag("coverage")]);
            let k = (0..1000).filter(|_| rng.random::<f64>() < 0.3).count();
            let e = SatEstimate::from_counts(k, 1000);
            if e.ci_low <= 0.3 && 0.3 <= e.ci_high {
                covered += 1;
            }
        }
        assert!(covered >= 465, "{covered}/500");
    }

    proptest! {
        #[test]
        fn estimates_are_bounded(n in 1usize..5000, frac in 0.0f64..=1.0) {
            let k = ((n as f64) * frac).floor() as usize;
            let e = SatEstimate::from_counts(k, n);
            prop_assert!(0.0 < e.p_hat && e.p_hat < 1.0);
            prop_assert!(0.0 < e.ci_low && e.ci_low < e.ci_high && e.ci_high < 1.0);
            let worst = LogOddResult::from_estimates(
                SatEstimate::from_counts(n, n), SatEstimate::from_counts(0, n));
            prop_assert!(worst.r.is_finite());
            prop_assert!(worst.r.abs() <= 2.0 * ((n + 1) as f64).ln());
        }
    }
}
