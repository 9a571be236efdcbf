use rand::Rng as _;
use rand_distr::{Distribution, Gamma};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::inference::pass;
use super::{aic_from, encode, HmmError, HybridHmm, ModelMetadata, STD_FLOOR};
use crate::rng::{rng_from, tag, Rng};
use crate::trace::{Alphabet, TimedTrace};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BaumWelchConfig {
    pub max_iter: usize,
    /// Stop once an iteration improves the log-likelihood by less than this.
    pub tol: f64,
    pub restarts: usize,
    pub seed: u64,
}

impl Default for BaumWelchConfig {
    fn default() -> Self {
        BaumWelchConfig {
            max_iter: 500,
            tol: 1e-6,
            restarts: 5,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub n_states: usize,
    /// Log-likelihood before each M-step, plus the final value.
    pub loglik_history: Vec<f64>,
    pub final_loglik: f64,
    pub param_count: usize,
    pub aic: f64,
    /// Number of M-steps applied.
    pub iterations: usize,
    pub converged: bool,
    /// Which restart produced this fit.
    pub restart: usize,
}

/// Fits an `n_states` model by EM, keeping the best of several random
/// initialisations. Restarts run in parallel; restart `r` draws its
/// initialisation from `seed ^ r`, so the result is independent of scheduling.
pub fn baum_welch(
    alphabet: &Alphabet,
    traces: &[TimedTrace],
    n_states: usize,
    cfg: &BaumWelchConfig,
) -> Result<(HybridHmm, FitReport), HmmError> {
    if n_states == 0 {
        return Err(HmmError::InvalidArgument("n_states must be at least 1".into()));
    }
    if cfg.restarts == 0 {
        return Err(HmmError::InvalidArgument("restarts must be at least 1".into()));
    }
    let seqs = encode(alphabet, traces)?;
    let beats: usize = seqs.iter().map(Vec::len).sum();
    if n_states > beats {
        return Err(HmmError::TooManyStates { n_states, beats });
    }

    let fits: Vec<(HybridHmm, FitReport)> = (0..cfg.restarts)
        .into_par_iter()
        .map(|r| {
            let mut rng = rng_from(&[cfg.seed ^ r as u64, tag("baum-welch"), n_states as u64]);
            let init = initial_model(alphabet, &seqs, n_states, &mut rng);
            let (model, mut report) = run_em(init, &seqs, cfg);
            report.restart = r;
            (model, report)
        })
        .collect();

    // First restart wins ties; a NaN likelihood never wins.
    let mut best = 0;
    for (i, (_, rep)) in fits.iter().enumerate().skip(1) {
        if rep.final_loglik > fits[best].1.final_loglik || fits[best].1.final_loglik.is_nan() {
            best = i;
        }
    }
    Ok(fits.into_iter().nth(best).expect("at least one restart"))
}

fn dirichlet(rng: &mut Rng, n: usize, concentration: f64) -> Vec<f64> {
    let g = Gamma::new(concentration, 1.0).expect("positive shape");
    let draws: Vec<f64> = (0..n).map(|_| g.sample(rng).max(1e-12)).collect();
    let total: f64 = draws.iter().sum();
    draws.into_iter().map(|x| x / total).collect()
}

/// Perturbed-uniform start and transition probabilities, jittered empirical
/// symbol frequencies, and state means drawn from observed durations.
fn initial_model(
    alphabet: &Alphabet,
    seqs: &[Vec<(usize, f64)>],
    n: usize,
    rng: &mut Rng,
) -> HybridHmm {
    let m = alphabet.len();
    let mut freq = vec![0.0; m];
    let mut durations = Vec::new();
    for seq in seqs {
        for &(k, d) in seq {
            freq[k] += 1.0;
            durations.push(d);
        }
    }
    let count = durations.len() as f64;
    let mean = durations.iter().sum::<f64>() / count;
    let var = durations.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / count;
    let std = var.sqrt().max(STD_FLOOR);

    let pi = dirichlet(rng, n, 8.0);
    let trans = (0..n).map(|_| dirichlet(rng, n, 8.0)).collect();
    let sym_probs = (0..n)
        .map(|_| {
            let w = dirichlet(rng, m, 2.0);
            let raw: Vec<f64> = freq.iter().zip(&w).map(|(f, w)| f * w).collect();
            let total: f64 = raw.iter().sum();
            raw.into_iter().map(|x| x / total).collect()
        })
        .collect();
    let dur_mean = (0..n)
        .map(|_| durations[rng.random_range(0..durations.len())])
        .collect();
    HybridHmm {
        alphabet: alphabet.clone(),
        pi,
        trans,
        sym_probs,
        dur_mean,
        dur_std: vec![std; n],
        metadata: ModelMetadata::default(),
    }
}

/// Expected sufficient statistics accumulated over all traces.
struct Stats {
    loglik: f64,
    init: Vec<f64>,
    trans: Vec<Vec<f64>>,
    sym: Vec<Vec<f64>>,
    weight: Vec<f64>,
    dur: Vec<f64>,
    dur_sq: Vec<f64>,
}

fn e_step(model: &HybridHmm, seqs: &[Vec<(usize, f64)>]) -> Stats {
    let n = model.n_states();
    let m = model.alphabet.len();
    let mut st = Stats {
        loglik: 0.0,
        init: vec![0.0; n],
        trans: vec![vec![0.0; n]; n],
        sym: vec![vec![0.0; m]; n],
        weight: vec![0.0; n],
        dur: vec![0.0; n],
        dur_sq: vec![0.0; n],
    };
    let mut gamma = vec![0.0; n];
    let mut xi = vec![0.0; n * n];
    for seq in seqs {
        let p = match pass(model, seq, true) {
            Ok(p) => p,
            Err(_) => {
                st.loglik = f64::NEG_INFINITY;
                continue;
            }
        };
        st.loglik += p.loglik;
        for (t, &(k, d)) in seq.iter().enumerate() {
            let mut total = 0.0;
            for s in 0..n {
                gamma[s] = p.gamma(t, s);
                total += gamma[s];
            }
            for s in 0..n {
                let g = gamma[s] / total;
                if t == 0 {
                    st.init[s] += g;
                }
                st.sym[s][k] += g;
                st.weight[s] += g;
                st.dur[s] += g * d;
                st.dur_sq[s] += g * d * d;
            }
            if t + 1 < seq.len() {
                let mut total = 0.0;
                for r in 0..n {
                    for s in 0..n {
                        let x = p.xi(model, t, r, s);
                        xi[r * n + s] = x;
                        total += x;
                    }
                }
                for r in 0..n {
                    for s in 0..n {
                        st.trans[r][s] += xi[r * n + s] / total;
                    }
                }
            }
        }
    }
    st
}

/// Maximisation step. A state with no posterior mass keeps its old
/// parameters, which leaves the expected complete log-likelihood unchanged.
fn m_step(model: &HybridHmm, st: &Stats, n_seqs: usize) -> HybridHmm {
    let mut next = model.clone();
    next.pi = st.init.iter().map(|x| x / n_seqs as f64).collect();
    for r in 0..model.n_states() {
        let out: f64 = st.trans[r].iter().sum();
        if out > 0.0 {
            next.trans[r] = st.trans[r].iter().map(|x| x / out).collect();
        }
        let w = st.weight[r];
        if w > 0.0 {
            next.sym_probs[r] = st.sym[r].iter().map(|x| x / w).collect();
            let mean = st.dur[r] / w;
            let var = (st.dur_sq[r] / w - mean * mean).max(0.0);
            next.dur_mean[r] = mean;
            // The Gaussian term is unimodal in sigma, so clamping to the
            // floor is the constrained maximiser.
            next.dur_std[r] = var.sqrt().max(STD_FLOOR);
        }
    }
    next
}

fn run_em(
    mut model: HybridHmm,
    seqs: &[Vec<(usize, f64)>],
    cfg: &BaumWelchConfig,
) -> (HybridHmm, FitReport) {
    let mut history = Vec::new();
    let mut converged = false;
    let mut iterations = 0;
    loop {
        let st = e_step(&model, seqs);
        let ll = st.loglik;
        if let Some(&prev) = history.last() {
            if ll - prev < cfg.tol {
                history.push(ll);
                converged = true;
                break;
            }
        }
        history.push(ll);
        if iterations == cfg.max_iter || !ll.is_finite() {
            break;
        }
        model = m_step(&model, &st, seqs.len());
        iterations += 1;
    }
    let final_loglik = *history.last().expect("at least one E-step");
    let k = model.param_count();
    let report = FitReport {
        n_states: model.n_states(),
        loglik_history: history,
        final_loglik,
        param_count: k,
        aic: aic_from(k, final_loglik),
        iterations,
        converged,
        restart: 0,
    };
    (model, report)
}

/// Outcome of AIC-based selection over a range of state counts.
#[derive(Debug, Clone)]
pub struct Selection {
    pub model: HybridHmm,
    /// One report per candidate size, in increasing order of size.
    pub candidates: Vec<FitReport>,
    pub chosen: usize,
}

/// Fits every state count in `sizes` and keeps the lowest AIC; ties go to the
/// smaller model.
pub fn select_model(
    alphabet: &Alphabet,
    traces: &[TimedTrace],
    sizes: std::ops::RangeInclusive<usize>,
    cfg: &BaumWelchConfig,
) -> Result<Selection, HmmError> {
    if sizes.is_empty() {
        return Err(HmmError::InvalidArgument("empty state range".into()));
    }
    let mut best: Option<(HybridHmm, usize)> = None;
    let mut candidates: Vec<FitReport> = Vec::new();
    for n in sizes {
        let (model, report) = baum_welch(alphabet, traces, n, cfg)?;
        let better = match &best {
            None => true,
            Some((_, i)) => report.aic < candidates[*i].aic,
        };
        candidates.push(report);
        if better {
            best = Some((model, candidates.len() - 1));
        }
    }
    let (mut model, chosen) = best.expect("non-empty range");
    model.metadata.aic = Some(candidates[chosen].aic);
    model.metadata.seed = Some(cfg.seed);
    Ok(Selection {
        model,
        candidates,
        chosen,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hmm::{log_likelihood, simulate};
    use proptest::prelude::*;

    fn bigeminy() -> HybridHmm {
        HybridHmm::new(
            Alphabet::parse("NVO").unwrap(),
            vec![0.5, 0.5],
            vec![vec![0.05, 0.95], vec![0.95, 0.05]],
            vec![vec![0.05, 0.95, 0.0], vec![0.95, 0.05, 0.0]],
            vec![0.5, 0.8],
            vec![0.05, 0.05],
        )
        .unwrap()
    }

    #[test]
    fn single_state_closed_form() {
        let traces = vec![
            TimedTrace::from_pairs(&[('N', 0.8), ('V', 0.5), ('N', 0.9)]),
            TimedTrace::from_pairs(&[('N', 0.7), ('O', 1.2)]),
        ];
        let alpha = Alphabet::parse("NVO").unwrap();
        let (m, rep) = baum_welch(&alpha, &traces, 1, &BaumWelchConfig::default()).unwrap();
        let durs = [0.8, 0.5, 0.9, 0.7, 1.2];
        let mean = durs.iter().sum::<f64>() / 5.0;
        let std = (durs.iter().map(|d| (d - mean) * (d - mean)).sum::<f64>() / 5.0).sqrt();
        assert!((m.dur_mean[0] - mean).abs() < 1e-12);
        assert!((m.dur_std[0] - std).abs() < 1e-12);
        assert!((m.sym_probs[0][0] - 0.6).abs() < 1e-12);
        assert!((m.sym_probs[0][1] - 0.2).abs() < 1e-12);
        assert!((m.sym_probs[0][2] - 0.2).abs() < 1e-12);
        // One update reaches the optimum; the next E-step confirms it.
        assert!(rep.converged);
        assert_eq!(rep.iterations, 2);
        assert!((rep.loglik_history[1] - rep.loglik_history[2]).abs() < 1e-9);
    }

    #[test]
    fn recovers_bigeminy_transitions() {
        let truth = bigeminy();
        let traces: Vec<TimedTrace> = (0..100).map(|i| simulate(&truth, 15.0, 100 + i)).collect();
        let cfg = BaumWelchConfig {
            seed: 3,
            ..Default::default()
        };
        let (m, rep) = baum_welch(&truth.alphabet, &traces, 2, &cfg).unwrap();
        // Align learned states with ground truth by mean duration.
        let order: Vec<usize> = if m.dur_mean[0] < m.dur_mean[1] { vec![0, 1] } else { vec![1, 0] };
        for r in 0..2 {
            for s in 0..2 {
                let learned = m.trans[order[r]][order[s]];
                assert!((learned - truth.trans[r][s]).abs() < 0.1, "A[{r}][{s}] = {learned}");
            }
        }
        for w in rep.loglik_history.windows(2) {
            assert!(w[1] >= w[0] - 1e-8);
        }
        let ll = log_likelihood(&m, &traces).unwrap();
        assert!((ll - rep.final_loglik).abs() < 1e-6);
    }

    #[test]
    fn too_many_states() {
        let t = TimedTrace::from_pairs(&[('N', 0.8), ('V', 0.5)]);
        let r = baum_welch(&Alphabet::parse("NVO").unwrap(), &[t], 3, &BaumWelchConfig::default());
        assert!(matches!(r, Err(HmmError::TooManyStates { n_states: 3, beats: 2 })));
    }

    #[test]
    fn selection_reports_every_size() {
        let truth = bigeminy();
        let traces: Vec<TimedTrace> = (0..20).map(|i| simulate(&truth, 15.0, i)).collect();
        let cfg = BaumWelchConfig {
            restarts: 2,
            max_iter: 100,
            seed: 1,
            ..Default::default()
        };
        let sel = select_model(&truth.alphabet, &traces, 2..=4, &cfg).unwrap();
        assert_eq!(sel.candidates.len(), 3);
        assert_eq!(sel.candidates[sel.chosen].n_states, sel.model.n_states());
        let best = sel.candidates.iter().map(|c| c.aic).fold(f64::INFINITY, f64::min);
        assert_eq!(sel.candidates[sel.chosen].aic, best);
    }

    #[test]
    fn single_state_generator_prefers_two_states() {
        let one = HybridHmm::new(
            Alphabet::parse("NVO").unwrap(),
            vec![1.0],
            vec![vec![1.0]],
            vec![vec![0.8, 0.2, 0.0]],
            vec![0.8],
            vec![0.1],
        )
        .unwrap();
        let traces: Vec<TimedTrace> = (0..40).map(|i| simulate(&one, 15.0, i)).collect();
        let cfg = BaumWelchConfig {
            restarts: 2,
            max_iter: 200,
            seed: 5,
            ..Default::default()
        };
        let sel = select_model(&one.alphabet, &traces, 2..=4, &cfg).unwrap();
        assert_eq!(sel.model.n_states(), 2);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn em_is_monotone(seed in 0u64..1000, n in 1usize..=4, len in 2usize..12) {
            let mut rng = rng_from(&[seed]);
            let traces: Vec<TimedTrace> = (0..3)
                .map(|_| {
                    let pairs: Vec<(char, f64)> = (0..len)
                        .map(|_| {
                            let c = ['N', 'V', 'O'][rng.random_range(0..3)];
                            (c, rng.random_range(0.2..1.5))
                        })
                        .collect();
                    TimedTrace::from_pairs(&pairs)
                })
                .collect();
            let cfg = BaumWelchConfig { restarts: 1, max_iter: 60, seed, ..Default::default() };
            let (_, rep) = baum_welch(&Alphabet::parse("NVO").unwrap(), &traces, n, &cfg).unwrap();
            for w in rep.loglik_history.windows(2) {
                prop_assert!(w[1] >= w[0] - 1e-8, "{} then {}", w[0], w[1]);
            }
        }
    }
}
