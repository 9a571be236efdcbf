//! Acceptance suite: one PASS/FAIL line per criterion. Pass criterion numbers
//! as arguments to run a subset, e.g. `cargo test --test acceptance -- 4 5`.

use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use rhythm_miner::fixtures;
use rhythm_miner::gpucb::{optimize, ParamBox, UcbConfig};
use rhythm_miner::hmm::{baum_welch, log_likelihood, select_model, BaumWelchConfig, HybridHmm};
use rhythm_miner::mitl::{evaluate, evaluate_naive, parse_formula, Formula, Interval, Monitor, NaiveMonitor};
use rhythm_miner::rng::rng_from;
use rhythm_miner::search::{learn_discriminative, PatternTemplate, SearchConfig, SearchReport};
use rhythm_miner::smc::{estimate_probability, SatEstimate, SmcConfig};
use rhythm_miner::trace::{Alphabet, Beat, Symbol, TimedTrace};

type Outcome = Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

// ---------------------------------------------------------------- monitors

fn formulas_up_to_height_3() -> Vec<Formula> {
    let ends = [0.0, 1.0, 2.0, f64::INFINITY];
    let mut ivs = Vec::new();
    for &lo in &ends[..3] {
        for &hi in &ends {
            if hi >= lo {
                ivs.push(Interval::new(lo, hi).unwrap());
            }
        }
    }
    let grow = |base: &[Formula]| {
        let mut out = base.to_vec();
        for f in base {
            out.push(Formula::not(f.clone()));
            for iv in &ivs {
                out.push(Formula::next(*iv, f.clone()));
                out.push(Formula::eventually(*iv, f.clone()));
                // G needs a finite horizon on finite traces.
                if iv.hi().is_finite() {
                    out.push(Formula::always(*iv, f.clone()));
                }
            }
        }
        for a in base {
            for b in base {
                out.push(Formula::and(a.clone(), b.clone()));
                out.push(Formula::or(a.clone(), b.clone()));
                for iv in &ivs {
                    out.push(Formula::until(*iv, a.clone(), b.clone()));
                }
            }
        }
        out
    };
    let leaves = [Formula::True, Formula::atom('N'), Formula::atom('V')];
    grow(&grow(&leaves))
}

fn traces_up_to_5_beats() -> Vec<TimedTrace> {
    let mut out = Vec::new();
    for n in 1..=5usize {
        for code in 0..1usize << (2 * n) {
            let beats: Vec<(char, f64)> = (0..n)
                .map(|k| {
                    let c = code >> (2 * k) & 3;
                    (if c & 1 == 0 { 'N' } else { 'V' }, if c & 2 == 0 { 0.5 } else { 1.0 })
                })
                .collect();
            out.push(TimedTrace::from_pairs(&beats));
        }
    }
    out
}

/// A case is one formula on one trace, judged at the first beat. The trace
/// set is closed under suffixes, so every later position of every trace is
/// also covered as the first beat of a shorter trace.
fn monitor_equivalence() -> Outcome {
    let start = Instant::now();
    let formulas = formulas_up_to_height_3();
    let traces = traces_up_to_5_beats();
    let (cases, bad) = formulas
        .par_iter()
        .map(|f| {
            let mut bad = 0;
            for t in &traces {
                let fast = evaluate(f, t, 0).unwrap();
                let slow = evaluate_naive(f, t, 0).unwrap();
                if fast != slow {
                    if bad == 0 {
                        eprintln!("disagreement: {f} on {t:?}: dp {fast}, naive {slow}");
                    }
                    bad += 1;
                }
            }
            (traces.len(), bad)
        })
        .reduce(|| (0, 0), |a, b| (a.0 + b.0, a.1 + b.1));
    let secs = start.elapsed().as_secs_f64();
    check(
        bad == 0 && cases >= 100_000 && secs < 120.0,
        format!(
            "{} formulas x {} traces = {cases} cases, {bad} disagreements, {secs:.0} s",
            formulas.len(),
            traces.len()
        ),
    )
}

// --------------------------------------------------------------------- EM

fn gaussian_pdf(x: f64, mean: f64, std: f64) -> f64 {
    let z = (x - mean) / std;
    (-0.5 * z * z).exp() / (std * (2.0 * std::f64::consts::PI).sqrt())
}

/// Sum over every state path of the joint density, in linear space.
fn path_sum(m: &HybridHmm, t: &TimedTrace) -> f64 {
    let n = m.n_states();
    let emit = |s: usize, b: &Beat| {
        let k = m.alphabet.index_of(b.symbol).unwrap();
        m.sym_probs[s][k] * gaussian_pdf(b.duration, m.dur_mean[s], m.dur_std[s])
    };
    let beats = t.beats();
    let mut total = 0.0;
    let paths = n.pow(beats.len() as u32);
    for code in 0..paths {
        let states: Vec<usize> = (0..beats.len()).map(|i| code / n.pow(i as u32) % n).collect();
        let mut p = m.pi[states[0]] * emit(states[0], &beats[0]);
        for i in 1..beats.len() {
            p *= m.trans[states[i - 1]][states[i]] * emit(states[i], &beats[i]);
        }
        total += p;
    }
    total
}

fn random_distribution(rng: &mut impl rand::Rng, len: usize) -> Vec<f64> {
    let w: Vec<f64> = (0..len).map(|_| rng.random_range(0.05..1.0)).collect();
    let s: f64 = w.iter().sum();
    w.iter().map(|x| x / s).collect()
}

fn em_correctness() -> Outcome {
    // Monotone likelihood on 50 traces from each fixture.
    let mut fits = 0;
    for (r, rhythm) in fixtures::RHYTHMS.iter().enumerate() {
        let model = fixtures::model(rhythm).unwrap();
        let ds = fixtures::sample_dataset(&model, 50, fixtures::TRACE_SECONDS, 11 + r as u64);
        let traces = ds.filter_by_rhythm(rhythm);
        for n_states in 1..=3 {
            let cfg = BaumWelchConfig {
                max_iter: 60,
                tol: 0.0,
                restarts: 1,
                seed: r as u64,
            };
            let (_, fit) = baum_welch(&ds.alphabet, &traces, n_states, &cfg).unwrap();
            for w in fit.loglik_history.windows(2) {
                if w[1] < w[0] - 1e-8 {
                    return Err(format!("{rhythm}, {n_states} states: log-likelihood fell {} -> {}", w[0], w[1]));
                }
            }
            fits += 1;
        }
    }
    // Forward algorithm against path enumeration.
    let alphabet = Alphabet::default();
    let mut rng = rng_from(&[2024]);
    let mut worst: f64 = 0.0;
    let mut cases = 0;
    for n_states in 1..=3 {
        for _ in 0..100 {
            let m = HybridHmm::new(
                alphabet.clone(),
                random_distribution(&mut rng, n_states),
                (0..n_states).map(|_| random_distribution(&mut rng, n_states)).collect(),
                (0..n_states).map(|_| random_distribution(&mut rng, alphabet.len())).collect(),
                (0..n_states).map(|_| rng.random_range(0.3..1.2)).collect(),
                (0..n_states).map(|_| rng.random_range(0.05..0.4)).collect(),
            )
            .unwrap();
            let len = rng.random_range(1..=6);
            let beats: Vec<Beat> = (0..len)
                .map(|_| Beat {
                    symbol: alphabet.symbols()[rng.random_range(0..alphabet.len())],
                    duration: rng.random_range(0.2..1.4),
                })
                .collect();
            let t = TimedTrace::new(beats);
            let ll = log_likelihood(&m, std::slice::from_ref(&t)).unwrap();
            worst = worst.max((ll - path_sum(&m, &t).ln()).abs());
            cases += 1;
        }
    }
    check(
        worst <= 1e-9,
        format!("{fits} fits monotone; {cases} forward/enumeration pairs, max |diff| {worst:.1e}"),
    )
}

fn model_selection() -> Outcome {
    let mut picks = Vec::new();
    for seed in 0..10 {
        let ds = fixtures::demo_dataset("bigeminy", seed).unwrap();
        let traces = ds.filter_by_rhythm("bigeminy");
        let cfg = BaumWelchConfig {
            seed,
            ..Default::default()
        };
        let sel = select_model(&ds.alphabet, &traces, 2..=6, &cfg).unwrap();
        picks.push(sel.model.n_states());
    }
    let twos = picks.iter().filter(|&&n| n == 2).count();
    check(twos >= 8, format!("chosen sizes {picks:?}: {twos}/10 pick 2"))
}

// -------------------------------------------------------------------- SMC

/// Two states with near-constant durations 0.5 s and 1.0 s.
fn degenerate_model() -> HybridHmm {
    HybridHmm::new(
        Alphabet::default(),
        vec![0.6, 0.4],
        vec![vec![0.55, 0.45], vec![0.35, 0.65]],
        vec![vec![0.75, 0.25, 0.0, 0.0, 0.0, 0.0], vec![0.2, 0.8, 0.0, 0.0, 0.0, 0.0]],
        vec![0.5, 1.0],
        vec![1e-3, 1e-3],
    )
    .unwrap()
}

const HORIZON: f64 = 3.7;

/// Exact satisfaction probability by enumerating every state and symbol
/// sequence up to the horizon. Each path is also evaluated with all durations
/// shifted by +-4 ms, so the verdict cannot hinge on duration noise.
fn exact_probability(m: &HybridHmm, f: &Formula) -> Result<f64, String> {
    fn walk(
        m: &HybridHmm,
        f: &Formula,
        state: usize,
        weight: f64,
        prefix: &mut Vec<(Symbol, usize)>,
        elapsed: f64,
    ) -> Result<f64, String> {
        let mut total = 0.0;
        for (k, &p) in m.sym_probs[state].iter().enumerate() {
            if p == 0.0 {
                continue;
            }
            prefix.push((m.alphabet.symbols()[k], state));
            let now = elapsed + m.dur_mean[state];
            let w = weight * p;
            if now >= HORIZON {
                let verdicts: Vec<bool> = [0.0, 0.004, -0.004]
                    .iter()
                    .map(|shift| {
                        let beats = prefix
                            .iter()
                            .map(|&(symbol, s)| Beat {
                                symbol,
                                duration: m.dur_mean[s] + shift,
                            })
                            .collect();
                        NaiveMonitor.evaluate(f, &TimedTrace::new(beats), 0).unwrap()
                    })
                    .collect();
                if verdicts.iter().any(|&v| v != verdicts[0]) {
                    return Err(format!("{f} is sensitive to duration noise"));
                }
                if verdicts[0] {
                    total += w;
                }
            } else {
                for (next, &a) in m.trans[state].iter().enumerate() {
                    if a > 0.0 {
                        total += walk(m, f, next, w * a, prefix, now)?;
                    }
                }
            }
            prefix.pop();
        }
        Ok(total)
    }
    let mut total = 0.0;
    for (s, &p) in m.pi.iter().enumerate() {
        if p > 0.0 {
            total += walk(m, f, s, p, &mut Vec::new(), 0.0)?;
        }
    }
    Ok(total)
}

fn smc_calibration() -> Outcome {
    let m = degenerate_model();
    let mut lines = Vec::new();
    let mut ok = true;
    for (i, text) in ["F[0.3,2.2] (V & X[0,0.7] V)", "N U[0,1.7] V", "G[0,1.7] (N | X[0,1.2] N)"]
        .iter()
        .enumerate()
    {
        let f = parse_formula(text).unwrap();
        let exact = exact_probability(&m, &f)?;
        let cfg = SmcConfig {
            runs: 10_000,
            trace_duration: HORIZON,
            master_seed: 100 + i as u64,
        };
        let est = estimate_probability(&m, &f, &cfg).unwrap();
        let err = (est.p_hat - exact).abs();
        ok &= err <= 0.02;
        lines.push(format!("{text}: exact {exact:.4}, estimate {:.4}", est.p_hat));
    }
    let p = 0.3;
    let mut covered = 0;
    for rep in 0..500u64 {
        let mut rng = rng_from(&[7, rep]);
        let k = (0..1000).filter(|_| rng.random::<f64>() < p).count();
        let e = SatEstimate::from_counts(k, 1000);
        if e.ci_low <= p && p <= e.ci_high {
            covered += 1;
        }
    }
    ok &= covered >= 465;
    lines.push(format!("interval covers p = 0.3 in {covered}/500"));
    check(ok, lines.join("; "))
}

// ----------------------------------------------------------------- GP-UCB

fn gpucb_convergence() -> Outcome {
    let bounds = ParamBox::new(vec![("x".into(), 0.0, 1.0)]).unwrap();
    let cell = 1.0 / 19.0;
    let mut hits = 0;
    let mut worst: f64 = 0.0;
    for seed in 0..100u64 {
        let mut rng = rng_from(&[31, seed]);
        let noise = Normal::new(0.0, 0.01).unwrap();
        let cfg = UcbConfig {
            grid_points_per_dim: 20,
            iterations: 30,
            noise_std: 0.01,
            seed,
            ..Default::default()
        };
        let res = optimize(
            |x: &[f64]| Ok::<f64, String>(-(x[0] - 0.3).powi(2) + noise.sample(&mut rng)),
            &bounds,
            &cfg,
        )
        .unwrap();
        let miss = (res.theta_star[0] - 0.3).abs();
        worst = worst.max(miss);
        if miss <= cell + 1e-12 {
            hits += 1;
        }
    }
    check(hits >= 95, format!("{hits}/100 within one cell ({cell:.4}); worst miss {worst:.4}"))
}

// ------------------------------------------------------------- end to end

fn search(rhythm: &str, t_max: f64) -> SearchReport {
    let cfg = SearchConfig {
        t_max,
        ..Default::default()
    };
    learn_discriminative(&fixtures::model(rhythm).unwrap(), &fixtures::normal(), &cfg).unwrap()
}

fn describe(r: &SearchReport) -> String {
    let trail: Vec<String> = r
        .levels
        .iter()
        .map(|l| format!("k={} best single R={:.2}", l.k, l.max_phase1_r))
        .collect();
    match &r.selected {
        Some(s) => format!(
            "{}; selected {} with R={:.2}, p1={:.4}, p2={:.4}, T={:.2}",
            trail.join(", "),
            s.template,
            s.r,
            s.p1(),
            s.p2(),
            s.theta[0]
        ),
        None => format!("{}; nothing selected", trail.join(", ")),
    }
}

fn bigeminy_end_to_end() -> Outcome {
    let r = search("bigeminy", 4.0);
    let ok = r.terminated_at_k == Some(2)
        && r.selected.as_ref().is_some_and(|s| {
            s.template == PatternTemplate::parse("NV|VN").unwrap() && s.p1() >= 0.95 && s.p2() <= 0.10 && s.r >= 2.0
        });
    check(ok, describe(&r))
}

fn trigeminy_end_to_end() -> Outcome {
    let r = search("trigeminy", 7.0);
    let shifts = PatternTemplate::parse("VNN|NVN|NNV").unwrap();
    let ok = r.levels.first().is_some_and(|l| l.k == 2 && l.escalated)
        && r.terminated_at_k == Some(3)
        && r.selected.as_ref().is_some_and(|s| {
            s.template.patterns().iter().all(|p| shifts.patterns().contains(p)) && s.p1() >= 0.95 && s.p2() <= 0.10
        });
    check(ok, describe(&r))
}

fn tachycardia_end_to_end() -> Outcome {
    let r = search("tachycardia", 2.0);
    let ok = r.terminated_at_k == Some(2)
        && r.selected.as_ref().is_some_and(|s| {
            s.template == PatternTemplate::parse("VV").unwrap() && s.p1() >= 0.95 && s.p2() <= 0.15
        });
    check(ok, describe(&r))
}

// ------------------------------------------------------------ determinism

fn run_cli(dir: &Path, args: &[&str]) -> Result<(Vec<u8>, Vec<u8>), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_rhythm-miner"))
        .current_dir(dir)
        .env_remove("RHYTHM_MINER_SEED")
        .args(args)
        .args(["--json", "--report", "report.json"])
        .output()
        .map_err(|e| e.to_string())?;
    if !out.status.success() {
        return Err(format!("{args:?} failed: {}", String::from_utf8_lossy(&out.stderr)));
    }
    let report = std::fs::read(dir.join("report.json")).map_err(|e| e.to_string())?;
    if report != out.stdout {
        return Err(format!("{args:?}: --report file differs from stdout"));
    }
    let mut files = Vec::new();
    for extra in ["model.json", "sim.txt"] {
        if let Ok(b) = std::fs::read(dir.join(extra)) {
            files.extend(b);
        }
    }
    Ok((report, files))
}

fn cli_determinism() -> Outcome {
    let formula = "F G[0,3.8] ((N & X[0,2.5] (V & X[0,2.5] true)) | (V & X[0,2.5] (N & X[0,2.5] true)))";
    let commands: Vec<Vec<&str>> = vec![
        vec!["demo", "--out", "demo", "--seed", "5"],
        vec!["train", "--traces", "demo/traces/bigeminy.txt", "--out", "model.json", "--config", "small.cfg"],
        vec!["simulate", "--model", "demo/models/trigeminy.json", "--out", "sim.txt", "--count", "20"],
        vec!["check", "--model", "demo/models/bigeminy.json", "--formula", formula, "--runs", "500"],
        vec!["monitor", "--traces", "demo/traces/all.txt", "--formula", formula],
        vec![
            "discriminate", "--pos", "demo/models/bigeminy.json", "--neg", "demo/models/normal.json",
            "--formula", formula, "--runs", "500",
        ],
        vec!["learn", "--pos", "demo/models/bigeminy.json", "--neg", "demo/models/normal.json", "--seed", "3"],
    ];
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    std::fs::write(dir.path().join("small.cfg"), "min_states = 2\nmax_states = 3\nrestarts = 2\nseed = 9\n")
        .map_err(|e| e.to_string())?;
    let mut checked = Vec::new();
    for cmd in &commands {
        let mut runs = Vec::new();
        for jobs in ["1", "1", "2", "4"] {
            let mut args = cmd.clone();
            args.extend(["--jobs", jobs]);
            runs.push(run_cli(dir.path(), &args)?);
        }
        if runs.iter().any(|r| r != &runs[0]) {
            return Err(format!("{} output changed between runs", cmd[0]));
        }
        checked.push(cmd[0]);
    }
    Ok(format!("{} identical across 2 runs and --jobs 1/2/4", checked.join(", ")))
}

fn main() {
    let criteria: [(&str, fn() -> Outcome, Duration); 9] = [
        ("monitor oracle equivalence", monitor_equivalence, Duration::from_secs(120)),
        ("EM correctness", em_correctness, Duration::MAX),
        ("model selection", model_selection, Duration::from_secs(300)),
        ("SMC calibration", smc_calibration, Duration::MAX),
        ("GP-UCB convergence", gpucb_convergence, Duration::from_secs(60)),
        ("end-to-end bigeminy", bigeminy_end_to_end, Duration::from_secs(900)),
        ("end-to-end trigeminy", trigeminy_end_to_end, Duration::from_secs(1800)),
        ("end-to-end tachycardia", tachycardia_end_to_end, Duration::from_secs(600)),
        ("CLI determinism", cli_determinism, Duration::MAX),
    ];
    let wanted: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut failed = 0;
    for (i, (name, run, budget)) in criteria.iter().enumerate() {
        let id = i + 1;
        if !wanted.is_empty() && !wanted.contains(&id) {
            continue;
        }
        let start = Instant::now();
        let outcome = run();
        let took = start.elapsed();
        let outcome = match outcome {
            Ok(d) if took > *budget => Err(format!("{d}; over the {} s budget", budget.as_secs())),
            o => o,
        };
        match outcome {
            Ok(d) => println!("criterion {id} {name}: PASS ({d}) [{:.1} s]", took.as_secs_f64()),
            Err(d) => {
                failed += 1;
                println!("criterion {id} {name}: FAIL ({d}) [{:.1} s]", took.as_secs_f64());
            }
        }
    }
    if failed > 0 {
        eprintln!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
