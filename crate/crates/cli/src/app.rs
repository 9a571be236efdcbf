use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use rhythm_miner::fixtures;
use rhythm_miner::gpucb::{FinalChoice, UcbConfig};
use rhythm_miner::hmm::{select_model, BaumWelchConfig, HmmError, HybridHmm};
use rhythm_miner::mitl::{available_monitors, monitor_by_name, parse_formula, Formula, Monitor, MonitorError};
use rhythm_miner::search::{Evaluator, SearchConfig, SearchError};
use rhythm_miner::smc::{estimate_probability_with, log_odds_with, SmcConfig, SmcError};
use rhythm_miner::trace::{format_trace_file, parse_trace_file_with, Alphabet, Dataset, Symbol};

use crate::config::{resolve_seed, ConfigFile};
use crate::report::*;
use crate::UsageError;

pub const SEED_ENV: &str = "RHYTHM_MINER_SEED";

#[derive(Debug, Parser)]
#[command(name = "rhythm-miner", version, about = "Learn beat-sequence models and mine formulae that tell rhythms apart")]
pub struct Cli {
    /// Flat key = value file; command-line flags take precedence.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Master seed (falls back to the config file, then RHYTHM_MINER_SEED, then 0).
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads; results do not depend on this.
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    /// Also write the JSON report to this path.
    #[arg(long, global = true)]
    pub report: Option<PathBuf>,
    /// Print the JSON report instead of the summary.
    #[arg(long, global = true)]
    pub json: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit models of increasing size to a trace file and keep the best by AIC.
    Train(TrainArgs),
    /// Sample traces from a model.
    Simulate(SimulateArgs),
    /// Estimate the probability that a model satisfies a formula.
    Check(CheckArgs),
    /// Evaluate a formula on every trace of a file.
    Monitor(MonitorArgs),
    /// Log-odds of a formula between two models.
    Discriminate(DiscriminateArgs),
    /// Search for the formula that best separates two models.
    Learn(LearnArgs),
    /// Write the constructed fixture models and sampled trace files.
    Demo(DemoArgs),
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Trace file to fit.
    #[arg(long)]
    pub traces: Option<String>,
    /// Only use segments with this label.
    #[arg(long)]
    pub rhythm: Option<String>,
    /// Where to write the chosen model (JSON).
    #[arg(long)]
    pub out: Option<String>,
    /// Smallest model size tried (default 2).
    #[arg(long)]
    pub min_states: Option<usize>,
    /// Largest model size tried (default 6).
    #[arg(long)]
    pub max_states: Option<usize>,
    /// EM restarts per model size.
    #[arg(long)]
    pub restarts: Option<usize>,
    /// EM iteration cap.
    #[arg(long)]
    pub max_iter: Option<usize>,
    /// EM convergence tolerance on the log-likelihood.
    #[arg(long)]
    pub tol: Option<f64>,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Model file (JSON).
    #[arg(long)]
    pub model: Option<String>,
    /// Trace file to write.
    #[arg(long)]
    pub out: Option<String>,
    /// Number of traces (default 1).
    #[arg(long)]
    pub count: Option<usize>,
    /// Seconds per trace.
    #[arg(long)]
    pub duration: Option<f64>,
}

#[derive(Debug, Args)]
pub struct SmcArgs {
    /// Simulated traces per estimate.
    #[arg(long)]
    pub runs: Option<usize>,
    /// Seconds per simulated trace.
    #[arg(long)]
    pub duration: Option<f64>,
    /// Satisfaction checker (dp or naive).
    #[arg(long)]
    pub monitor: Option<String>,
}

#[derive(Debug, Args)]
pub struct CheckArgs {
    /// Model file (JSON).
    #[arg(long)]
    pub model: Option<String>,
    /// Formula to check at the first beat.
    #[arg(long)]
    pub formula: Option<String>,
    #[command(flatten)]
    pub smc: SmcArgs,
}

#[derive(Debug, Args)]
pub struct MonitorArgs {
    /// Trace file to evaluate.
    #[arg(long)]
    pub traces: Option<String>,
    /// Formula to evaluate at the first beat of each segment.
    #[arg(long)]
    pub formula: Option<String>,
    /// Only use segments with this label.
    #[arg(long)]
    pub rhythm: Option<String>,
    /// Satisfaction checker (dp or naive).
    #[arg(long)]
    pub monitor: Option<String>,
}

#[derive(Debug, Args)]
pub struct DiscriminateArgs {
    /// Model of the rhythm to characterise.
    #[arg(long)]
    pub pos: Option<String>,
    /// Model of the reference rhythm.
    #[arg(long)]
    pub neg: Option<String>,
    /// Formula to score.
    #[arg(long)]
    pub formula: Option<String>,
    #[command(flatten)]
    pub smc: SmcArgs,
}

#[derive(Debug, Args)]
pub struct LearnArgs {
    /// Model of the rhythm to characterise.
    #[arg(long)]
    pub pos: Option<String>,
    /// Model of the reference rhythm.
    #[arg(long)]
    pub neg: Option<String>,
    /// Upper bound of the persistence parameter T (default 4).
    #[arg(long)]
    pub t_max: Option<f64>,
    /// Upper bound of every duration parameter (default 2.5).
    #[arg(long)]
    pub dur_max: Option<f64>,
    /// First pattern length (default 2).
    #[arg(long)]
    pub k_start: Option<usize>,
    /// Last pattern length (default 4).
    #[arg(long)]
    pub k_max: Option<usize>,
    /// Template symbols, e.g. NV.
    #[arg(long)]
    pub alphabet: Option<String>,
    /// Optimiser acquisitions per template.
    #[arg(long)]
    pub iterations: Option<usize>,
    #[command(flatten)]
    pub smc: SmcArgs,
}

#[derive(Debug, Args)]
pub struct DemoArgs {
    /// Output directory.
    #[arg(long)]
    pub out: Option<String>,
}

/// A finished command: its report and the exit status to use.
pub struct Outcome {
    pub report: Report,
    pub code: i32,
}

struct Ctx {
    cfg: ConfigFile,
    seed: u64,
}

impl Ctx {
    fn alphabet(&self) -> Result<Alphabet> {
        match self.cfg.raw("trace_alphabet") {
            Some(s) => Ok(Alphabet::parse(s).map_err(|e| UsageError(format!("trace_alphabet: {e}")))?),
            None => Ok(Alphabet::default()),
        }
    }

    fn monitor(&self, flag: Option<String>) -> Result<(String, Box<dyn Monitor>)> {
        let name = self.cfg.pick(flag, "monitor", "dp".to_string())?;
        let m = monitor_by_name(&name).ok_or_else(|| {
            UsageError(format!("unknown monitor {name:?}; available: {}", available_monitors().join(", ")))
        })?;
        Ok((name, m))
    }

    fn smc(&self, a: &SmcArgs) -> Result<SmcConfig> {
        let d = SmcConfig::default();
        let cfg = SmcConfig {
            runs: self.cfg.pick(a.runs, "runs", d.runs)?,
            trace_duration: self.cfg.pick(a.duration, "trace_duration", d.trace_duration)?,
            master_seed: self.seed,
        };
        cfg.validate().map_err(|e| UsageError(e.to_string()))?;
        Ok(cfg)
    }
}

/// Reads the configuration file and resolves the seed.
pub fn load_config(cli: &Cli) -> Result<(ConfigFile, u64)> {
    let cfg = match &cli.config {
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("reading config {}", p.display()))?;
            ConfigFile::parse(&text)?
        }
        None => ConfigFile::default(),
    };
    let env = std::env::var(SEED_ENV).ok();
    let seed = resolve_seed(cli.seed, &cfg, env.as_deref())?;
    Ok((cfg, seed))
}

/// Thread count from the flag or the config file, if either is given.
pub fn jobs(cli: &Cli, cfg: &ConfigFile) -> Result<Option<usize>> {
    let j = match cli.jobs {
        Some(j) => Some(j),
        None => cfg.get::<usize>("jobs")?,
    };
    if j == Some(0) {
        return Err(UsageError("jobs must be at least 1".into()).into());
    }
    Ok(j)
}

pub fn run(cli: &Cli, cfg: ConfigFile, seed: u64) -> Result<Outcome> {
    let ctx = Ctx { cfg, seed };
    let done = |report| Ok(Outcome { report, code: 0 });
    match &cli.command {
        Command::Train(a) => done(Report::Train(train(&ctx, a)?)),
        Command::Simulate(a) => done(Report::Simulate(simulate(&ctx, a)?)),
        Command::Check(a) => done(Report::Check(check(&ctx, a)?)),
        Command::Monitor(a) => done(Report::Monitor(monitor(&ctx, a)?)),
        Command::Discriminate(a) => done(Report::Discriminate(discriminate(&ctx, a)?)),
        Command::Learn(a) => {
            let r = learn(&ctx, a)?;
            let code = if r.search.selected.is_some() { 0 } else { 1 };
            Ok(Outcome {
                report: Report::Learn(r),
                code,
            })
        }
        Command::Demo(a) => done(Report::Demo(demo(&ctx, a)?)),
    }
}

fn read(path: &str) -> Result<String> {
    fs::read_to_string(path).with_context(|| format!("reading {path}"))
}

fn write(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

pub fn load_model(path: &str) -> Result<HybridHmm> {
    serde_json::from_str(&read(path)?).with_context(|| format!("invalid model file {path}"))
}

fn model_json(m: &HybridHmm) -> String {
    let mut s = serde_json::to_string_pretty(m).expect("models serialise");
    s.push('\n');
    s
}

fn load_traces(ctx: &Ctx, path: &str) -> Result<Dataset> {
    let alphabet = ctx.alphabet()?;
    parse_trace_file_with(&read(path)?, path, &alphabet).with_context(|| format!("invalid trace file {path}"))
}

fn formula(ctx: &Ctx, flag: &Option<String>) -> Result<Formula> {
    let text: String = ctx.cfg.require(flag.clone(), "formula")?;
    let f = parse_formula(&text).map_err(|e| UsageError(format!("formula {text:?}: {e}")))?;
    f.check_finite().map_err(|e| UsageError(e.to_string()))?;
    Ok(f)
}

fn smc_error(e: SmcError) -> anyhow::Error {
    match e {
        SmcError::Config(m) => UsageError(m).into(),
        SmcError::Monitor(MonitorError::UnboundedAlways) => UsageError(e.to_string()).into(),
        other => anyhow::Error::new(other),
    }
}

fn train(ctx: &Ctx, a: &TrainArgs) -> Result<TrainReport> {
    let cfg = &ctx.cfg;
    let traces_path: String = cfg.require(a.traces.clone(), "traces")?;
    let out: String = cfg.require(a.out.clone(), "out")?;
    let rhythm: Option<String> = match &a.rhythm {
        Some(r) => Some(r.clone()),
        None => cfg.get("rhythm")?,
    };
    let min = cfg.pick(a.min_states, "min_states", 2)?;
    let max = cfg.pick(a.max_states, "max_states", 6)?;
    if min == 0 || min > max {
        return Err(UsageError(format!("need 1 <= min_states <= max_states, got {min}..{max}")).into());
    }
    let d = BaumWelchConfig::default();
    let bw = BaumWelchConfig {
        max_iter: cfg.pick(a.max_iter, "max_iter", d.max_iter)?,
        tol: cfg.pick(a.tol, "tol", d.tol)?,
        restarts: cfg.pick(a.restarts, "restarts", d.restarts)?,
        seed: ctx.seed,
    };
    if bw.restarts == 0 || bw.max_iter == 0 || !(bw.tol >= 0.0) {
        return Err(UsageError("restarts and max_iter must be positive, tol non-negative".into()).into());
    }

    let ds = load_traces(ctx, &traces_path)?;
    let traces = match &rhythm {
        Some(l) => ds.filter_by_rhythm(l),
        None => ds.segments.iter().map(|s| s.trace.clone()).collect(),
    };
    if traces.is_empty() {
        anyhow::bail!(
            "no segments{} in {traces_path}",
            rhythm.as_ref().map(|l| format!(" labelled {l:?}")).unwrap_or_default()
        );
    }
    let label = rhythm.clone().or_else(|| match ds.labels().as_slice() {
        [only] => Some(only.to_string()),
        _ => None,
    });
    let sel = select_model(&ds.alphabet, &traces, min..=max, &bw).map_err(|e| match e {
        HmmError::TooManyStates { .. } => UsageError(e.to_string()).into(),
        other => anyhow::Error::new(other),
    })?;
    let mut model = sel.model;
    model.metadata.rhythm = label.clone();
    write(Path::new(&out), &model_json(&model))?;
    Ok(TrainReport {
        seed: ctx.seed,
        traces: traces_path,
        rhythm: label,
        segments: traces.len(),
        beats: traces.iter().map(|t| t.len()).sum(),
        model_file: out,
        chosen_states: model.n_states(),
        candidates: sel.candidates,
        model,
    })
}

fn simulate(ctx: &Ctx, a: &SimulateArgs) -> Result<SimulateReport> {
    let cfg = &ctx.cfg;
    let model_path: String = cfg.require(a.model.clone(), "model")?;
    let out: String = cfg.require(a.out.clone(), "out")?;
    let count = cfg.pick(a.count, "count", 1usize)?;
    let duration = cfg.pick(a.duration, "trace_duration", SmcConfig::default().trace_duration)?;
    if count == 0 || !(duration > 0.0 && duration.is_finite()) {
        return Err(UsageError("count must be positive and duration a positive number".into()).into());
    }
    let model = load_model(&model_path)?;
    let ds = fixtures::sample_dataset(&model, count, duration, ctx.seed);
    write(Path::new(&out), &format_trace_file(&ds))?;
    Ok(SimulateReport {
        seed: ctx.seed,
        model_file: model_path,
        out_file: out,
        rhythm: ds.segments[0].rhythm_label.clone(),
        count,
        trace_duration: duration,
        beats: ds.segments.iter().map(|s| s.trace.len()).sum(),
    })
}

fn check(ctx: &Ctx, a: &CheckArgs) -> Result<CheckReport> {
    let model_path: String = ctx.cfg.require(a.model.clone(), "model")?;
    let f = formula(ctx, &a.formula)?;
    let smc = ctx.smc(&a.smc)?;
    let (name, mon) = ctx.monitor(a.smc.monitor.clone())?;
    let model = load_model(&model_path)?;
    let estimate = estimate_probability_with(&model, &f, &smc, mon.as_ref()).map_err(smc_error)?;
    Ok(CheckReport {
        seed: ctx.seed,
        model_file: model_path,
        formula: f.to_string(),
        monitor: name,
        runs: smc.runs,
        trace_duration: smc.trace_duration,
        estimate,
    })
}

fn monitor(ctx: &Ctx, a: &MonitorArgs) -> Result<MonitorReport> {
    let traces_path: String = ctx.cfg.require(a.traces.clone(), "traces")?;
    let f = formula(ctx, &a.formula)?;
    let (name, mon) = ctx.monitor(a.monitor.clone())?;
    let rhythm: Option<String> = match &a.rhythm {
        Some(r) => Some(r.clone()),
        None => ctx.cfg.get("rhythm")?,
    };
    let ds = load_traces(ctx, &traces_path)?;
    let mut verdicts = Vec::new();
    for seg in &ds.segments {
        if rhythm.as_ref().is_some_and(|r| *r != seg.rhythm_label) {
            continue;
        }
        let satisfied = mon
            .evaluate(&f, &seg.trace, 0)
            .with_context(|| format!("record {}", seg.record_id))?;
        verdicts.push(Verdict {
            record_id: seg.record_id.clone(),
            rhythm: seg.rhythm_label.clone(),
            satisfied,
        });
    }
    let satisfied = verdicts.iter().filter(|v| v.satisfied).count();
    let total = verdicts.len();
    Ok(MonitorReport {
        traces: traces_path,
        rhythm,
        formula: f.to_string(),
        monitor: name,
        verdicts,
        satisfied,
        total,
        fraction: if total == 0 { 0.0 } else { satisfied as f64 / total as f64 },
    })
}

fn discriminate(ctx: &Ctx, a: &DiscriminateArgs) -> Result<DiscriminateReport> {
    let pos: String = ctx.cfg.require(a.pos.clone(), "pos")?;
    let neg: String = ctx.cfg.require(a.neg.clone(), "neg")?;
    let f = formula(ctx, &a.formula)?;
    let smc = ctx.smc(&a.smc)?;
    let (name, mon) = ctx.monitor(a.smc.monitor.clone())?;
    let (m1, m2) = (load_model(&pos)?, load_model(&neg)?);
    let result = log_odds_with(&m1, &m2, &f, &smc, mon.as_ref()).map_err(smc_error)?;
    Ok(DiscriminateReport {
        seed: ctx.seed,
        pos_file: pos,
        neg_file: neg,
        formula: f.to_string(),
        monitor: name,
        runs: smc.runs,
        trace_duration: smc.trace_duration,
        result,
    })
}

/// Search settings from flags, the config file and defaults.
pub fn search_config(cfg: &ConfigFile, a: &LearnArgs, seed: u64) -> Result<SearchConfig> {
    let d = SearchConfig::default();
    let alphabet = match &a.alphabet {
        Some(s) => Some(s.clone()),
        None => cfg.get::<String>("search_alphabet")?,
    }
    .map(|s| {
        s.chars()
            .filter(|c| !c.is_whitespace() && *c != ',')
            .map(Symbol)
            .collect::<Vec<_>>()
    })
    .unwrap_or(d.alphabet.clone());
    let final_choice = match cfg.raw("ucb_final") {
        None => d.ucb.final_choice,
        Some("lattice") => FinalChoice::Lattice,
        Some("observed") => FinalChoice::Observed,
        Some(other) => return Err(UsageError(format!("ucb_final must be lattice or observed, got {other:?}")).into()),
    };
    let ucb = UcbConfig {
        grid_points_per_dim: cfg.pick(None, "grid_points_per_dim", d.ucb.grid_points_per_dim)?,
        iterations: cfg.pick(a.iterations, "iterations", d.ucb.iterations)?,
        init_design: match cfg.get::<usize>("init_design")? {
            Some(n) => Some(n),
            None => d.ucb.init_design,
        },
        delta: cfg.pick(None, "delta", d.ucb.delta)?,
        noise_std: cfg.pick(None, "noise_std", d.ucb.noise_std)?,
        seed,
        final_choice,
    };
    let s = SearchConfig {
        alphabet,
        k_start: cfg.pick(a.k_start, "k_start", d.k_start)?,
        k_max: cfg.pick(a.k_max, "k_max", d.k_max)?,
        t_max: cfg.pick(a.t_max, "t_max", d.t_max)?,
        dur_max: cfg.pick(a.dur_max, "dur_max", d.dur_max)?,
        phase1_score_floor: cfg.pick(None, "phase1_score_floor", d.phase1_score_floor)?,
        phase1_psat_floor: cfg.pick(None, "phase1_psat_floor", d.phase1_psat_floor)?,
        escalation_threshold: cfg.pick(None, "escalation_threshold", d.escalation_threshold)?,
        final_psat_floor: cfg.pick(None, "final_psat_floor", d.final_psat_floor)?,
        smc: SmcConfig {
            runs: cfg.pick(a.smc.runs, "runs", d.smc.runs)?,
            trace_duration: cfg.pick(a.smc.duration, "trace_duration", d.smc.trace_duration)?,
            master_seed: seed,
        },
        ucb,
        monitor: cfg.pick(a.smc.monitor.clone(), "monitor", d.monitor.clone())?,
    };
    s.validate().map_err(|e| UsageError(e.to_string()))?;
    Ok(s)
}

fn learn(ctx: &Ctx, a: &LearnArgs) -> Result<LearnReport> {
    let pos: String = ctx.cfg.require(a.pos.clone(), "pos")?;
    let neg: String = ctx.cfg.require(a.neg.clone(), "neg")?;
    let config = search_config(&ctx.cfg, a, ctx.seed)?;
    let (m1, m2) = (load_model(&pos)?, load_model(&neg)?);
    let ev = Evaluator::new(&m1, &m2, &config).map_err(|e| match e {
        SearchError::Config(m) => UsageError(m).into(),
        other => anyhow::Error::new(other),
    })?;
    let search = ev.learn()?;
    Ok(LearnReport {
        seed: ctx.seed,
        pos_file: pos,
        neg_file: neg,
        config,
        search,
    })
}

fn demo(ctx: &Ctx, a: &DemoArgs) -> Result<DemoReport> {
    let out: String = ctx.cfg.require(a.out.clone(), "out")?;
    let root = PathBuf::from(&out);
    for sub in ["models", "traces"] {
        fs::create_dir_all(root.join(sub)).with_context(|| format!("creating {}", root.join(sub).display()))?;
    }
    let mut files = Vec::new();
    let mut all = Dataset::new(fixtures::alphabet());
    for rhythm in fixtures::RHYTHMS {
        let model = fixtures::model(rhythm).expect("known rhythm");
        let rel = format!("models/{rhythm}.json");
        write(&root.join(&rel), &model_json(&model))?;
        files.push(rel);
        let ds = fixtures::demo_dataset(rhythm, ctx.seed).expect("known rhythm");
        let rel = format!("traces/{rhythm}.txt");
        write(&root.join(&rel), &format_trace_file(&ds))?;
        files.push(rel);
        all.segments.extend(ds.segments);
    }
    let rel = "traces/all.txt".to_string();
    write(&root.join(&rel), &format_trace_file(&all))?;
    files.push(rel);
    Ok(DemoReport {
        seed: ctx.seed,
        out_dir: out,
        files,
    })
}
