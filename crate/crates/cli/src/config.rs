//! Flat `key = value` configuration files.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::str::FromStr;

use crate::UsageError;

/// Every accepted key with a one-line description.
pub const KEYS: &[(&str, &str)] = &[
    ("seed", "master seed for every random choice"),
    ("jobs", "worker threads"),
    ("monitor", "satisfaction checker: dp or naive"),
    ("runs", "simulated traces per probability estimate"),
    ("trace_duration", "length of each simulated trace in seconds"),
    ("grid_points_per_dim", "optimiser lattice points per parameter"),
    ("iterations", "optimiser acquisitions after the initial design"),
    ("init_design", "random initial evaluations (default 5 per parameter)"),
    ("delta", "confidence parameter of the acquisition rule"),
    ("noise_std", "assumed objective noise, in log-odds units"),
    ("ucb_final", "where the optimum is reported: lattice or observed"),
    ("search_alphabet", "symbols used in templates, e.g. NV"),
    ("k_start", "first pattern length"),
    ("k_max", "last pattern length"),
    ("t_max", "upper bound of the persistence parameter T"),
    ("dur_max", "upper bound of every duration parameter"),
    ("phase1_score_floor", "minimum log-odds to keep a single pattern"),
    ("phase1_psat_floor", "minimum first-model probability to keep a single pattern"),
    ("escalation_threshold", "best single-pattern log-odds needed to stop growing k"),
    ("final_psat_floor", "first-model probability preferred in the final pick"),
    ("trace_alphabet", "annotation codes recognised in trace files"),
    ("min_states", "smallest model size tried by train"),
    ("max_states", "largest model size tried by train"),
    ("restarts", "EM restarts per model size"),
    ("max_iter", "EM iteration cap"),
    ("tol", "EM convergence tolerance on the log-likelihood"),
    ("traces", "trace file"),
    ("model", "model file"),
    ("pos", "model file of the rhythm to characterise"),
    ("neg", "model file of the reference rhythm"),
    ("out", "output path"),
    ("formula", "formula text"),
    ("rhythm", "rhythm label filter or label"),
    ("count", "number of traces to simulate"),
];

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ConfigFile {
    values: BTreeMap<String, String>,
}

impl ConfigFile {
    pub fn parse(text: &str) -> Result<Self, UsageError> {
        let mut values = BTreeMap::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let err = |m: String| UsageError(format!("config line {}: {m}", n + 1));
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| err(format!("expected key = value, got {line:?}")))?;
            let (k, v) = (k.trim(), v.trim());
            if !KEYS.iter().any(|(name, _)| *name == k) {
                return Err(err(format!("unknown key {k:?}")));
            }
            if values.insert(k.to_string(), v.to_string()).is_some() {
                return Err(err(format!("duplicate key {k:?}")));
            }
        }
        Ok(ConfigFile { values })
    }

    pub fn raw(&self, key: &str) -> Option<&str> {
        debug_assert!(KEYS.iter().any(|(k, _)| *k == key), "undeclared key {key}");
        self.values.get(key).map(String::as_str)
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<Option<T>, UsageError>
    where
        T::Err: Display,
    {
        self.raw(key)
            .map(|v| {
                v.parse()
                    .map_err(|e| UsageError(format!("config key {key}: cannot parse {v:?}: {e}")))
            })
            .transpose()
    }

    /// Flag value, else config value, else `default`.
    pub fn pick<T: FromStr>(&self, flag: Option<T>, key: &str, default: T) -> Result<T, UsageError>
    where
        T::Err: Display,
    {
        Ok(match flag {
            Some(v) => v,
            None => self.get(key)?.unwrap_or(default),
        })
    }

    /// Like [`Self::pick`] for values without a default.
    pub fn require<T: FromStr>(&self, flag: Option<T>, key: &str) -> Result<T, UsageError>
    where
        T::Err: Display,
    {
        match flag {
            Some(v) => Ok(v),
            None => self
                .get(key)?
                .ok_or_else(|| UsageError(format!("missing --{} (or config key {key})", key.replace('_', "-")))),
        }
    }
}

/// Seed precedence: flag, config file, environment variable, zero.
pub fn resolve_seed(flag: Option<u64>, cfg: &ConfigFile, env: Option<&str>) -> Result<u64, UsageError> {
    if let Some(s) = flag {
        return Ok(s);
    }
    if let Some(s) = cfg.get("seed")? {
        return Ok(s);
    }
    match env {
        Some(v) => v
            .trim()
            .parse()
            .map_err(|e| UsageError(format!("RHYTHM_MINER_SEED: cannot parse {v:?}: {e}"))),
        None => Ok(0),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_comments_and_rejects_unknown() {
        let c = ConfigFile::parse("# defaults\nruns = 200  # fewer\n\nt_max=7\n").unwrap();
        assert_eq!(c.get::<usize>("runs").unwrap(), Some(200));
        assert_eq!(c.get::<f64>("t_max").unwrap(), Some(7.0));
        assert_eq!(c.get::<usize>("k_max").unwrap(), None);
        let e = ConfigFile::parse("runs = 1\nbogus = 2\n").unwrap_err();
        assert!(e.0.contains("line 2") && e.0.contains("bogus"));
        assert!(ConfigFile::parse("runs 5").is_err());
        assert!(ConfigFile::parse("runs=1\nruns=2").is_err());
        let bad = ConfigFile::parse("runs = many").unwrap();
        assert!(bad.get::<usize>("runs").is_err());
    }

    #[test]
    fn precedence() {
        let c = ConfigFile::parse("runs = 200\nseed = 5").unwrap();
        assert_eq!(c.pick(Some(10usize), "runs", 1000).unwrap(), 10);
        assert_eq!(c.pick(None, "runs", 1000).unwrap(), 200);
        assert_eq!(c.pick(None, "k_max", 4usize).unwrap(), 4);
        assert_eq!(resolve_seed(Some(1), &c, Some("9")).unwrap(), 1);
        assert_eq!(resolve_seed(None, &c, Some("9")).unwrap(), 5);
        let empty = ConfigFile::default();
        assert_eq!(resolve_seed(None, &empty, Some("9")).unwrap(), 9);
        assert_eq!(resolve_seed(None, &empty, None).unwrap(), 0);
        assert!(resolve_seed(None, &empty, Some("x")).is_err());
        assert!(empty.require::<String>(None, "model").unwrap_err().0.contains("--model"));
    }
}
