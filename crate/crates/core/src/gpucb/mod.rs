//! Noisy black-box maximisation over a box by Gaussian-process upper
//! confidence bounds, with acquisitions restricted to a regular lattice.

mod gp;

use rand::Rng as _;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::{rng_from, tag};

pub use gp::{GpModel, JITTER, SIGNAL_VAR};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GpucbError {
    #[error("invalid parameter box: {0}")]
    Box(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("objective failed at {theta:?}: {message}")]
    Objective { theta: Vec<f64>, message: String },
    #[error("numerical failure: {0}")]
    Numerical(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dim {
    pub name: String,
    pub lo: f64,
    pub hi: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamBox {
    dims: Vec<Dim>,
}

impl ParamBox {
    pub fn new(dims: Vec<(String, f64, f64)>) -> Result<Self, GpucbError> {
        if dims.is_empty() {
            return Err(GpucbError::Box("at least one dimension required".into()));
        }
        let mut out: Vec<Dim> = Vec::with_capacity(dims.len());
        for (name, lo, hi) in dims {
            if !(lo < hi && lo.is_finite() && hi.is_finite()) {
                return Err(GpucbError::Box(format!("{name}: need finite lo < hi, got [{lo}, {hi}]")));
            }
            if out.iter().any(|d| d.name == name) {
                return Err(GpucbError::Box(format!("duplicate dimension {name}")));
            }
            out.push(Dim { name, lo, hi });
        }
        Ok(ParamBox { dims: out })
    }

    pub fn dims(&self) -> &[Dim] {
        &self.dims
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.dims.len() && x.iter().zip(&self.dims).all(|(v, d)| d.lo <= *v && *v <= d.hi)
    }

    /// Coordinates of every lattice point, `per_dim` evenly spaced values per
    /// side including both ends, with the first dimension varying slowest.
    pub fn lattice(&self, per_dim: usize) -> Vec<Vec<f64>> {
        let d = self.dims.len();
        let size = per_dim.pow(d as u32);
        (0..size)
            .map(|mut idx| {
                let mut x = vec![0.0; d];
                for k in (0..d).rev() {
                    let step = idx % per_dim;
                    idx /= per_dim;
                    x[k] = self.lattice_coord(k, step, per_dim);
                }
                x
            })
            .collect()
    }

    fn lattice_coord(&self, k: usize, step: usize, per_dim: usize) -> f64 {
        let dim = &self.dims[k];
        if step + 1 == per_dim {
            dim.hi
        } else {
            dim.lo + (dim.hi - dim.lo) * step as f64 / (per_dim - 1) as f64
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UcbConfig {
    pub grid_points_per_dim: usize,
    pub iterations: usize,
    /// Number of uniformly random initial evaluations; `None` means five per
    /// dimension.
    pub init_design: Option<usize>,
    pub delta: f64,
    /// Observation noise standard deviation, in objective units.
    pub noise_std: f64,
    pub seed: u64,
    pub final_choice: FinalChoice,
}

/// Where the reported maximiser of the final posterior mean is sought.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FinalChoice {
    /// Every lattice point.
    #[default]
    Lattice,
    /// Only points that were actually evaluated. Safer for objectives with
    /// cliffs, where the smooth posterior can overshoot into unvisited cells.
    Observed,
}

impl Default for UcbConfig {
    fn default() -> Self {
        UcbConfig {
            grid_points_per_dim: 20,
            iterations: 60,
            init_design: None,
            delta: 0.05,
            noise_std: 0.1,
            seed: 0,
            final_choice: FinalChoice::Lattice,
        }
    }
}

impl UcbConfig {
    pub fn init_points(&self, dims: usize) -> usize {
        self.init_design.unwrap_or(5 * dims)
    }

    pub fn validate(&self) -> Result<(), GpucbError> {
        let bad = |m: &str| Err(GpucbError::Config(m.into()));
        if self.grid_points_per_dim < 2 {
            return bad("grid_points_per_dim must be at least 2");
        }
        if self.init_design == Some(0) {
            return bad("init_design must be at least 1");
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return bad("delta must lie in (0, 1)");
        }
        if !(self.noise_std >= 0.0 && self.noise_std.is_finite()) {
            return bad("noise_std must be non-negative");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub theta: Vec<f64>,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptResult {
    pub theta_star: Vec<f64>,
    /// Posterior mean at `theta_star`.
    pub value_star: f64,
    pub history: Vec<Evaluation>,
    pub evaluations: usize,
}

pub fn gp_fit(
    points: &[Vec<f64>],
    values: &[f64],
    bounds: &ParamBox,
    noise_std: f64,
) -> Result<GpModel, GpucbError> {
    GpModel::fit(points, values, bounds, noise_std)
}

pub fn gp_posterior(gp: &GpModel, theta: &[f64]) -> (f64, f64) {
    gp.posterior(theta)
}

/// Exploration weight for acquisition round `t` over `lattice_size` arms.
pub fn beta(t: usize, lattice_size: usize, delta: f64) -> f64 {
    let t = t as f64;
    2.0 * (lattice_size as f64 * t * t * std::f64::consts::PI.powi(2) / (6.0 * delta)).ln()
}

/// Maximises a noisy objective. The objective may fail; the first failure
/// aborts the run and is reported with its input.
pub fn optimize<F, E>(mut objective: F, bounds: &ParamBox, cfg: &UcbConfig) -> Result<OptResult, GpucbError>
where
    F: FnMut(&[f64]) -> Result<f64, E>,
    E: std::fmt::Display,
{
    cfg.validate()?;
    let d = bounds.dims().len();
    let lattice = bounds.lattice(cfg.grid_points_per_dim);
    let mut rng = rng_from(&[cfg.seed, tag("gp-ucb")]);
    let mut history: Vec<Evaluation> = Vec::new();

    let mut eval = |theta: Vec<f64>, history: &mut Vec<Evaluation>| -> Result<(), GpucbError> {
        let value = objective(&theta).map_err(|e| GpucbError::Objective {
            theta: theta.clone(),
            message: e.to_string(),
        })?;
        if !value.is_finite() {
            return Err(GpucbError::Objective {
                theta,
                message: format!("non-finite value {value}"),
            });
        }
        history.push(Evaluation { theta, value });
        Ok(())
    };

    for _ in 0..cfg.init_points(d) {
        let theta: Vec<f64> = bounds
            .dims()
            .iter()
            .map(|dim| rng.random_range(dim.lo..=dim.hi))
            .collect();
        eval(theta, &mut history)?;
    }

    for t in 1..=cfg.iterations {
        let gp = fit_history(&history, bounds, cfg.noise_std)?;
        let (mean, var) = gp.batch_standardised(&lattice);
        let w = beta(t, lattice.len(), cfg.delta).sqrt();
        let pick = argmax(mean.iter().zip(&var).map(|(m, v)| m + w * v.sqrt()));
        eval(lattice[pick].clone(), &mut history)?;
    }

    let gp = fit_history(&history, bounds, cfg.noise_std)?;
    let candidates = match cfg.final_choice {
        FinalChoice::Lattice => lattice,
        FinalChoice::Observed => history.iter().map(|e| e.theta.clone()).collect(),
    };
    let (mean, _) = gp.batch_standardised(&candidates);
    let best = argmax(mean.iter().copied());
    let (offset, scale) = gp.standardisation();
    Ok(OptResult {
        theta_star: candidates[best].clone(),
        value_star: offset + scale * mean[best],
        evaluations: history.len(),
        history,
    })
}

fn fit_history(history: &[Evaluation], bounds: &ParamBox, noise_std: f64) -> Result<GpModel, GpucbError> {
    let points: Vec<Vec<f64>> = history.iter().map(|e| e.theta.clone()).collect();
    let values: Vec<f64> = history.iter().map(|e| e.value).collect();
    GpModel::fit(&points, &values, bounds, noise_std)
}

/// Index of the largest value; the lowest index wins ties.
fn argmax(values: impl Iterator<Item = f64>) -> usize {
    let mut best = 0;
    let mut top = f64::NEG_INFINITY;
    for (i, v) in values.enumerate() {
        if v > top {
            top = v;
            best = i;
        }
    }
    best
}
