use serde::Serialize;

use super::{encode, HmmError, HybridHmm};
use crate::trace::TimedTrace;

/// Posterior state marginals of one trace.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PosteriorMarginals {
    /// `gamma[t][s]`: probability of being in state `s` at beat `t`.
    pub gamma: Vec<Vec<f64>>,
    /// `xi[t][r][s]`: probability of the transition `r -> s` between beats
    /// `t` and `t + 1`.
    pub xi: Vec<Vec<Vec<f64>>>,
    pub loglik: f64,
}

/// Scaled forward and backward variables for one encoded trace, stored
/// row-major as `[t * n + s]`.
///
/// Emissions are rescaled per beat by their largest log-density before
/// exponentiation, and the forward variables are renormalised at every step,
/// so long traces and very peaked duration densities stay representable.
pub(crate) struct Pass {
    pub n: usize,
    pub len: usize,
    /// Rescaled emission densities.
    pub emit: Vec<f64>,
    /// Normalised forward variables.
    pub alpha: Vec<f64>,
    /// Backward variables on the same scale as `alpha`.
    pub beta: Vec<f64>,
    /// Per-beat normalisers of the rescaled forward recursion.
    pub scale: Vec<f64>,
    pub loglik: f64,
}

/// Runs the forward recursion (and the backward one when `backward` is set).
/// On failure returns the first beat at which the likelihood vanishes.
pub(crate) fn pass(
    model: &HybridHmm,
    seq: &[(usize, f64)],
    backward: bool,
) -> Result<Pass, usize> {
    let n = model.n_states();
    let len = seq.len();
    let mut emit = vec![0.0; len * n];
    let mut log_shift = vec![0.0; len];
    for (t, &(sym, dur)) in seq.iter().enumerate() {
        let row = &mut emit[t * n..(t + 1) * n];
        let mut best = f64::NEG_INFINITY;
        for (s, e) in row.iter_mut().enumerate() {
            *e = model.emission_log_density_idx(s, sym, dur);
            best = best.max(*e);
        }
        if best == f64::NEG_INFINITY {
            return Err(t);
        }
        for e in row.iter_mut() {
            *e = (*e - best).exp();
        }
        log_shift[t] = best;
    }

    let mut alpha = vec![0.0; len * n];
    let mut scale = vec![0.0; len];
    let mut loglik = 0.0;
    for t in 0..len {
        let mut total = 0.0;
        for s in 0..n {
            let prior = if t == 0 {
                model.pi[s]
            } else {
                let prev = &alpha[(t - 1) * n..t * n];
                (0..n).map(|r| prev[r] * model.trans[r][s]).sum()
            };
            let a = prior * emit[t * n + s];
            alpha[t * n + s] = a;
            total += a;
        }
        if !(total > 0.0) {
            return Err(t);
        }
        for a in &mut alpha[t * n..(t + 1) * n] {
            *a /= total;
        }
        scale[t] = total;
        loglik += total.ln() + log_shift[t];
    }

    let mut beta = Vec::new();
    if backward {
        beta = vec![0.0; len * n];
        for s in 0..n {
            beta[(len - 1) * n + s] = 1.0;
        }
        for t in (0..len.saturating_sub(1)).rev() {
            for r in 0..n {
                let mut acc = 0.0;
                for s in 0..n {
                    acc += model.trans[r][s] * emit[(t + 1) * n + s] * beta[(t + 1) * n + s];
                }
                beta[t * n + r] = acc / scale[t + 1];
            }
        }
    }

    Ok(Pass {
        n,
        len,
        emit,
        alpha,
        beta,
        scale,
        loglik,
    })
}

impl Pass {
    pub fn gamma(&self, t: usize, s: usize) -> f64 {
        self.alpha[t * self.n + s] * self.beta[t * self.n + s]
    }

    /// Unnormalised pairwise posterior; sums to one over `(r, s)` up to rounding.
    pub fn xi(&self, model: &HybridHmm, t: usize, r: usize, s: usize) -> f64 {
        let n = self.n;
        self.alpha[t * n + r] * model.trans[r][s] * self.emit[(t + 1) * n + s] * self.beta[(t + 1) * n + s]
            / self.scale[t + 1]
    }
}

/// Posterior marginals and log-likelihood of a single trace.
pub fn forward_backward(
    model: &HybridHmm,
    trace: &TimedTrace,
) -> Result<PosteriorMarginals, HmmError> {
    let seq = encode(&model.alphabet, std::slice::from_ref(trace))?.remove(0);
    let p = pass(model, &seq, true)
        .map_err(|position| HmmError::ZeroLikelihood { trace: 0, position })?;
    let n = p.n;
    let gamma = (0..p.len)
        .map(|t| normalise((0..n).map(|s| p.gamma(t, s)).collect()))
        .collect();
    let xi = (0..p.len.saturating_sub(1))
        .map(|t| {
            let raw: Vec<Vec<f64>> = (0..n)
                .map(|r| (0..n).map(|s| p.xi(model, t, r, s)).collect())
                .collect();
            let total: f64 = raw.iter().flatten().sum();
            raw.into_iter()
                .map(|row| row.into_iter().map(|x| x / total).collect())
                .collect()
        })
        .collect();
    Ok(PosteriorMarginals {
        gamma,
        xi,
        loglik: p.loglik,
    })
}

fn normalise(mut v: Vec<f64>) -> Vec<f64> {
    let total: f64 = v.iter().sum();
    for x in &mut v {
        *x /= total;
    }
    v
}

/// Sum of per-trace log-likelihoods. A trace the model cannot generate
/// contributes `-inf`.
pub fn log_likelihood(model: &HybridHmm, traces: &[TimedTrace]) -> Result<f64, HmmError> {
    let seqs = encode(&model.alphabet, traces)?;
    Ok(seqs
        .iter()
        .map(|seq| match pass(model, seq, false) {
            Ok(p) => p.loglik,
            Err(_) => f64::NEG_INFINITY,
        })
        .sum())
}
