use rand::distr::weighted::WeightedIndex;
use rand_distr::{Distribution, Normal};

use super::HybridHmm;
use crate::rng::{rng_from, Rng};
use crate::trace::{Beat, TimedTrace};

/// Samples a trace lasting at least `duration_s` seconds from a seed.
pub fn simulate(model: &HybridHmm, duration_s: f64, seed: u64) -> TimedTrace {
    simulate_with(model, duration_s, &mut rng_from(&[seed]))
}

/// Samples beats until the cumulative duration first reaches `duration_s`;
/// the beat that crosses the horizon is kept. Durations are drawn from the
/// state's Gaussian and redrawn until positive.
pub fn simulate_with(model: &HybridHmm, duration_s: f64, rng: &mut Rng) -> TimedTrace {
    Sampler::new(model).sample(duration_s, rng)
}

/// Precomputed sampling tables for repeated simulation from one model.
pub(crate) struct Sampler<'a> {
    model: &'a HybridHmm,
    init: WeightedIndex<f64>,
    trans: Vec<WeightedIndex<f64>>,
    emit: Vec<WeightedIndex<f64>>,
    dur: Vec<Normal<f64>>,
}

impl<'a> Sampler<'a> {
    pub fn new(model: &'a HybridHmm) -> Self {
        let weighted = |p: &[f64]| WeightedIndex::new(p).expect("validated distribution");
        Sampler {
            model,
            init: weighted(&model.pi),
            trans: model.trans.iter().map(|r| weighted(r)).collect(),
            emit: model.sym_probs.iter().map(|r| weighted(r)).collect(),
            dur: model
                .dur_mean
                .iter()
                .zip(&model.dur_std)
                .map(|(&m, &s)| Normal::new(m, s).expect("validated deviation"))
                .collect(),
        }
    }

    pub fn sample(&self, duration_s: f64, rng: &mut Rng) -> TimedTrace {
        let symbols = self.model.alphabet.symbols();
        let mut beats = Vec::new();
        let mut total = 0.0;
        let mut state = self.init.sample(rng);
        loop {
            let symbol = symbols[self.emit[state].sample(rng)];
            let duration = loop {
                let d = self.dur[state].sample(rng);
                if d > 0.0 {
                    break d;
                }
            };
            beats.push(Beat { symbol, duration });
            total += duration;
            if total >= duration_s {
                break;
            }
            state = self.trans[state].sample(rng);
        }
        TimedTrace::new(beats)
    }
}
