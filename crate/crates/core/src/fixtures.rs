//! Constructed ground-truth models for four rhythms and the synthetic
//! datasets sampled from them. Parameter values are hand-picked to exhibit
//! each rhythm's beat structure; they are not estimated from recordings.

use crate::hmm::{HybridHmm, ModelMetadata};
use crate::rng::{mix, rng_from, tag};
use crate::trace::{Alphabet, Dataset, LabeledSegment};

pub const RHYTHMS: [&str; 4] = ["bigeminy", "trigeminy", "tachycardia", "normal"];
pub const TRACES_PER_RHYTHM: usize = 100;
pub const TRACE_SECONDS: f64 = 15.0;

/// The default annotation alphabet, so that models trained on the sampled
/// files are directly comparable with the fixtures.
pub fn alphabet() -> Alphabet {
    Alphabet::default()
}

const SINUS: (f64, f64) = (0.8, 0.05);
const PAUSE: (f64, f64) = (1.2, 0.05);
const ECTOPIC: (f64, f64) = (0.6, 0.15);

const N: [f64; 6] = [1.0, 0.0, 0.0, 0.0, 0.0, 0.0];
const V: [f64; 6] = [0.0, 1.0, 0.0, 0.0, 0.0, 0.0];

/// Emission over N and V only.
fn emit(p_n: f64) -> Vec<f64> {
    vec![p_n, 1.0 - p_n, 0.0, 0.0, 0.0, 0.0]
}

fn build(
    rhythm: &str,
    note: &str,
    pi: Vec<f64>,
    trans: Vec<Vec<f64>>,
    sym_probs: Vec<Vec<f64>>,
    dur: &[(f64, f64)],
) -> HybridHmm {
    let mut m = HybridHmm::new(
        alphabet(),
        pi,
        trans,
        sym_probs,
        dur.iter().map(|d| d.0).collect(),
        dur.iter().map(|d| d.1).collect(),
    )
    .expect("fixture parameters are valid");
    m.metadata = ModelMetadata {
        rhythm: Some(rhythm.into()),
        note: Some(format!("constructed fixture, not fitted to data: {note}")),
        ..Default::default()
    };
    m
}

/// Two states alternating with probability 0.95: an ectopic state emitting
/// V (0.5 s) and a sinus state emitting N (0.8 s), each 95% faithful.
pub fn bigeminy() -> HybridHmm {
    build(
        "bigeminy",
        "alternating ectopic/sinus states",
        vec![0.5, 0.5],
        vec![vec![0.05, 0.95], vec![0.95, 0.05]],
        vec![emit(0.05), emit(0.95)],
        &[(0.5, 0.05), (0.8, 0.05)],
    )
}

/// Three-state cycle: an ectopic beat followed by two long sinus beats.
pub fn trigeminy() -> HybridHmm {
    let (stay, other) = (0.998, 0.001);
    build(
        "trigeminy",
        "cycle of one ectopic and two sinus beats",
        vec![1.0 / 3.0; 3],
        vec![
            vec![other, stay, other],
            vec![other, other, stay],
            vec![stay, other, other],
        ],
        vec![V.to_vec(), N.to_vec(), N.to_vec()],
        &[ECTOPIC, PAUSE, PAUSE],
    )
}

/// A near-absorbing ectopic state firing every 0.4 s, entered quickly from a
/// slow sinus state.
pub fn tachycardia() -> HybridHmm {
    build(
        "tachycardia",
        "sustained fast ectopic run",
        vec![0.95, 0.05],
        vec![vec![0.999, 0.001], vec![0.5, 0.5]],
        vec![V.to_vec(), N.to_vec()],
        &[(0.4, 0.04), (1.2, 0.05)],
    )
}

/// Sinus rhythm (0.8 s) with occasional runs of two to four ectopic beats
/// of variable length. A run is framed by long sinus beats (1.2 s) on both
/// sides; very rarely it starts from, or returns straight to, a regular one.
///
/// States: sinus, pre-run, four run positions, post-run.
pub fn normal() -> HybridHmm {
    let (to_pre, to_run, skip_pause) = (0.12, 0.0002, 0.008);
    let exit = [(6, 1.0 - skip_pause), (0, skip_pause)];
    let row = |entries: &[(usize, f64)]| {
        let mut r = vec![0.0; 7];
        for &(j, p) in entries {
            r[j] += p;
        }
        r
    };
    let scaled = |p: f64| exit.map(|(j, q)| (j, p * q));
    build(
        "normal",
        "sinus rhythm with rare ectopic runs of 2-4 beats",
        vec![0.9, 0.1, 0.0, 0.0, 0.0, 0.0, 0.0],
        vec![
            row(&[(0, 1.0 - to_pre - to_run), (1, to_pre), (2, to_run)]),
            row(&[(2, 1.0)]),
            row(&[(3, 1.0)]),
            row(&[&[(4, 0.75)][..], &scaled(0.25)].concat()),
            row(&[&[(5, 0.5)][..], &scaled(0.5)].concat()),
            row(&exit),
            row(&[(0, 1.0)]),
        ],
        vec![N.to_vec(), N.to_vec(), V.to_vec(), V.to_vec(), V.to_vec(), V.to_vec(), N.to_vec()],
        &[SINUS, PAUSE, ECTOPIC, ECTOPIC, ECTOPIC, ECTOPIC, PAUSE],
    )
}

pub fn model(rhythm: &str) -> Option<HybridHmm> {
    match rhythm {
        "bigeminy" => Some(bigeminy()),
        "trigeminy" => Some(trigeminy()),
        "tachycardia" => Some(tachycardia()),
        "normal" => Some(normal()),
        _ => None,
    }
}

/// `count` traces of `seconds` each, labelled with the model's rhythm.
pub fn sample_dataset(model: &HybridHmm, count: usize, seconds: f64, seed: u64) -> Dataset {
    let rhythm = model.metadata.rhythm.clone().unwrap_or_else(|| "unknown".into());
    let mut rng = rng_from(&[seed, tag(&rhythm)]);
    let mut ds = Dataset::new(model.alphabet.clone());
    for i in 0..count {
        ds.segments.push(LabeledSegment {
            record_id: format!("{rhythm}-{i:03}"),
            rhythm_label: rhythm.clone(),
            trace: crate::hmm::simulate_with(model, seconds, &mut rng),
        });
    }
    ds
}

/// The standard demo dataset for one rhythm.
pub fn demo_dataset(rhythm: &str, seed: u64) -> Option<Dataset> {
    let m = model(rhythm)?;
    Some(sample_dataset(&m, TRACES_PER_RHYTHM, TRACE_SECONDS, mix(&[seed, tag("demo")])))
}
