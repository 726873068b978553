//! Event detection: sudden, lasting spikes in the weighted neighborhood
//! speed variation, found by scanning seeded mini-batches and ranked by
//! peak magnitude.

use std::collections::BTreeSet;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::causal::variables::{can_extract, extract_variables, SPAN_STEPS};
use crate::data::SpeedDataset;
use crate::error::{input_err, Result};
use crate::graph::TransitionSet;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EventParams {
    /// Threshold in training-split standard deviations of the signal.
    pub sigma_threshold: f64,
    /// Steps the excursion must persist.
    pub min_duration: usize,
    /// Candidate (node, t) draws used to scan for events.
    pub scan_samples: usize,
    /// Keep at most this many events after ranking.
    pub max_events: usize,
    pub seed: u64,
}

impl Default for EventParams {
    fn default() -> Self {
        Self {
            sigma_threshold: 3.0,
            min_duration: 3,
            scan_samples: 20_000,
            max_events: 200,
            seed: 1,
        }
    }
}

/// A detected excursion: the sample anchor and its peak signed signal.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub node: usize,
    pub time: usize,
    pub magnitude: f64,
}

/// Neighborhood variation signal per slice: mean of the variation of the
/// node and of its first-order in/out embeddings (columns X, I1, O1).
fn neighborhood_signal(row: &[f64]) -> Vec<f64> {
    (0..SPAN_STEPS)
        .map(|t0| (row[t0 * 5] + row[t0 * 5 + 1] + row[t0 * 5 + 2]) / 3.0)
        .collect()
}

/// Longest run of consecutive slices with |signal| above `threshold`,
/// along with the signed peak over those runs.
fn sustained_peak(signal: &[f64], threshold: f64) -> (usize, f64) {
    let mut best_run = 0usize;
    let mut run = 0usize;
    let mut peak = 0.0f64;
    let mut run_peak = 0.0f64;
    for &v in signal {
        if v.abs() > threshold {
            run += 1;
            if v.abs() > run_peak.abs() {
                run_peak = v;
            }
            if run > best_run || (run == best_run && run_peak.abs() > peak.abs()) {
                best_run = run;
                peak = run_peak;
            }
        } else {
            run = 0;
            run_peak = 0.0;
        }
    }
    (best_run, peak)
}

/// Scans seeded mini-batches of (node, t) anchors, computes the weighted
/// neighborhood variation signal, and returns anchors whose excursion
/// beyond `sigma_threshold`·σ lasts at least `min_duration` slices, ranked
/// by absolute peak. σ is the signal's standard deviation over the scan,
/// restricted to the training split when boundaries are present.
pub fn detect_events(
    dataset: &SpeedDataset,
    transitions: &TransitionSet,
    params: &EventParams,
) -> Result<(Vec<Event>, Vec<String>)> {
    if params.min_duration == 0 || params.min_duration > SPAN_STEPS {
        return input_err(format!("min_duration must lie in 1..={SPAN_STEPS}"));
    }
    if !(params.sigma_threshold.is_finite() && params.sigma_threshold > 0.0) {
        return input_err("sigma_threshold must be positive");
    }
    if dataset.len() <= SPAN_STEPS {
        return input_err(format!(
            "dataset has {} rows, event detection needs more than {SPAN_STEPS}",
            dataset.len()
        ));
    }

    let mut warnings = Vec::new();
    let t_limit = match dataset.split {
        Some(s) => s.train_end.min(dataset.len()),
        None => {
            warnings.push("no split boundaries; scanning the whole series for events".into());
            dataset.len()
        }
    };
    if t_limit <= SPAN_STEPS {
        return input_err("training range is shorter than the sample span");
    }
    let t_max = t_limit - SPAN_STEPS;
    let n = dataset.node_count();

    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let mut anchors: Vec<(usize, usize, Vec<f64>)> = Vec::new();
    let mut seen = BTreeSet::new();
    let mut sum = 0.0;
    let mut sum_sq = 0.0;
    let mut count = 0usize;
    for _ in 0..params.scan_samples {
        let node = rng.gen_range(0..n);
        let t = rng.gen_range(0..t_max);
        if !can_extract(dataset, transitions, node, t) {
            continue;
        }
        let row = extract_variables(dataset, transitions, node, t)?;
        let signal = neighborhood_signal(&row);
        for &v in &signal {
            sum += v;
            sum_sq += v * v;
            count += 1;
        }
        if seen.insert((node, t)) {
            anchors.push((node, t, signal));
        }
    }
    if count == 0 {
        warnings.push("no extractable anchors during the event scan".into());
        return Ok((Vec::new(), warnings));
    }
    let mean = sum / count as f64;
    let variance = (sum_sq / count as f64 - mean * mean).max(0.0);
    let sigma = variance.sqrt();
    let threshold = params.sigma_threshold * sigma;

    let mut events = Vec::new();
    for (node, t, signal) in anchors {
        let (run, peak) = sustained_peak(&signal, threshold);
        if run >= params.min_duration && peak != 0.0 {
            events.push(Event {
                node,
                time: t,
                magnitude: peak,
            });
        }
    }
    events.sort_by(|a, b| {
        b.magnitude
            .abs()
            .partial_cmp(&a.magnitude.abs())
            .expect("finite magnitudes")
            .then(a.node.cmp(&b.node))
            .then(a.time.cmp(&b.time))
    });
    events.truncate(params.max_events);
    Ok((events, warnings))
}
