//! Seeded batch sampling of causal variables, either uniformly over the
//! dataset or restricted to detected speed events.

use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::causal::events::{detect_events, Event, EventParams};
use crate::causal::variables::{
    can_extract, extract_variables, BatchSource, CausalVariableBatch, SPAN_STEPS,
};
use crate::data::SpeedDataset;
use crate::error::{input_err, Result};
use crate::graph::TransitionSet;

/// Attempts per requested row before a batch is declared partial.
const DRAW_FACTOR: usize = 50;

#[derive(Clone, Debug)]
pub enum SampleMode {
    Random,
    Event(EventParams),
}

/// Draws `repeats` batches of up to `batch_size` rows each. Random mode
/// samples (node, t) uniformly; event mode samples among detected events.
/// Returns the batches plus warnings for partial or empty draws.
pub fn sample_batches(
    dataset: &SpeedDataset,
    transitions: &TransitionSet,
    batch_size: usize,
    repeats: usize,
    mode: SampleMode,
    seed: u64,
) -> Result<(Vec<CausalVariableBatch>, Vec<String>)> {
    if batch_size == 0 || repeats == 0 {
        return input_err("batch_size and repeats must be at least 1");
    }
    if dataset.len() <= SPAN_STEPS {
        return input_err(format!(
            "dataset has {} rows, sampling needs more than {SPAN_STEPS}",
            dataset.len()
        ));
    }
    if transitions.node_count() != dataset.node_count() {
        return input_err("transitions do not match the dataset's node count");
    }

    let mut warnings = Vec::new();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (source, pool) = match &mode {
        SampleMode::Random => (BatchSource::Random, None),
        SampleMode::Event(params) => {
            let (events, mut event_warnings) = detect_events(dataset, transitions, params)?;
            warnings.append(&mut event_warnings);
            let usable: Vec<Event> = events
                .into_iter()
                .filter(|e| can_extract(dataset, transitions, e.node, e.time))
                .collect();
            if usable.is_empty() {
                warnings.push("no usable events detected; event batches are empty".into());
                return Ok((Vec::new(), warnings));
            }
            (BatchSource::Event, Some(usable))
        }
    };

    let n = dataset.node_count();
    let t_max = dataset.len() - SPAN_STEPS; // exclusive upper bound for t
    let mut batches = Vec::with_capacity(repeats);
    for batch_idx in 0..repeats {
        let mut rows = Vec::with_capacity(batch_size);
        match &pool {
            None => {
                let mut attempts = 0usize;
                while rows.len() < batch_size && attempts < batch_size * DRAW_FACTOR {
                    attempts += 1;
                    let node = rng.gen_range(0..n);
                    let t = rng.gen_range(0..t_max);
                    if can_extract(dataset, transitions, node, t) {
                        rows.push(extract_variables(dataset, transitions, node, t)?);
                    }
                }
            }
            Some(events) => {
                for _ in 0..batch_size {
                    let e = events.choose(&mut rng).expect("pool is non-empty");
                    rows.push(extract_variables(dataset, transitions, e.node, e.time)?);
                }
            }
        }
        if rows.is_empty() {
            warnings.push(format!(
                "batch {batch_idx}: no valid samples found; batch skipped"
            ));
            continue;
        }
        if rows.len() < batch_size {
            warnings.push(format!(
                "batch {batch_idx}: only {} of {batch_size} samples were extractable",
                rows.len()
            ));
        }
        batches.push(CausalVariableBatch::from_rows(&rows, source)?);
    }
    Ok((batches, warnings))
}
