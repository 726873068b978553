//! The 30 causal variables: speed variation of a node and its four
//! aggregated neighborhood embeddings over six consecutive slices.

use crate::data::SpeedDataset;
use crate::error::{input_err, Result};
use crate::graph::{NeighborKind, TransitionSet};
use crate::tensor::Tensor;
use serde::{Deserialize, Serialize};

/// Variation slices per sample.
pub const SPAN_STEPS: usize = 6;
/// Perspectives per slice: the node plus four neighborhood embeddings.
pub const PERSPECTIVES: [&str; 5] = ["X", "I1", "O1", "I2", "O2"];
/// Columns per sample row.
pub const NUM_VARIABLES: usize = SPAN_STEPS * PERSPECTIVES.len();

/// Column names in fixed order: all perspectives at slice 0, then slice 1,
/// and so on ("X_t0", "I1_t0", ... "O2_t5").
pub fn variable_names() -> Vec<String> {
    let mut names = Vec::with_capacity(NUM_VARIABLES);
    for t in 0..SPAN_STEPS {
        for p in PERSPECTIVES {
            names.push(format!("{p}_t{t}"));
        }
    }
    names
}

/// Adjacent differences: `out[t] = series[t+1] − series[t]`.
pub fn speed_variation(series: &[f64]) -> Result<Vec<f64>> {
    if series.len() < 2 {
        return input_err(format!(
            "speed variation needs at least 2 values, got {}",
            series.len()
        ));
    }
    Ok(series.windows(2).map(|w| w[1] - w[0]).collect())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum BatchSource {
    Random,
    Event,
    /// Rows read back from files, sampling mode unknown.
    External,
}

impl BatchSource {
    pub fn label(self) -> &'static str {
        match self {
            BatchSource::Random => "random",
            BatchSource::Event => "event",
            BatchSource::External => "external",
        }
    }
}

/// A stack of extracted sample rows, S×30.
#[derive(Clone, Debug, PartialEq)]
pub struct CausalVariableBatch {
    pub rows: Tensor,
    pub variable_names: Vec<String>,
    pub source: BatchSource,
}

impl CausalVariableBatch {
    pub fn new(rows: Tensor, source: BatchSource) -> Result<Self> {
        if rows.rank() != 2 || rows.cols() != NUM_VARIABLES {
            return input_err(format!(
                "batch rows must be S×{NUM_VARIABLES}, got {:?}",
                rows.shape()
            ));
        }
        Ok(Self {
            rows,
            variable_names: variable_names(),
            source,
        })
    }

    pub fn from_rows(rows: &[Vec<f64>], source: BatchSource) -> Result<Self> {
        if rows.is_empty() {
            return input_err("batch needs at least one row");
        }
        Self::new(Tensor::from_rows(rows)?, source)
    }

    pub fn len(&self) -> usize {
        self.rows.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Nodes whose observations a sample at `node` depends on: the node itself
/// plus every sensor with nonzero weight in any of its four neighborhoods.
pub fn required_nodes(transitions: &TransitionSet, node: usize) -> Vec<usize> {
    let n = transitions.node_count();
    let mut needed = vec![false; n];
    needed[node] = true;
    for kind in NeighborKind::ALL {
        let w = transitions.weights(kind);
        for j in 0..n {
            if w.at2(node, j) != 0.0 {
                needed[j] = true;
            }
        }
    }
    (0..n).filter(|&j| needed[j]).collect()
}

/// True when every required sensor is observed over `t ..= t+SPAN_STEPS`.
pub fn can_extract(
    dataset: &SpeedDataset,
    transitions: &TransitionSet,
    node: usize,
    t: usize,
) -> bool {
    if node >= dataset.node_count() || t + SPAN_STEPS >= dataset.len() {
        return false;
    }
    required_nodes(transitions, node)
        .iter()
        .all(|&j| (t..=t + SPAN_STEPS).all(|s| dataset.is_observed(s, j)))
}

/// One 30-vector sample: for each slice, the speed variation of the node
/// and of the four weighted neighborhood means. Unobserved values in the
/// required span reject the sample; they are never imputed.
pub fn extract_variables(
    dataset: &SpeedDataset,
    transitions: &TransitionSet,
    node: usize,
    t: usize,
) -> Result<Vec<f64>> {
    let n = dataset.node_count();
    if transitions.node_count() != n {
        return input_err(format!(
            "transitions cover {} nodes, dataset has {n}",
            transitions.node_count()
        ));
    }
    if node >= n {
        return input_err(format!("node {node} out of range {n}"));
    }
    if t + SPAN_STEPS >= dataset.len() {
        return input_err(format!(
            "span {t}..={} exceeds dataset length {}",
            t + SPAN_STEPS,
            dataset.len()
        ));
    }
    if !can_extract(dataset, transitions, node, t) {
        return Err(crate::error::Error::Data(format!(
            "sample at node {node}, t {t} has unobserved values in its neighborhood span"
        )));
    }

    // Embeddings per slice: own speed plus the four transition-weighted means.
    let stamps = SPAN_STEPS + 1;
    let mut emb = vec![[0.0; 5]; stamps];
    for (si, e) in emb.iter_mut().enumerate() {
        let s = t + si;
        e[0] = dataset.speed_at(s, node);
        for (ki, kind) in NeighborKind::ALL.iter().enumerate() {
            let trans = transitions.transitions(*kind);
            let mut acc = 0.0;
            for j in 0..n {
                let w = trans.at2(node, j);
                if w != 0.0 {
                    acc += w * dataset.speed_at(s, j);
                }
            }
            e[ki + 1] = acc;
        }
    }

    let mut out = Vec::with_capacity(NUM_VARIABLES);
    for si in 0..SPAN_STEPS {
        // Perspective order X, I1, O1, I2, O2; kinds start at index 1.
        out.push(emb[si + 1][0] - emb[si][0]);
        for ki in 1..5 {
            out.push(emb[si + 1][ki] - emb[si][ki]);
        }
    }
    Ok(out)
}
