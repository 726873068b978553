//! Directed sensor graph: Gaussian-kernel adjacency from pairwise road
//! distances, first/second-order neighbor weights, row-normalized
//! transition matrices, and the forward/reverse random walks used by the
//! diffusion layers.

use crate::error::{input_err, Error, Result};
use crate::tensor::{self, Tensor};
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::path::Path;

/// One directed distance record, in meters.
#[derive(Clone, Debug, PartialEq)]
pub struct DistanceRecord {
    pub from: String,
    pub to: String,
    pub cost: f64,
}

/// Directed weighted sensor graph.
///
/// `adjacency[i][j]` weights the edge i→j; entries live in [0, 1] and the
/// diagonal is 1 when built from distances (self-distance 0).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SensorGraph {
    node_ids: Vec<String>,
    adjacency: Tensor,
}

impl SensorGraph {
    pub fn new(node_ids: Vec<String>, adjacency: Tensor) -> Result<Self> {
        let n = node_ids.len();
        if n == 0 {
            return input_err("graph needs at least one node");
        }
        if adjacency.shape() != [n, n] {
            return input_err(format!(
                "adjacency shape {:?} does not match {n} node ids",
                adjacency.shape()
            ));
        }
        if adjacency.data().iter().any(|&w| !(0.0..=1.0).contains(&w)) {
            return input_err("adjacency entries must lie in [0, 1]");
        }
        let mut seen = HashMap::new();
        for (i, id) in node_ids.iter().enumerate() {
            if seen.insert(id.clone(), i).is_some() {
                return input_err(format!("duplicate node id {id:?}"));
            }
        }
        Ok(Self {
            node_ids,
            adjacency,
        })
    }

    pub fn node_count(&self) -> usize {
        self.node_ids.len()
    }

    pub fn node_ids(&self) -> &[String] {
        &self.node_ids
    }

    pub fn adjacency(&self) -> &Tensor {
        &self.adjacency
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.node_ids.iter().position(|n| n == id)
    }
}

/// The four neighborhood perspectives: first/second-order in/out.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum NeighborKind {
    I1,
    O1,
    I2,
    O2,
}

impl NeighborKind {
    pub const ALL: [NeighborKind; 4] = [
        NeighborKind::I1,
        NeighborKind::O1,
        NeighborKind::I2,
        NeighborKind::O2,
    ];

    pub fn label(self) -> &'static str {
        match self {
            NeighborKind::I1 => "I1",
            NeighborKind::O1 => "O1",
            NeighborKind::I2 => "I2",
            NeighborKind::O2 => "O2",
        }
    }
}

/// Neighbor weight matrices with their row-normalized transitions and
/// weighted degree vectors.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TransitionSet {
    pub w_i1: Tensor,
    pub w_o1: Tensor,
    pub w_i2: Tensor,
    pub w_o2: Tensor,
    pub t_i1: Tensor,
    pub t_o1: Tensor,
    pub t_i2: Tensor,
    pub t_o2: Tensor,
    /// Weighted in-degrees (row sums of `w_i1`), self excluded.
    pub d_i: Vec<f64>,
    /// Weighted out-degrees (row sums of `w_o1`), self excluded.
    pub d_o: Vec<f64>,
}

impl TransitionSet {
    pub fn weights(&self, kind: NeighborKind) -> &Tensor {
        match kind {
            NeighborKind::I1 => &self.w_i1,
            NeighborKind::O1 => &self.w_o1,
            NeighborKind::I2 => &self.w_i2,
            NeighborKind::O2 => &self.w_o2,
        }
    }

    pub fn transitions(&self, kind: NeighborKind) -> &Tensor {
        match kind {
            NeighborKind::I1 => &self.t_i1,
            NeighborKind::O1 => &self.t_o1,
            NeighborKind::I2 => &self.t_i2,
            NeighborKind::O2 => &self.t_o2,
        }
    }

    pub fn node_count(&self) -> usize {
        self.w_i1.rows()
    }
}

/// Forward (`D_O⁻¹W`) and reverse (`D_I⁻¹Wᵀ`) random-walk matrices over the
/// full adjacency, diagonal included. Distinct from [`TransitionSet`],
/// which excludes self-loops.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RandomWalks {
    pub forward: Tensor,
    pub reverse: Tensor,
}

impl RandomWalks {
    pub fn node_count(&self) -> usize {
        self.forward.rows()
    }
}

fn validate_distances(records: &[DistanceRecord]) -> Result<()> {
    for r in records {
        if !r.cost.is_finite() {
            return input_err(format!(
                "non-finite distance {} for {} -> {}",
                r.cost, r.from, r.to
            ));
        }
        if r.cost < 0.0 {
            return input_err(format!(
                "negative distance {} for {} -> {}",
                r.cost, r.from, r.to
            ));
        }
    }
    Ok(())
}

/// Builds the Gaussian-kernel adjacency over the ids in `records`, in order
/// of first appearance. Pairs absent from `records` are treated as beyond
/// the cutoff. `W[i][j] = exp(−d²/σ²)` when `d ≤ κ`, else 0; the diagonal
/// is 1 (self-distance 0).
pub fn build_adjacency(records: &[DistanceRecord], sigma: f64, kappa: f64) -> Result<SensorGraph> {
    let mut ids = Vec::new();
    let mut seen = HashMap::new();
    for r in records {
        for id in [&r.from, &r.to] {
            if !seen.contains_key(id.as_str()) {
                seen.insert(id.clone(), ids.len());
                ids.push(id.clone());
            }
        }
    }
    build_adjacency_for(&ids, records, sigma, kappa)
}

/// Same as [`build_adjacency`] but with an explicit node order; records
/// mentioning ids outside `node_ids` are rejected.
pub fn build_adjacency_for(
    node_ids: &[String],
    records: &[DistanceRecord],
    sigma: f64,
    kappa: f64,
) -> Result<SensorGraph> {
    if !(sigma > 0.0) || !sigma.is_finite() {
        return input_err(format!("sigma must be a positive real, got {sigma}"));
    }
    if !(kappa > 0.0) || !kappa.is_finite() {
        return input_err(format!("kappa must be a positive real, got {kappa}"));
    }
    validate_distances(records)?;
    let n = node_ids.len();
    if n == 0 {
        return input_err("empty node set");
    }
    let index: HashMap<&str, usize> = node_ids
        .iter()
        .enumerate()
        .map(|(i, id)| (id.as_str(), i))
        .collect();
    if index.len() != n {
        return input_err("duplicate node ids");
    }
    let mut w = Tensor::zeros(&[n, n]);
    for i in 0..n {
        w.set2(i, i, 1.0);
    }
    for r in records {
        let i = *index
            .get(r.from.as_str())
            .ok_or_else(|| Error::Input(format!("unknown sensor id {:?}", r.from)))?;
        let j = *index
            .get(r.to.as_str())
            .ok_or_else(|| Error::Input(format!("unknown sensor id {:?}", r.to)))?;
        if i == j {
            continue; // self-distance is 0 by definition; diagonal stays 1
        }
        let weight = if r.cost <= kappa {
            (-(r.cost * r.cost) / (sigma * sigma)).exp()
        } else {
            0.0
        };
        w.set2(i, j, weight);
    }
    SensorGraph::new(node_ids.to_vec(), w)
}

/// Copy of `t` with the diagonal forced to zero.
fn zero_diagonal(t: &Tensor) -> Tensor {
    let n = t.rows();
    let mut out = t.clone();
    for i in 0..n {
        out.set2(i, i, 0.0);
    }
    out
}

/// Row-normalizes `w`; zero-sum rows stay all-zero. Returns the transition
/// matrix and the row sums (weighted degrees).
fn row_normalize(w: &Tensor) -> (Tensor, Vec<f64>) {
    let (n, m) = (w.rows(), w.cols());
    let mut out = w.clone();
    let mut degrees = vec![0.0; n];
    for i in 0..n {
        let row = &mut out.data_mut()[i * m..(i + 1) * m];
        let sum: f64 = row.iter().sum();
        degrees[i] = sum;
        if sum > 0.0 {
            for v in row.iter_mut() {
                *v /= sum;
            }
        }
    }
    (out, degrees)
}

/// Derives the four neighbor weight matrices and their transitions.
///
/// First-order weights drop the self-loop (diagonal zeroed); second-order
/// weights are products of first-order weights with the diagonal zeroed
/// again before normalization.
pub fn build_transitions(graph: &SensorGraph) -> Result<TransitionSet> {
    let w = graph.adjacency();
    let w_o1 = zero_diagonal(w);
    let w_i1 = zero_diagonal(&w.transposed()?);
    let w_o2 = zero_diagonal(&tensor::matmul(&w_o1, &w_o1)?);
    let w_i2 = zero_diagonal(&tensor::matmul(&w_i1, &w_i1)?);
    let (t_i1, d_i) = row_normalize(&w_i1);
    let (t_o1, d_o) = row_normalize(&w_o1);
    let (t_i2, _) = row_normalize(&w_i2);
    let (t_o2, _) = row_normalize(&w_o2);
    Ok(TransitionSet {
        w_i1,
        w_o1,
        w_i2,
        w_o2,
        t_i1,
        t_o1,
        t_i2,
        t_o2,
        d_i,
        d_o,
    })
}

/// Weighted neighborhood average of `signal` under the selected transition
/// matrix: rows with no neighbors of that kind come back as zero.
pub fn aggregate(
    transitions: &TransitionSet,
    kind: NeighborKind,
    signal: &Tensor,
) -> Result<Tensor> {
    let n = transitions.node_count();
    if signal.rank() != 2 || signal.rows() != n {
        return input_err(format!(
            "signal shape {:?} does not match {n} graph nodes",
            signal.shape()
        ));
    }
    tensor::matmul(transitions.transitions(kind), signal)
}

/// Builds the diffusion random walks from the full adjacency (self-loops
/// kept, so rows are never empty for a distance-built graph).
pub fn build_random_walks(graph: &SensorGraph) -> Result<RandomWalks> {
    let (forward, _) = row_normalize(graph.adjacency());
    let (reverse, _) = row_normalize(&graph.adjacency().transposed()?);
    Ok(RandomWalks { forward, reverse })
}

/// Reads a distance table: UTF-8 CSV, header `from,to,cost`, one directed
/// pair per row, cost in meters.
pub fn load_distance_csv(path: &Path) -> Result<Vec<DistanceRecord>> {
    let mut reader = csv::Reader::from_path(path)?;
    let headers = reader.headers()?.clone();
    let want = ["from", "to", "cost"];
    let got: Vec<&str> = headers.iter().map(|h| h.trim()).collect();
    if got != want {
        return Err(Error::Data(format!(
            "distance file must have header `from,to,cost`, found {got:?}"
        )));
    }
    let mut records = Vec::new();
    for (line, row) in reader.records().enumerate() {
        let row = row?;
        if row.len() != 3 {
            return Err(Error::Data(format!(
                "distance row {} has {} fields, want 3",
                line + 2,
                row.len()
            )));
        }
        let cost: f64 = row[2].trim().parse().map_err(|_| {
            Error::Data(format!(
                "distance row {}: cost {:?} is not a number",
                line + 2,
                &row[2]
            ))
        })?;
        records.push(DistanceRecord {
            from: row[0].trim().to_string(),
            to: row[1].trim().to_string(),
            cost,
        });
    }
    Ok(records)
}
