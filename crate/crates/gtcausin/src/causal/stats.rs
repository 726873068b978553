//! Correlation structure of causal-variable batches: pooled Pearson
//! matrices, the neighbor-link summary, and distribution moments.

use serde::{Deserialize, Serialize};

use crate::causal::variables::{CausalVariableBatch, NUM_VARIABLES, PERSPECTIVES, SPAN_STEPS};
use crate::error::{input_err, Result};
use crate::par;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum RelationKind {
    Pearson,
    ExternalIcd,
}

/// 30×30 relation strengths between the causal variables.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RelationMatrix {
    pub c: Tensor,
    pub kind: RelationKind,
    /// Batches pooled into this matrix (1 for imported ones).
    pub repeats: usize,
    /// Columns whose variance was zero; their off-diagonal entries are 0.
    pub zero_variance: Vec<usize>,
}

/// Accumulated sufficient statistics for a Pearson matrix.
#[derive(Clone)]
struct Moments {
    count: f64,
    sum: Vec<f64>,
    cross: Vec<f64>,
}

impl Moments {
    fn zero() -> Self {
        Self {
            count: 0.0,
            sum: vec![0.0; NUM_VARIABLES],
            cross: vec![0.0; NUM_VARIABLES * NUM_VARIABLES],
        }
    }

    fn absorb(mut self, other: Moments) -> Self {
        self.count += other.count;
        for (a, b) in self.sum.iter_mut().zip(&other.sum) {
            *a += b;
        }
        for (a, b) in self.cross.iter_mut().zip(&other.cross) {
            *a += b;
        }
        self
    }
}

fn batch_moments(batch: &CausalVariableBatch) -> Moments {
    let mut m = Moments::zero();
    let k = NUM_VARIABLES;
    m.count = batch.len() as f64;
    let data = batch.rows.data();
    for row in data.chunks(k) {
        for i in 0..k {
            m.sum[i] += row[i];
            for j in i..k {
                m.cross[i * k + j] += row[i] * row[j];
            }
        }
    }
    m
}

/// Pearson correlation over all rows of all batches pooled together.
/// Per-batch sufficient statistics are computed in parallel and reduced in
/// order. Zero-variance columns get zero off-diagonal entries and are
/// flagged; the diagonal is pinned to 1.
pub fn pearson_matrix(batches: &[CausalVariableBatch]) -> Result<RelationMatrix> {
    let total: usize = batches.iter().map(|b| b.len()).sum();
    if total < 2 {
        return input_err(format!("pearson needs at least 2 pooled rows, got {total}"));
    }
    let m = par::map_reduce(batches, Moments::zero(), batch_moments, Moments::absorb);
    let k = NUM_VARIABLES;
    let n = m.count;
    let mean: Vec<f64> = m.sum.iter().map(|s| s / n).collect();
    let var: Vec<f64> = (0..k)
        .map(|i| (m.cross[i * k + i] / n - mean[i] * mean[i]).max(0.0))
        .collect();
    let zero_variance: Vec<usize> = (0..k).filter(|&i| var[i] <= 0.0).collect();

    let mut c = vec![0.0; k * k];
    for i in 0..k {
        c[i * k + i] = 1.0;
        for j in (i + 1)..k {
            let denom = (var[i] * var[j]).sqrt();
            let r = if denom > 0.0 {
                let cov = m.cross[i * k + j] / n - mean[i] * mean[j];
                (cov / denom).clamp(-1.0, 1.0)
            } else {
                0.0
            };
            c[i * k + j] = r;
            c[j * k + i] = r;
        }
    }
    Ok(RelationMatrix {
        c: Tensor::new(&[k, k], c)?,
        kind: RelationKind::Pearson,
        repeats: batches.len(),
        zero_variance,
    })
}

/// Mean absolute correlations of the variable groups the relation matrix
/// is read for: the same-slice {X, I1, O1} triangle, the same-slice
/// {X↔I2, X↔O2} pairs, and same-perspective lag-1/lag-2/lag-3 links.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NeighborLinkReport {
    pub first_order_triangle: f64,
    pub second_order_pairs: f64,
    pub lag1_self: f64,
    pub lag2_self: f64,
    pub lag3_self: f64,
}

fn var_index(slice: usize, perspective: usize) -> usize {
    slice * PERSPECTIVES.len() + perspective
}

pub fn neighbor_link_report(relation: &RelationMatrix) -> Result<NeighborLinkReport> {
    let c = &relation.c;
    if c.shape() != [NUM_VARIABLES, NUM_VARIABLES] {
        return input_err(format!(
            "relation matrix must be 30×30, got {:?}",
            c.shape()
        ));
    }
    let mean_abs = |pairs: &[(usize, usize)]| -> f64 {
        let s: f64 = pairs.iter().map(|&(i, j)| c.at2(i, j).abs()).sum();
        s / pairs.len() as f64
    };

    // Perspective indices: 0 = X, 1 = I1, 2 = O1, 3 = I2, 4 = O2.
    let mut triangle = Vec::new();
    let mut second = Vec::new();
    for t in 0..SPAN_STEPS {
        triangle.push((var_index(t, 0), var_index(t, 1)));
        triangle.push((var_index(t, 0), var_index(t, 2)));
        triangle.push((var_index(t, 1), var_index(t, 2)));
        second.push((var_index(t, 0), var_index(t, 3)));
        second.push((var_index(t, 0), var_index(t, 4)));
    }
    let mut lag1 = Vec::new();
    let mut lag2 = Vec::new();
    let mut lag3 = Vec::new();
    for p in 0..PERSPECTIVES.len() {
        for t in 0..SPAN_STEPS - 1 {
            lag1.push((var_index(t, p), var_index(t + 1, p)));
        }
        for t in 0..SPAN_STEPS - 2 {
            lag2.push((var_index(t, p), var_index(t + 2, p)));
        }
        for t in 0..SPAN_STEPS - 3 {
            lag3.push((var_index(t, p), var_index(t + 3, p)));
        }
    }
    Ok(NeighborLinkReport {
        first_order_triangle: mean_abs(&triangle),
        second_order_pairs: mean_abs(&second),
        lag1_self: mean_abs(&lag1),
        lag2_self: mean_abs(&lag2),
        lag3_self: mean_abs(&lag3),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HistogramBin {
    pub lo: f64,
    pub hi: f64,
    pub count: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DistributionSummary {
    pub histogram: Vec<HistogramBin>,
    pub mean: f64,
    pub std: f64,
    pub skewness: f64,
    pub excess_kurtosis: f64,
}

/// Fixed-bin histogram plus the first four standardized moments.
/// Population std; skewness and kurtosis are 0 for constant input.
pub fn distribution_summary(values: &[f64], bins: usize) -> Result<DistributionSummary> {
    if values.len() < 2 {
        return input_err("distribution summary needs at least 2 values");
    }
    if bins == 0 {
        return input_err("need at least one histogram bin");
    }
    if values.iter().any(|v| !v.is_finite()) {
        return input_err("distribution summary requires finite values");
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let m2 = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let m3 = values.iter().map(|v| (v - mean).powi(3)).sum::<f64>() / n;
    let m4 = values.iter().map(|v| (v - mean).powi(4)).sum::<f64>() / n;
    let std = m2.sqrt();
    let (skewness, excess_kurtosis) = if std > 0.0 {
        (m3 / m2.powf(1.5), m4 / (m2 * m2) - 3.0)
    } else {
        (0.0, 0.0)
    };

    let lo = values.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let histogram = if lo == hi {
        vec![HistogramBin {
            lo,
            hi,
            count: values.len(),
        }]
    } else {
        let width = (hi - lo) / bins as f64;
        let mut counts = vec![0usize; bins];
        for &v in values {
            let idx = (((v - lo) / width) as usize).min(bins - 1);
            counts[idx] += 1;
        }
        counts
            .into_iter()
            .enumerate()
            .map(|(i, count)| HistogramBin {
                lo: lo + width * i as f64,
                hi: lo + width * (i + 1) as f64,
                count,
            })
            .collect()
    };
    Ok(DistributionSummary {
        histogram,
        mean,
        std,
        skewness,
        excess_kurtosis,
    })
}
