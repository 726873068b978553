//! Masked forecast metrics over observed target entries, grouped per
//! evaluation horizon.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{input_err, Error, Result};
use crate::tensor::Tensor;

/// Running sums for the three metrics over one set of (pred, truth, mask)
/// entries. Associative, so partial accumulators can be merged.
#[derive(Clone, Copy, Debug, Default)]
pub struct MetricAccumulator {
    pub abs_sum: f64,
    pub sq_sum: f64,
    pub count: f64,
    /// Relative-error terms, restricted to nonzero truth.
    pub ape_sum: f64,
    pub ape_count: f64,
    pub zero_truth_skipped: usize,
}

impl MetricAccumulator {
    pub fn add(&mut self, pred: f64, truth: f64, mask: f64) {
        if mask == 0.0 {
            return;
        }
        let d = pred - truth;
        self.abs_sum += d.abs();
        self.sq_sum += d * d;
        self.count += 1.0;
        if truth == 0.0 {
            self.zero_truth_skipped += 1;
        } else {
            self.ape_sum += (d / truth).abs();
            self.ape_count += 1.0;
        }
    }

    pub fn merge(mut self, other: MetricAccumulator) -> MetricAccumulator {
        self.abs_sum += other.abs_sum;
        self.sq_sum += other.sq_sum;
        self.count += other.count;
        self.ape_sum += other.ape_sum;
        self.ape_count += other.ape_count;
        self.zero_truth_skipped += other.zero_truth_skipped;
        self
    }

    pub fn absorb_tensors(&mut self, pred: &Tensor, truth: &Tensor, mask: &Tensor) -> Result<()> {
        if pred.shape() != truth.shape() || pred.shape() != mask.shape() {
            return input_err(format!(
                "metric shapes differ: pred {:?}, truth {:?}, mask {:?}",
                pred.shape(),
                truth.shape(),
                mask.shape()
            ));
        }
        for ((p, t), m) in pred.data().iter().zip(truth.data()).zip(mask.data()) {
            self.add(*p, *t, *m);
        }
        Ok(())
    }

    pub fn mae(&self) -> Result<f64> {
        if self.count == 0.0 {
            return Err(Error::Numeric("no observed entries; MAE undefined".into()));
        }
        Ok(self.abs_sum / self.count)
    }

    pub fn rmse(&self) -> Result<f64> {
        if self.count == 0.0 {
            return Err(Error::Numeric("no observed entries; RMSE undefined".into()));
        }
        Ok((self.sq_sum / self.count).sqrt())
    }

    /// Mean absolute percentage error as a fraction, not percent.
    pub fn mape(&self) -> Result<f64> {
        if self.ape_count == 0.0 {
            return Err(Error::Numeric(
                "no observed entries with nonzero truth; MAPE undefined".into(),
            ));
        }
        Ok(self.ape_sum / self.ape_count)
    }
}

fn pooled(pred: &Tensor, truth: &Tensor, mask: &Tensor) -> Result<MetricAccumulator> {
    let mut acc = MetricAccumulator::default();
    acc.absorb_tensors(pred, truth, mask)?;
    Ok(acc)
}

pub fn masked_mae(pred: &Tensor, truth: &Tensor, mask: &Tensor) -> Result<f64> {
    pooled(pred, truth, mask)?.mae()
}

pub fn masked_rmse(pred: &Tensor, truth: &Tensor, mask: &Tensor) -> Result<f64> {
    pooled(pred, truth, mask)?.rmse()
}

pub fn masked_mape(pred: &Tensor, truth: &Tensor, mask: &Tensor) -> Result<f64> {
    pooled(pred, truth, mask)?.mape()
}

/// Metrics at one forecast offset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HorizonMetrics {
    pub horizon_steps: usize,
    pub horizon_minutes: usize,
    pub mae: f64,
    pub rmse: f64,
    /// Fraction, not percent.
    pub mape: f64,
    /// Observed target entries at this horizon.
    pub count: usize,
    /// Observed entries excluded from MAPE because truth was 0.
    pub mape_skipped: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub variant: String,
    pub split: String,
    pub horizons: Vec<HorizonMetrics>,
    pub seed: u64,
    pub config_digest: String,
}

impl MetricsReport {
    pub fn horizon(&self, steps: usize) -> Option<&HorizonMetrics> {
        self.horizons.iter().find(|h| h.horizon_steps == steps)
    }
}

/// Relative gain of `ours` over `base`: (base − ours) / base.
pub fn improvement(base: f64, ours: f64) -> Result<f64> {
    if base == 0.0 {
        return Err(Error::Numeric("improvement against a zero baseline".into()));
    }
    Ok((base - ours) / base)
}

/// Percentage with one decimal, matching the reporting convention.
pub fn format_improvement(base: f64, ours: f64) -> Result<String> {
    Ok(format!("{:.1}%", improvement(base, ours)? * 100.0))
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(bytes);
    hasher
        .finalize()
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}
