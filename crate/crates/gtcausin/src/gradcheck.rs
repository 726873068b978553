//! Finite-difference verification of analytic gradients.

use crate::error::{input_err, Error, Result};
use crate::par;

/// Compares the analytic gradient of `f` at `point` against central
/// differences, coordinate by coordinate, and returns the worst relative
/// error `|analytic − numeric| / max(1, |analytic|, |numeric|)`.
///
/// `f` maps a flat point to its scalar value and full analytic gradient.
pub fn grad_check<F>(f: &F, point: &[f64], epsilon: f64) -> Result<f64>
where
    F: Fn(&[f64]) -> Result<(f64, Vec<f64>)> + Sync,
{
    if !(1e-7..=1e-3).contains(&epsilon) {
        return input_err(format!(
            "finite-difference step must be in [1e-7, 1e-3], got {epsilon}"
        ));
    }
    let (value, analytic) = f(point)?;
    if !value.is_finite() {
        return Err(Error::Numeric(format!("non-finite value {value} at point")));
    }
    if analytic.len() != point.len() {
        return input_err(format!(
            "gradient has {} coordinates, point has {}",
            analytic.len(),
            point.len()
        ));
    }
    let errors: Vec<Result<f64>> = par::map_range(point.len(), |i| {
        let mut plus = point.to_vec();
        plus[i] += epsilon;
        let mut minus = point.to_vec();
        minus[i] -= epsilon;
        let (fp, _) = f(&plus)?;
        let (fm, _) = f(&minus)?;
        if !fp.is_finite() || !fm.is_finite() {
            return Err(Error::Numeric(
                "non-finite value during finite differencing".into(),
            ));
        }
        let numeric = (fp - fm) / (2.0 * epsilon);
        let a = analytic[i];
        Ok((a - numeric).abs() / a.abs().max(numeric.abs()).max(1.0))
    });
    let mut max_rel = 0.0f64;
    for e in errors {
        max_rel = max_rel.max(e?);
    }
    Ok(max_rel)
}
