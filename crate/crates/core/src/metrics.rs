//! Landmark error metrics in raw-image pixels.

use crate::error::{Result, ZianError};

pub const DEFAULT_SDR_THRESHOLDS: [f64; 3] = [5.0, 10.0, 20.0];

fn check(preds: &[(f64, f64)], gts: &[(f64, f64)]) -> Result<()> {
    if preds.len() != gts.len() {
        return Err(ZianError::LengthMismatch {
            preds: preds.len(),
            gts: gts.len(),
        });
    }
    if preds.is_empty() {
        return Err(ZianError::Invalid("metrics need at least one sample".into()));
    }
    Ok(())
}

pub fn distance(a: (f64, f64), b: (f64, f64)) -> f64 {
    (a.0 - b.0).hypot(a.1 - b.1)
}

pub fn errors(preds: &[(f64, f64)], gts: &[(f64, f64)]) -> Result<Vec<f64>> {
    check(preds, gts)?;
    Ok(preds.iter().zip(gts).map(|(&p, &g)| distance(p, g)).collect())
}

/// Mean Euclidean distance, summed in sample order.
pub fn avg_l2(preds: &[(f64, f64)], gts: &[(f64, f64)]) -> Result<f64> {
    let e = errors(preds, gts)?;
    Ok(e.iter().sum::<f64>() / e.len() as f64)
}

/// Percentage of samples with error ≤ `threshold` (inclusive).
pub fn sdr(preds: &[(f64, f64)], gts: &[(f64, f64)], threshold: f64) -> Result<f64> {
    if !(threshold > 0.0) {
        return Err(ZianError::Invalid(format!("SDR threshold must be positive, got {threshold}")));
    }
    let e = errors(preds, gts)?;
    Ok(sdr_from_errors(&e, threshold))
}

pub(crate) fn sdr_from_errors(errors: &[f64], threshold: f64) -> f64 {
    let hits = errors.iter().filter(|&&d| d <= threshold).count();
    100.0 * hits as f64 / errors.len() as f64
}
