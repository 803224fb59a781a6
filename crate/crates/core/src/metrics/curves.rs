//! Success and precision curves.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

/// Number of threshold samples on both curve kinds.
pub const CURVE_POINTS: usize = 51;

/// Distance threshold (pixels) behind the headline precision number.
pub const DP_TAU: f64 = 20.0;

/// A sampled threshold curve plus its headline summary value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricCurve {
    pub thresholds: Vec<f64>,
    pub values: Vec<f64>,
    pub summary: f64,
}

impl MetricCurve {
    pub fn new(thresholds: Vec<f64>, values: Vec<f64>, summary: f64) -> Result<Self> {
        if thresholds.len() != values.len() {
            return Err(Error::Config(format!(
                "curve with {} thresholds and {} values",
                thresholds.len(),
                values.len()
            )));
        }
        if thresholds.is_empty() {
            return Err(Error::Empty("metric curve".into()));
        }
        if thresholds.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(Error::Config("curve thresholds must be strictly ascending".into()));
        }
        if values.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::Domain("curve values must lie in [0, 1]".into()));
        }
        Ok(MetricCurve { thresholds, values, summary })
    }

    pub fn len(&self) -> usize {
        self.thresholds.len()
    }

    pub fn is_empty(&self) -> bool {
        self.thresholds.is_empty()
    }
}

/// Success curve over 51 overlap thresholds 0.00..1.00; value(t) is the
/// fraction of frames with IoU >= t and the summary is the mean of the
/// values (the AUC on this uniform grid).
pub fn success_auc(ious: &[f64]) -> Result<MetricCurve> {
    if ious.is_empty() {
        return Err(Error::Empty("success input".into()));
    }
    if let Some(bad) = ious.iter().find(|v| !(0.0..=1.0).contains(*v)) {
        return Err(Error::Domain(format!("IoU {bad} outside [0, 1]")));
    }
    let n = ious.len() as f64;
    let thresholds: Vec<f64> = (0..CURVE_POINTS).map(|i| i as f64 / 50.0).collect();
    let values: Vec<f64> = thresholds
        .iter()
        .map(|&t| ious.iter().filter(|&&v| v >= t).count() as f64 / n)
        .collect();
    let summary = values.iter().sum::<f64>() / CURVE_POINTS as f64;
    MetricCurve::new(thresholds, values, summary)
}

/// Fraction of frames whose center error is at most `tau` pixels.
pub fn dp_at(errors: &[f64], tau: f64) -> Result<f64> {
    if errors.is_empty() {
        return Err(Error::Empty("precision input".into()));
    }
    if let Some(bad) = errors.iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
        return Err(Error::Domain(format!("center error {bad} is not a distance")));
    }
    if !(tau >= 0.0) {
        return Err(Error::Domain(format!("threshold {tau} is not a distance")));
    }
    Ok(errors.iter().filter(|&&e| e <= tau).count() as f64 / errors.len() as f64)
}

/// Precision curve over 51 pixel thresholds 0..50; the summary is the
/// value at 20 pixels.
pub fn precision_curve(errors: &[f64]) -> Result<MetricCurve> {
    if errors.is_empty() {
        return Err(Error::Empty("precision input".into()));
    }
    let thresholds: Vec<f64> = (0..CURVE_POINTS).map(|i| i as f64).collect();
    let values: Vec<f64> =
        thresholds.iter().map(|&t| dp_at(errors, t)).collect::<Result<_>>()?;
    let summary = dp_at(errors, DP_TAU)?;
    MetricCurve::new(thresholds, values, summary)
}
