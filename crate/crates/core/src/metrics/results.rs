//! Tracker result files and their scoring.
//!
//! Results are sequence-level JSON documents so any tracker, including
//! external ones, can be scored by the same harness.

use super::bbox::{center_error, iou};
use super::curves::{precision_curve, success_auc, MetricCurve};
use crate::error::{Error, Result};
use crate::geom::Bbox;
use serde::{Deserialize, Serialize};
use std::fs;
use std::path::Path;

/// One tracker's boxes for one sequence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrackResult {
    pub sequence: String,
    pub modality: String,
    pub boxes: Vec<[f64; 4]>,
}

impl TrackResult {
    pub fn new(sequence: impl Into<String>, modality: impl Into<String>, boxes: &[Bbox]) -> Self {
        TrackResult {
            sequence: sequence.into(),
            modality: modality.into(),
            boxes: boxes.iter().map(|b| (*b).into()).collect(),
        }
    }

    pub fn boxes(&self) -> Vec<Bbox> {
        self.boxes.iter().map(|b| Bbox::from(*b)).collect()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string_pretty(self)?;
        fs::write(path, json + "\n")?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Format(format!("cannot read result {}: {e}", path.display())))?;
        let result: TrackResult = serde_json::from_str(&text)
            .map_err(|e| Error::Format(format!("bad result file {}: {e}", path.display())))?;
        Ok(result)
    }
}

/// Per-sequence scores: overlap and precision curves plus raw per-frame
/// numbers for pooled aggregation.
#[derive(Debug, Clone)]
pub struct SequenceScore {
    pub success: MetricCurve,
    pub precision: MetricCurve,
    pub ious: Vec<f64>,
    pub errors: Vec<f64>,
}

/// Score predicted boxes against ground truth, frame by frame.
pub fn score_boxes(pred: &[Bbox], gt: &[Bbox]) -> Result<SequenceScore> {
    if pred.len() != gt.len() {
        return Err(Error::Config(format!(
            "{} predicted boxes against {} ground-truth boxes",
            pred.len(),
            gt.len()
        )));
    }
    if pred.is_empty() {
        return Err(Error::Empty("scored sequence".into()));
    }
    let ious: Vec<f64> = pred.iter().zip(gt).map(|(p, g)| iou(p, g)).collect();
    let errors: Vec<f64> = pred.iter().zip(gt).map(|(p, g)| center_error(p, g)).collect();
    Ok(SequenceScore {
        success: success_auc(&ious)?,
        precision: precision_curve(&errors)?,
        ious,
        errors,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn result_files_round_trip() {
        let boxes = vec![Bbox::new(1.5, 2.25, 10.0, 8.0), Bbox::new(3.0, 4.0, 9.0, 7.5)];
        let result = TrackResult::new("seq-a", "VIS", &boxes);
        let dir = std::env::temp_dir().join("stk-results-test");
        fs::create_dir_all(&dir).unwrap();
        let path = dir.join("seq-a.json");
        result.save(&path).unwrap();
        let back = TrackResult::load(&path).unwrap();
        assert_eq!(back, result);
        assert_eq!(back.boxes()[0].x, 1.5);
        fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn unknown_result_keys_are_rejected() {
        let text = r#"{"sequence":"s","modality":"VIS","boxes":[],"fps":30}"#;
        assert!(serde_json::from_str::<TrackResult>(text).is_err());
    }

    #[test]
    fn oracle_boxes_score_perfectly() {
        let gt = vec![Bbox::new(0.0, 0.0, 4.0, 4.0), Bbox::new(5.0, 5.0, 4.0, 4.0)];
        let score = score_boxes(&gt, &gt).unwrap();
        assert_eq!(score.success.summary, 1.0);
        assert_eq!(score.precision.summary, 1.0);
    }

    #[test]
    fn length_mismatch_is_an_error() {
        let gt = vec![Bbox::new(0.0, 0.0, 4.0, 4.0)];
        assert!(score_boxes(&[], &gt).is_err());
    }
}
