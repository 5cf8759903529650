//! Disparity error rates and evaluation reports.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::viterbi::DisparityMap;

/// Fraction of valid ground-truth pixels where the prediction is invalid or
/// differs by more than `tau`.
pub fn evaluate_disparity(pred: &DisparityMap, gt: &DisparityMap, tau: f64) -> Result<f64> {
    if (pred.width(), pred.height()) != (gt.width(), gt.height()) {
        return Err(Error::DimensionMismatch(format!(
            "prediction {}x{} vs ground truth {}x{}",
            pred.width(),
            pred.height(),
            gt.width(),
            gt.height()
        )));
    }
    if !(tau >= 0.0) {
        return Err(Error::InvalidArgument(format!("tau must be >= 0, got {tau}")));
    }
    let mut total = 0usize;
    let mut bad = 0usize;
    for (x, y, g) in gt.iter_valid() {
        total += 1;
        let wrong = match pred.get(x, y) {
            Some(p) => (p as f64 - g as f64).abs() > tau,
            None => true,
        };
        bad += wrong as usize;
    }
    if total == 0 {
        return Err(Error::Degenerate("ground truth has no valid pixels".into()));
    }
    Ok(bad as f64 / total as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImageError {
    pub name: String,
    pub error_rate: f64,
    pub valid_pixels: usize,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TimingSummary {
    pub frames: usize,
    pub total_ms: f64,
    pub mean_ms: f64,
    pub fps: f64,
}

impl TimingSummary {
    pub fn from_durations_ms(ms: &[f64]) -> Self {
        let total: f64 = ms.iter().sum();
        let n = ms.len();
        Self {
            frames: n,
            total_ms: total,
            mean_ms: if n > 0 { total / n as f64 } else { 0.0 },
            fps: if total > 0.0 { n as f64 * 1000.0 / total } else { 0.0 },
        }
    }
}

/// Labeled-window classification counts.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DetectionCounts {
    pub true_positives: usize,
    pub false_negatives: usize,
    pub true_negatives: usize,
    pub false_positives: usize,
}

impl DetectionCounts {
    pub fn total(&self) -> usize {
        self.true_positives + self.false_negatives + self.true_negatives + self.false_positives
    }

    pub fn accuracy(&self) -> f64 {
        let n = self.total();
        if n == 0 {
            0.0
        } else {
            (self.true_positives + self.true_negatives) as f64 / n as f64
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub tau: f64,
    pub images: Vec<ImageError>,
    /// Unweighted mean of the per-image rates; `None` without images.
    pub mean_error_rate: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub detection: Option<DetectionCounts>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub detection_accuracy: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub timing: Option<TimingSummary>,
}

impl EvalReport {
    pub fn new(tau: f64) -> Self {
        Self {
            tau,
            ..Self::default()
        }
    }

    pub fn add_image(&mut self, name: impl Into<String>, pred: &DisparityMap, gt: &DisparityMap) -> Result<f64> {
        let rate = evaluate_disparity(pred, gt, self.tau)?;
        self.images.push(ImageError {
            name: name.into(),
            error_rate: rate,
            valid_pixels: gt.valid_count(),
        });
        self.mean_error_rate =
            Some(self.images.iter().map(|i| i.error_rate).sum::<f64>() / self.images.len() as f64);
        Ok(rate)
    }

    pub fn set_detection(&mut self, counts: DetectionCounts) {
        self.detection = Some(counts);
        self.detection_accuracy = Some(counts.accuracy());
    }
}
