//! One-pass (OTB-style) localization metrics.

use crate::geometry::{center_error, iou, BoundingBox};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error("trajectory has {trajectory} boxes, ground truth has {ground_truth}")]
    LengthMismatch { trajectory: usize, ground_truth: usize },
}

/// Center-error thresholds 0, 1, ..., 50 pixels.
pub fn precision_thresholds() -> Vec<f64> {
    (0..=50).map(|t| t as f64).collect()
}

/// Overlap thresholds 0, 0.05, ..., 1.
pub fn success_thresholds() -> Vec<f64> {
    (0..=20).map(|k| k as f64 / 20.0).collect()
}

/// Result of re-initialization-protocol evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VotSummary {
    /// Mean overlap over the frames that count toward accuracy; `None` when
    /// no frame counted.
    pub accuracy: Option<f64>,
    pub failures: usize,
    pub counted_frames: usize,
    pub failure_frames: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub frames: usize,
    pub precision_thresholds: Vec<f64>,
    pub precision_curve: Vec<f64>,
    pub success_thresholds: Vec<f64>,
    pub success_curve: Vec<f64>,
    pub precision_at_20: f64,
    pub auc: f64,
    pub mean_iou: f64,
    pub per_frame_iou: Vec<f64>,
    pub per_frame_center_error: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub vot: Option<VotSummary>,
}

impl EvalReport {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    /// Both curves as `kind,threshold,value` rows.
    pub fn curves_csv(&self) -> String {
        let mut s = String::from("curve,threshold,value\n");
        for (t, v) in self.precision_thresholds.iter().zip(&self.precision_curve) {
            s.push_str(&format!("precision,{t},{v}\n"));
        }
        for (t, v) in self.success_thresholds.iter().zip(&self.success_curve) {
            s.push_str(&format!("success,{t},{v}\n"));
        }
        s
    }
}

/// Precision curve (fraction of frames with center error `<= theta`),
/// success curve (fraction with IoU strictly `> tau`) and its AUC, the
/// plain mean of the 21 success samples.
pub fn otb_metrics(trajectory: &[BoundingBox], ground_truth: &[BoundingBox]) -> Result<EvalReport, MetricsError> {
    if trajectory.len() != ground_truth.len() {
        return Err(MetricsError::LengthMismatch {
            trajectory: trajectory.len(),
            ground_truth: ground_truth.len(),
        });
    }
    let n = trajectory.len();
    let ious: Vec<f64> = trajectory.iter().zip(ground_truth).map(|(a, b)| iou(a, b)).collect();
    let errs: Vec<f64> = trajectory
        .iter()
        .zip(ground_truth)
        .map(|(a, b)| center_error(a, b))
        .collect();
    let frac = |count: usize| if n == 0 { 0.0 } else { count as f64 / n as f64 };
    let pt = precision_thresholds();
    let st = success_thresholds();
    let precision_curve: Vec<f64> = pt
        .iter()
        .map(|&th| frac(errs.iter().filter(|&&e| e <= th).count()))
        .collect();
    let success_curve: Vec<f64> = st
        .iter()
        .map(|&tau| frac(ious.iter().filter(|&&o| o > tau).count()))
        .collect();
    let auc = success_curve.iter().sum::<f64>() / success_curve.len() as f64;
    let mean_iou = if n == 0 { 0.0 } else { ious.iter().sum::<f64>() / n as f64 };
    Ok(EvalReport {
        frames: n,
        precision_at_20: precision_curve[20],
        precision_thresholds: pt,
        precision_curve,
        success_thresholds: st,
        success_curve,
        auc,
        mean_iou,
        per_frame_iou: ious,
        per_frame_center_error: errs,
        vot: None,
    })
}
