//! Evaluation suite: VOC-style average precision, IoU-threshold sweeps, the
//! detection-error taxonomy and the teacher bias diagnostic.

mod ap;
mod bias;
mod dump;
mod errors;
mod report;

pub use ap::{average_precision, average_precision_from_records, DetRecord};
pub use bias::{bias_diagnostic, BiasDiagnostic};
pub use dump::dump_annotated_images;
pub use errors::{
    categorize_detection, classification_error_analysis, localization_error_analysis,
    ClassificationErrorReport, ErrorCategory, LocalizationErrorReport, TopKRule,
};
pub use report::{detect_all, iou_sweep, map_at, mean_ap, EvalContext, EVAL_NMS_IOU};

use serde::{Deserialize, Serialize};

/// Per-class AP entry of one evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassAp {
    pub class_id: usize,
    pub ap: f64,
    pub gt_count: usize,
    pub det_count: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub iou_threshold: f64,
    pub map: f64,
}

/// Everything one evaluation run produces. Serialized as JSON by the CLI;
/// curves additionally as CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub checkpoint_id: String,
    pub dataset_id: String,
    pub iou_threshold: f64,
    pub per_class: Vec<ClassAp>,
    /// Classes excluded from the mean because the dataset has no ground
    /// truth for them.
    pub skipped_classes: Vec<usize>,
    pub map: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error_analysis: Option<LocalizationErrorReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub classification: Option<ClassificationErrorReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sweep: Option<Vec<SweepPoint>>,
}

impl EvalReport {
    /// The mean is the arithmetic mean of the per-class entries; recomputed
    /// here as the invariant check used by tests.
    pub fn recompute_map(&self) -> f64 {
        if self.per_class.is_empty() {
            0.0
        } else {
            self.per_class.iter().map(|c| c.ap).sum::<f64>() / self.per_class.len() as f64
        }
    }
}
