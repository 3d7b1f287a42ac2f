//! The mean-teacher training engine: EMA teacher maintenance, paired-view
//! augmentation, pseudo-label selection, the composite objectives and the
//! training loop.

mod augment;
mod checkpoint;
mod ema;
mod objective;
mod pseudo;
mod train;

pub use augment::{
    augment_cross_pair, augment_pair, photometric_jitter, AugmentConfig, AugmentedView,
    GeoTransform,
};
pub use checkpoint::{read_checkpoint, write_checkpoint, Checkpoint};
pub use ema::ema_update;
pub use objective::{
    distill_loss, mt_objective, prepare_objective, umt_objective, LossBreakdown, ObjectiveSpec,
    PreparedObjective, StepBatch, TeacherInput,
};
pub use pseudo::{select_pseudo_labels, select_pseudo_labels_conf, GateMode, PseudoLabel, PseudoLabelSet};
pub use train::{
    find_latest_checkpoint, run_training, train_step, StepMetrics, TrainDatasets, TrainOutcome,
    TrainState, METRICS_HEADER,
};

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Model variants of the ablation ladder, from the plain source-trained
/// detector up to the full bias-corrected teacher.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    /// Detection loss on labeled source images only.
    SourceOnly,
    /// Simple mean teacher: adds same-domain distillation on target images.
    UmtS,
    /// Cross-domain distillation: the teacher reads source-like translations.
    UmtSc,
    /// Adds target-like images as extra labeled training data.
    UmtSca,
    /// Full model: confidence-interpolated source labels and the
    /// confidence-gated pseudo-label rule.
    Umt,
}

impl Variant {
    pub const ALL: [Variant; 5] = [
        Variant::SourceOnly,
        Variant::UmtS,
        Variant::UmtSc,
        Variant::UmtSca,
        Variant::Umt,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Variant::SourceOnly => "source-only",
            Variant::UmtS => "umt-s",
            Variant::UmtSc => "umt-sc",
            Variant::UmtSca => "umt-sca",
            Variant::Umt => "umt",
        }
    }
}

impl std::str::FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Variant> {
        Variant::ALL
            .iter()
            .find(|v| v.name() == s)
            .copied()
            .ok_or_else(|| {
                Error::config(format!(
                    "unknown variant `{s}` (expected one of: {})",
                    Variant::ALL.map(|v| v.name()).join(", ")
                ))
            })
    }
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Training hyper-parameters. The serialized key names (`lambda`, `gamma`,
/// `threshold`, `ema_alpha`) are the ones used in config files and error
/// messages.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub variant: Variant,
    /// Distillation weight.
    #[serde(rename = "lambda")]
    pub distill_weight: f64,
    /// Confidence-penalty weight.
    #[serde(rename = "gamma")]
    pub confidence_weight: f64,
    /// Pseudo-label selection threshold.
    #[serde(rename = "threshold")]
    pub score_threshold: f64,
    /// EMA smoothing of the teacher.
    pub ema_alpha: f64,
    /// Two-phase step-decay schedule.
    pub lr_phase1: f64,
    pub steps_phase1: u64,
    pub lr_phase2: f64,
    pub steps_phase2: u64,
    pub momentum: f64,
    pub seed: u64,
    pub augment: AugmentConfig,
    /// NMS IoU used when selecting pseudo-labels.
    pub pseudo_nms_iou: f64,
    /// Fraction of total steps during which the distillation weight is held
    /// at zero (the teacher is meaningless at initialization).
    pub distill_warmup_fraction: f64,
    pub checkpoint_every: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            variant: Variant::Umt,
            distill_weight: 0.01,
            confidence_weight: 0.1,
            score_threshold: 0.8,
            ema_alpha: 0.99,
            lr_phase1: 0.01,
            steps_phase1: 1500,
            lr_phase2: 0.001,
            steps_phase2: 500,
            momentum: 0.9,
            seed: 0,
            augment: AugmentConfig::default(),
            pseudo_nms_iou: 0.3,
            distill_warmup_fraction: 0.1,
            checkpoint_every: 500,
        }
    }
}

impl TrainConfig {
    pub fn total_steps(&self) -> u64 {
        self.steps_phase1 + self.steps_phase2
    }

    pub fn lr_at(&self, step: u64) -> f64 {
        if step < self.steps_phase1 {
            self.lr_phase1
        } else {
            self.lr_phase2
        }
    }

    /// Whether a step falls inside the adaptation warm-up window.
    pub fn in_warmup(&self, step: u64) -> bool {
        let warmup = (self.distill_warmup_fraction * self.total_steps() as f64).floor() as u64;
        step < warmup
    }

    /// Effective distillation weight at a step, accounting for warm-up.
    pub fn distill_weight_at(&self, step: u64) -> f64 {
        if self.in_warmup(step) {
            0.0
        } else {
            self.distill_weight
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.distill_weight < 0.0 {
            return Err(Error::config("lambda must be >= 0"));
        }
        if self.confidence_weight < 0.0 {
            return Err(Error::config("gamma must be >= 0"));
        }
        if !(self.score_threshold > 0.0 && self.score_threshold < 1.0) {
            return Err(Error::config("threshold must lie in (0, 1)"));
        }
        if !(0.0..1.0).contains(&self.ema_alpha) {
            return Err(Error::config("ema_alpha must lie in [0, 1)"));
        }
        if self.lr_phase1 <= 0.0 || self.lr_phase2 <= 0.0 {
            return Err(Error::config("learning rates must be positive"));
        }
        // A zero-step schedule is legal: training then just writes the
        // initialization checkpoint.
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::config("momentum must lie in [0, 1)"));
        }
        if !(0.0..=1.0).contains(&self.pseudo_nms_iou) {
            return Err(Error::config("pseudo_nms_iou must lie in [0, 1]"));
        }
        if !(0.0..=1.0).contains(&self.distill_warmup_fraction) {
            return Err(Error::config("distill_warmup_fraction must lie in [0, 1]"));
        }
        if self.checkpoint_every == 0 {
            return Err(Error::config("checkpoint_every must be positive"));
        }
        self.augment.validate()
    }
}
