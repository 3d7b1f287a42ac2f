//! Composite training objectives.
//!
//! Every variant optimizes a weighted sum of per-image detection-loss terms:
//! the labeled source term (hard or confidence-interpolated labels), an
//! optional target-like term (source labels on translated pixels), and an
//! optional distillation term in which teacher pseudo-labels supervise the
//! student on an augmented target view. The teacher enters only through the
//! pseudo-label constants, so no objective gradient ever touches teacher
//! parameters.
//!
//! [`prepare_objective`] freezes the stochastic and discrete parts of one
//! step (augmented views, teacher pseudo-labels, per-term plans); the result
//! evaluates and differentiates as a pure function of the student
//! parameters.

use serde::{Deserialize, Serialize};

use super::augment::{augment_cross_pair, AugmentConfig};
use super::pseudo::{select_pseudo_labels, select_pseudo_labels_conf, GateMode, PseudoLabelSet};
use super::{TrainConfig, Variant};
use crate::detector::{
    eval_loss, eval_loss_grad, forward, make_plan, ClsMode, DetectorParams, FrozenPlan,
};
use crate::image::Image;
use crate::rng::Rng64;
use crate::synth::AnnotatedScene;
use crate::{Error, Result};

/// Which image the teacher reads during distillation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TeacherInput {
    /// The (augmented) target image itself.
    RawTarget,
    /// Its source-like translation.
    SourceLike,
}

/// Fully explicit description of a composite objective. Variants are
/// presets over these knobs; tests exercise the degenerate combinations
/// directly.
#[derive(Debug, Clone, PartialEq)]
pub struct ObjectiveSpec {
    /// Weight of the distillation term; zero disables it entirely.
    pub distill_weight: f64,
    /// Weight of the confidence log penalty on the source term.
    pub confidence_weight: f64,
    /// Confidence-interpolated soft labels on the source term.
    pub soft_source_labels: bool,
    /// Test hook: fix the interpolation confidence instead of reading the
    /// confidence head.
    pub tau_override: Option<f64>,
    pub gate: GateMode,
    pub teacher_input: TeacherInput,
    pub include_target_like: bool,
    pub score_threshold: f64,
    pub pseudo_nms_iou: f64,
}

impl ObjectiveSpec {
    pub fn for_variant(variant: Variant, cfg: &TrainConfig) -> Self {
        let base = ObjectiveSpec {
            distill_weight: 0.0,
            confidence_weight: 0.0,
            soft_source_labels: false,
            tau_override: None,
            gate: GateMode::Score,
            teacher_input: TeacherInput::RawTarget,
            include_target_like: false,
            score_threshold: cfg.score_threshold,
            pseudo_nms_iou: cfg.pseudo_nms_iou,
        };
        match variant {
            Variant::SourceOnly => base,
            Variant::UmtS => ObjectiveSpec {
                distill_weight: cfg.distill_weight,
                ..base
            },
            Variant::UmtSc => ObjectiveSpec {
                distill_weight: cfg.distill_weight,
                teacher_input: TeacherInput::SourceLike,
                ..base
            },
            Variant::UmtSca => ObjectiveSpec {
                distill_weight: cfg.distill_weight,
                teacher_input: TeacherInput::SourceLike,
                include_target_like: true,
                ..base
            },
            Variant::Umt => ObjectiveSpec {
                distill_weight: cfg.distill_weight,
                confidence_weight: cfg.confidence_weight,
                soft_source_labels: true,
                gate: GateMode::ConfidenceScore,
                teacher_input: TeacherInput::SourceLike,
                include_target_like: true,
                ..base
            },
        }
    }
}

/// One training step's samples, one per domain role. Only the roles the
/// objective actually uses must be present.
#[derive(Debug, Clone, Copy, Default)]
pub struct StepBatch<'a> {
    pub source: Option<&'a AnnotatedScene>,
    pub target: Option<&'a AnnotatedScene>,
    pub source_like: Option<&'a AnnotatedScene>,
    pub target_like: Option<&'a AnnotatedScene>,
}

fn require<'a>(
    slot: Option<&'a AnnotatedScene>,
    component: &str,
) -> Result<&'a AnnotatedScene> {
    slot.ok_or_else(|| Error::config(format!("batch is missing its `{component}` component")))
}

/// Raw per-term losses plus the weighted total and step diagnostics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub source_det: f64,
    pub target_like_det: f64,
    /// Unweighted distillation loss (zero when the pseudo set is empty).
    pub distill: f64,
    /// Unweighted confidence penalty on the source proposals.
    pub confidence: f64,
    pub total: f64,
    pub pseudo_count: usize,
    pub gate_mean: f64,
    pub tau_mean: f64,
}

impl LossBreakdown {
    /// The weighting rule shared by every variant:
    /// `total = source + target_like + distill_weight * distill
    ///          + confidence_weight * confidence`.
    pub fn compose(
        source_det: f64,
        target_like_det: f64,
        distill: f64,
        confidence: f64,
        distill_weight: f64,
        confidence_weight: f64,
    ) -> f64 {
        source_det + target_like_det + distill_weight * distill + confidence_weight * confidence
    }

    /// Name of the first non-finite component, if any.
    pub fn non_finite_term(&self) -> Option<&'static str> {
        [
            ("source_det", self.source_det),
            ("target_like_det", self.target_like_det),
            ("distill", self.distill),
            ("confidence", self.confidence),
            ("total", self.total),
        ]
        .into_iter()
        .find(|(_, v)| !v.is_finite())
        .map(|(name, _)| name)
    }
}

struct PreparedTerm {
    image: Image,
    plan: FrozenPlan,
    mode: ClsMode,
    det_weight: f64,
    conf_weight: f64,
    role: TermRole,
}

#[derive(Clone, Copy, PartialEq)]
enum TermRole {
    Source,
    TargetLike,
    Distill,
}

/// A composite objective with all stochastic and discrete choices frozen;
/// a smooth function of the student parameters.
pub struct PreparedObjective {
    terms: Vec<PreparedTerm>,
    spec_distill_weight: f64,
    spec_confidence_weight: f64,
    /// Confidence diagnostics are only meaningful when the confidence
    /// machinery participates in the objective.
    report_confidence: bool,
    pseudo: PseudoLabelSet,
}

impl PreparedObjective {
    pub fn pseudo_labels(&self) -> &PseudoLabelSet {
        &self.pseudo
    }

    pub fn value(&self, params: &DetectorParams) -> LossBreakdown {
        self.eval(params, None)
    }

    /// Accumulates the total-objective gradient into `grad` (one full
    /// parameter vector) and returns the breakdown.
    pub fn value_and_grad(&self, params: &DetectorParams, grad: &mut [f64]) -> LossBreakdown {
        self.eval(params, Some(grad))
    }

    fn eval(&self, params: &DetectorParams, mut grad: Option<&mut [f64]>) -> LossBreakdown {
        let mut out = LossBreakdown {
            source_det: 0.0,
            target_like_det: 0.0,
            distill: 0.0,
            confidence: 0.0,
            total: 0.0,
            pseudo_count: self.pseudo.len(),
            gate_mean: self.pseudo.gate_mean(),
            tau_mean: 0.0,
        };
        for term in &self.terms {
            let parts = match grad.as_deref_mut() {
                Some(g) => eval_loss_grad(
                    params,
                    &term.image,
                    &term.plan,
                    term.mode,
                    term.det_weight,
                    term.conf_weight,
                    g,
                ),
                None => eval_loss(params, &term.image, &term.plan, term.mode),
            };
            match term.role {
                TermRole::Source => {
                    out.source_det = parts.det_total();
                    if self.report_confidence {
                        out.confidence = parts.conf_penalty;
                        out.tau_mean = parts.mean_tau();
                    }
                }
                TermRole::TargetLike => out.target_like_det = parts.det_total(),
                TermRole::Distill => out.distill = parts.det_total(),
            }
        }
        out.total = LossBreakdown::compose(
            out.source_det,
            out.target_like_det,
            out.distill,
            out.confidence,
            self.spec_distill_weight,
            self.spec_confidence_weight,
        );
        out
    }
}

/// Builds the frozen objective for one step: augments the distillation pair,
/// runs the teacher, selects pseudo-labels and assembles per-term plans from
/// the current student parameters.
pub fn prepare_objective(
    student: &DetectorParams,
    teacher: &DetectorParams,
    batch: &StepBatch,
    spec: &ObjectiveSpec,
    aug: &AugmentConfig,
    rng: &mut Rng64,
) -> Result<PreparedObjective> {
    let mut terms = Vec::with_capacity(3);

    let source = require(batch.source, "source")?;
    let source_mode = if spec.soft_source_labels {
        ClsMode::Soft {
            tau_override: spec.tau_override,
        }
    } else {
        ClsMode::Hard
    };
    terms.push(PreparedTerm {
        plan: make_plan(student, &source.image, &source.gts())?,
        image: source.image.clone(),
        mode: source_mode,
        det_weight: 1.0,
        conf_weight: spec.confidence_weight,
        role: TermRole::Source,
    });

    if spec.include_target_like {
        let tlike = require(batch.target_like, "target-like")?;
        terms.push(PreparedTerm {
            plan: make_plan(student, &tlike.image, &tlike.gts())?,
            image: tlike.image.clone(),
            mode: ClsMode::Hard,
            det_weight: 1.0,
            conf_weight: 0.0,
            role: TermRole::TargetLike,
        });
    }

    let mut pseudo = PseudoLabelSet::default();
    if spec.distill_weight > 0.0 {
        let target = require(batch.target, "target")?;
        let teacher_scene = match spec.teacher_input {
            TeacherInput::RawTarget => target,
            TeacherInput::SourceLike => require(batch.source_like, "source-like")?,
        };
        let (teacher_view, student_view) =
            augment_cross_pair(&teacher_scene.image, &target.image, rng, aug)?;
        let teacher_out = forward(teacher, &teacher_view.image)?;
        pseudo = match spec.gate {
            GateMode::Score => select_pseudo_labels(
                &teacher_out.detections,
                spec.score_threshold,
                spec.pseudo_nms_iou,
            ),
            GateMode::ConfidenceScore => select_pseudo_labels_conf(
                &teacher_out.detections,
                spec.score_threshold,
                spec.pseudo_nms_iou,
            ),
        };
        // An empty pseudo set contributes exactly zero rather than a
        // background-only detection loss.
        if !pseudo.is_empty() {
            terms.push(PreparedTerm {
                plan: make_plan(student, &student_view.image, &pseudo.gts())?,
                image: student_view.image,
                mode: ClsMode::Hard,
                det_weight: spec.distill_weight,
                conf_weight: 0.0,
                role: TermRole::Distill,
            });
        }
    }

    Ok(PreparedObjective {
        terms,
        spec_distill_weight: spec.distill_weight,
        spec_confidence_weight: spec.confidence_weight,
        report_confidence: spec.confidence_weight > 0.0 || spec.soft_source_labels,
        pseudo,
    })
}

/// Distillation loss: the detection loss of a student view against teacher
/// pseudo-labels treated as ground truth. The pseudo set enters as
/// constants, so no gradient reaches the teacher; an empty set contributes
/// exactly zero rather than a background-only loss.
pub fn distill_loss(
    student: &DetectorParams,
    student_view: &Image,
    pseudo: &PseudoLabelSet,
) -> crate::Result<f64> {
    if pseudo.is_empty() {
        return Ok(0.0);
    }
    crate::detector::loss_det(student, student_view, &pseudo.gts())
}

/// Mean-teacher objective: source detection loss plus weighted distillation
/// with the teacher reading the augmented target view.
pub fn mt_objective(
    student: &DetectorParams,
    teacher: &DetectorParams,
    batch: &StepBatch,
    cfg: &TrainConfig,
    rng: &mut Rng64,
) -> Result<LossBreakdown> {
    let spec = ObjectiveSpec::for_variant(Variant::UmtS, cfg);
    Ok(prepare_objective(student, teacher, batch, &spec, &cfg.augment, rng)?.value(student))
}

/// Full objective: confidence-interpolated source term, target-like term,
/// confidence-gated cross-domain distillation and the confidence penalty.
pub fn umt_objective(
    student: &DetectorParams,
    teacher: &DetectorParams,
    batch: &StepBatch,
    cfg: &TrainConfig,
    rng: &mut Rng64,
) -> Result<LossBreakdown> {
    let spec = ObjectiveSpec::for_variant(Variant::Umt, cfg);
    Ok(prepare_objective(student, teacher, batch, &spec, &cfg.augment, rng)?.value(student))
}
