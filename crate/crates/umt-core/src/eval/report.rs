//! Model evaluation over annotated scene sets: detection, per-class AP,
//! mAP and IoU sweeps.

use super::ap::average_precision;
use super::{ClassAp, EvalReport, SweepPoint};
use crate::detector::{forward, DetectorParams};
use crate::geometry::{nms, BBox, Detection};
use crate::synth::AnnotatedScene;
use crate::{Error, Result};

/// Test-time NMS IoU (two-stage detector convention).
pub const EVAL_NMS_IOU: f64 = 0.3;

/// Detections for a whole scene set, post per-class NMS, plus the ground
/// truth. Computed once and reused across thresholds and analyses.
pub struct EvalContext {
    pub num_classes: usize,
    /// Per image: kept detections, all classes, NMS applied per class.
    pub dets_per_image: Vec<Vec<Detection>>,
    /// Per image: `(box, class)` ground truth.
    pub gts_per_image: Vec<Vec<(BBox, usize)>>,
}

/// Runs the detector over every scene and applies per-class NMS.
pub fn detect_all(
    params: &DetectorParams,
    scenes: &[AnnotatedScene],
    nms_iou: f64,
) -> Result<EvalContext> {
    if scenes.is_empty() {
        return Err(Error::config("cannot evaluate on an empty dataset"));
    }
    let num_classes = params.arch().num_classes;
    let mut dets_per_image = Vec::with_capacity(scenes.len());
    let mut gts_per_image = Vec::with_capacity(scenes.len());
    for scene in scenes {
        let out = forward(params, &scene.image)?;
        let mut kept = Vec::new();
        for class_id in 1..=num_classes {
            let members: Vec<Detection> = out
                .detections
                .iter()
                .filter(|d| d.class_id == class_id)
                .cloned()
                .collect();
            kept.extend(nms(&members, nms_iou));
        }
        dets_per_image.push(kept);
        gts_per_image.push(scene.gts());
    }
    Ok(EvalContext {
        num_classes,
        dets_per_image,
        gts_per_image,
    })
}

/// Per-class AP and mAP at one matching threshold.
pub fn map_at(ctx: &EvalContext, iou_threshold: f64) -> (Vec<ClassAp>, Vec<usize>, f64) {
    let mut per_class = Vec::new();
    let mut skipped = Vec::new();
    for class_id in 1..=ctx.num_classes {
        let dets: Vec<Vec<Detection>> = ctx
            .dets_per_image
            .iter()
            .map(|dets| {
                dets.iter()
                    .filter(|d| d.class_id == class_id)
                    .cloned()
                    .collect()
            })
            .collect();
        let gts: Vec<Vec<(BBox, usize)>> = ctx
            .gts_per_image
            .iter()
            .map(|gts| {
                gts.iter()
                    .filter(|(_, c)| *c == class_id)
                    .cloned()
                    .collect()
            })
            .collect();
        let gt_count: usize = gts.iter().map(Vec::len).sum();
        let det_count: usize = dets.iter().map(Vec::len).sum();
        match average_precision(&dets, &gts, iou_threshold) {
            Some(ap) => per_class.push(ClassAp {
                class_id,
                ap,
                gt_count,
                det_count,
            }),
            None => skipped.push(class_id),
        }
    }
    let map = if per_class.is_empty() {
        0.0
    } else {
        per_class.iter().map(|c| c.ap).sum::<f64>() / per_class.len() as f64
    };
    (per_class, skipped, map)
}

/// Full evaluation at one threshold. Classes without ground truth are
/// excluded from the mean and listed in `skipped_classes`.
pub fn mean_ap(
    params: &DetectorParams,
    scenes: &[AnnotatedScene],
    iou_threshold: f64,
    nms_iou: f64,
) -> Result<EvalReport> {
    let ctx = detect_all(params, scenes, nms_iou)?;
    let (per_class, skipped_classes, map) = map_at(&ctx, iou_threshold);
    Ok(EvalReport {
        checkpoint_id: String::new(),
        dataset_id: String::new(),
        iou_threshold,
        per_class,
        skipped_classes,
        map,
        error_analysis: None,
        classification: None,
        sweep: None,
    })
}

/// mAP at each threshold of an ascending sweep. Matching only tightens as
/// the threshold grows, so the curve is non-increasing.
pub fn iou_sweep(ctx: &EvalContext, thresholds: &[f64]) -> Result<Vec<SweepPoint>> {
    if thresholds.is_empty() {
        return Err(Error::config("sweep needs at least one threshold"));
    }
    if thresholds.windows(2).any(|w| w[0] >= w[1])
        || thresholds.iter().any(|t| !(0.0 < *t && *t < 1.0))
    {
        return Err(Error::config(
            "sweep thresholds must be strictly ascending within (0, 1)",
        ));
    }
    Ok(thresholds
        .iter()
        .map(|&t| SweepPoint {
            iou_threshold: t,
            map: map_at(ctx, t).2,
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::detector::ArchConfig;
    use crate::synth::{render_scene, SceneSpec};

    #[test]
    fn empty_dataset_is_an_error() {
        let params = DetectorParams::zeros(&ArchConfig::default());
        assert!(matches!(
            mean_ap(&params, &[], 0.5, EVAL_NMS_IOU),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn report_is_deterministic_and_mean_is_arithmetic() {
        let params = DetectorParams::init(&ArchConfig::default(), 5);
        let scenes: Vec<_> = (0..4)
            .map(|i| render_scene(&SceneSpec::default(), 300 + i).unwrap())
            .collect();
        let a = mean_ap(&params, &scenes, 0.5, EVAL_NMS_IOU).unwrap();
        let b = mean_ap(&params, &scenes, 0.5, EVAL_NMS_IOU).unwrap();
        assert_eq!(a, b);
        assert!((a.map - a.recompute_map()).abs() < 1e-12);
    }

    #[test]
    fn sweep_requires_ascending_thresholds_and_single_matches_mean_ap() {
        let params = DetectorParams::init(&ArchConfig::default(), 6);
        let scenes: Vec<_> = (0..3)
            .map(|i| render_scene(&SceneSpec::default(), 400 + i).unwrap())
            .collect();
        let ctx = detect_all(&params, &scenes, EVAL_NMS_IOU).unwrap();
        assert!(iou_sweep(&ctx, &[0.7, 0.5]).is_err());
        assert!(iou_sweep(&ctx, &[]).is_err());
        let single = iou_sweep(&ctx, &[0.5]).unwrap();
        let report = mean_ap(&params, &scenes, 0.5, EVAL_NMS_IOU).unwrap();
        assert_eq!(single[0].map, report.map);
    }

    #[test]
    fn sweep_is_non_increasing() {
        let params = DetectorParams::init(&ArchConfig::default(), 7);
        let scenes: Vec<_> = (0..5)
            .map(|i| render_scene(&SceneSpec::default(), 500 + i).unwrap())
            .collect();
        let ctx = detect_all(&params, &scenes, EVAL_NMS_IOU).unwrap();
        let sweep = iou_sweep(&ctx, &[0.3, 0.5, 0.7, 0.9]).unwrap();
        for pair in sweep.windows(2) {
            assert!(pair[1].map <= pair[0].map + 1e-12);
        }
    }
}
