//! Teacher bias diagnostic: evaluate one model on translation-paired target
//! and source-like sets and compare.

use serde::{Deserialize, Serialize};

use super::report::mean_ap;
use crate::detector::DetectorParams;
use crate::synth::AnnotatedScene;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BiasDiagnostic {
    pub map_target: f64,
    pub map_source_like: f64,
    /// `map_source_like - map_target`; positive means the model favors the
    /// source rendering of the very same scenes.
    pub difference: f64,
}

/// Evaluates a (teacher) model on paired sets. The sets must be the same
/// scenes, one raw and one translated, in the same order.
pub fn bias_diagnostic(
    params: &DetectorParams,
    target_set: &[AnnotatedScene],
    source_like_set: &[AnnotatedScene],
    iou_threshold: f64,
    nms_iou: f64,
) -> Result<BiasDiagnostic> {
    if target_set.len() != source_like_set.len()
        || target_set
            .iter()
            .zip(source_like_set)
            .any(|(a, b)| a.id != b.id)
    {
        return Err(Error::config(
            "bias diagnostic requires translation-paired sets (same scenes, same order)",
        ));
    }
    let map_target = mean_ap(params, target_set, iou_threshold, nms_iou)?.map;
    let map_source_like = mean_ap(params, source_like_set, iou_threshold, nms_iou)?.map;
    Ok(BiasDiagnostic {
        map_target,
        map_source_like,
        difference: map_source_like - map_target,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::detector::ArchConfig;
    use crate::eval::report::EVAL_NMS_IOU;
    use crate::synth::{render_scene, SceneSpec};

    #[test]
    fn identical_sets_give_equal_maps() {
        let params = DetectorParams::init(&ArchConfig::default(), 21);
        let scenes: Vec<_> = (0..3)
            .map(|i| render_scene(&SceneSpec::default(), 600 + i).unwrap())
            .collect();
        let diag = bias_diagnostic(&params, &scenes, &scenes, 0.5, EVAL_NMS_IOU).unwrap();
        assert_eq!(diag.map_target, diag.map_source_like);
        assert_eq!(diag.difference, 0.0);
    }

    #[test]
    fn unpaired_sets_are_rejected() {
        let params = DetectorParams::init(&ArchConfig::default(), 22);
        let a: Vec<_> = (0..3)
            .map(|i| render_scene(&SceneSpec::default(), 700 + i).unwrap())
            .collect();
        let b: Vec<_> = (0..2)
            .map(|i| render_scene(&SceneSpec::default(), 700 + i).unwrap())
            .collect();
        assert!(bias_diagnostic(&params, &a, &b, 0.5, EVAL_NMS_IOU).is_err());
        let mut c = a.clone();
        c.swap(0, 1);
        assert!(bias_diagnostic(&params, &a, &c, 0.5, EVAL_NMS_IOU).is_err());
    }
}
