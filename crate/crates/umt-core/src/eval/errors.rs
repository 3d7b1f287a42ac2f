//! Detection-error taxonomy: where do the confident detections go wrong,
//! and how well are the best-overlap detections classified.

use serde::{Deserialize, Serialize};

use super::report::EvalContext;
use crate::geometry::iou;
use crate::{Error, Result};

/// Exhaustive, mutually exclusive categories for a confident detection.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ErrorCategory {
    /// Same-class overlap at IoU >= 0.5.
    Correct,
    /// Best overlap >= 0.5 sits on a wrong-class ground truth.
    MisClassified,
    /// Same-class overlap in (0.3, 0.5).
    MisLocalized,
    /// Nothing better than IoU 0.3.
    Background,
}

/// Classifies one detection from its best same-class overlap and its best
/// overlap on a differently-labeled ground truth.
pub fn categorize_detection(same_class_iou: f64, other_class_iou: f64) -> ErrorCategory {
    if same_class_iou >= 0.5 {
        ErrorCategory::Correct
    } else if other_class_iou >= 0.5 {
        ErrorCategory::MisClassified
    } else if same_class_iou > 0.3 {
        ErrorCategory::MisLocalized
    } else {
        ErrorCategory::Background
    }
}

/// Which detections the localization analysis looks at.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TopKRule {
    /// Per class, the top-K detections by score where K is that class's
    /// ground-truth count over the evaluation set.
    PerClassGtCount,
    /// Every detection.
    All,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalizationErrorReport {
    pub rule: TopKRule,
    pub analyzed: usize,
    pub correct: f64,
    pub mis_localized: f64,
    pub background: f64,
    pub mis_classified: f64,
}

impl LocalizationErrorReport {
    pub fn fractions_sum(&self) -> f64 {
        self.correct + self.mis_localized + self.background + self.mis_classified
    }
}

/// Error distribution of the most confident detections.
pub fn localization_error_analysis(
    ctx: &EvalContext,
    rule: TopKRule,
) -> Result<LocalizationErrorReport> {
    let mut counts = [0usize; 4];
    let mut analyzed = 0usize;
    for class_id in 1..=ctx.num_classes {
        // Pool this class's detections across images, keeping image ids.
        let mut pool: Vec<(usize, usize, f64)> = Vec::new(); // (image, det idx, score)
        for (img, dets) in ctx.dets_per_image.iter().enumerate() {
            for (di, det) in dets.iter().enumerate() {
                if det.class_id == class_id {
                    pool.push((img, di, det.score));
                }
            }
        }
        pool.sort_by(|a, b| b.2.partial_cmp(&a.2).unwrap());
        let keep = match rule {
            TopKRule::PerClassGtCount => {
                let gt_count: usize = ctx
                    .gts_per_image
                    .iter()
                    .map(|gts| gts.iter().filter(|(_, c)| *c == class_id).count())
                    .sum();
                gt_count.min(pool.len())
            }
            TopKRule::All => pool.len(),
        };
        for &(img, di, _) in pool.iter().take(keep) {
            let det = &ctx.dets_per_image[img][di];
            let mut same = 0.0f64;
            let mut other = 0.0f64;
            for (gt_box, gt_class) in &ctx.gts_per_image[img] {
                let ov = iou(&det.bbox, gt_box);
                if *gt_class == det.class_id {
                    same = same.max(ov);
                } else {
                    other = other.max(ov);
                }
            }
            let category = categorize_detection(same, other);
            counts[match category {
                ErrorCategory::Correct => 0,
                ErrorCategory::MisLocalized => 1,
                ErrorCategory::Background => 2,
                ErrorCategory::MisClassified => 3,
            }] += 1;
            analyzed += 1;
        }
    }
    if analyzed == 0 {
        return Err(Error::config(
            "localization error analysis found no detections to analyze",
        ));
    }
    let frac = |n: usize| n as f64 / analyzed as f64;
    Ok(LocalizationErrorReport {
        rule,
        analyzed,
        correct: frac(counts[0]),
        mis_localized: frac(counts[1]),
        background: frac(counts[2]),
        mis_classified: frac(counts[3]),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassificationErrorReport {
    pub total_gts: usize,
    pub correct: f64,
    pub mis_classified: f64,
    /// Ground truths with no overlapping detection at all.
    pub missed: f64,
    /// `confusion[gt_class - 1][predicted_class - 1]`, over matched gts.
    pub confusion: Vec<Vec<usize>>,
}

impl ClassificationErrorReport {
    pub fn fractions_sum(&self) -> f64 {
        self.correct + self.mis_classified + self.missed
    }
}

/// For every ground truth, grade the class of the detection (of any class)
/// that overlaps it the most.
pub fn classification_error_analysis(ctx: &EvalContext) -> Result<ClassificationErrorReport> {
    let mut confusion = vec![vec![0usize; ctx.num_classes]; ctx.num_classes];
    let (mut correct, mut wrong, mut missed, mut total) = (0usize, 0usize, 0usize, 0usize);
    for (dets, gts) in ctx.dets_per_image.iter().zip(&ctx.gts_per_image) {
        for (gt_box, gt_class) in gts {
            total += 1;
            let mut best: Option<(usize, f64)> = None; // (det class, iou)
            for det in dets {
                let ov = iou(&det.bbox, gt_box);
                if ov > 0.0 && best.is_none_or(|(_, b)| ov > b) {
                    best = Some((det.class_id, ov));
                }
            }
            match best {
                Some((pred_class, _)) => {
                    confusion[gt_class - 1][pred_class - 1] += 1;
                    if pred_class == *gt_class {
                        correct += 1;
                    } else {
                        wrong += 1;
                    }
                }
                None => missed += 1,
            }
        }
    }
    if total == 0 {
        return Err(Error::config(
            "classification error analysis needs ground-truth objects",
        ));
    }
    Ok(ClassificationErrorReport {
        total_gts: total,
        correct: correct as f64 / total as f64,
        mis_classified: wrong as f64 / total as f64,
        missed: missed as f64 / total as f64,
        confusion,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{BBox, Detection};

    fn det(bbox: BBox, class_id: usize, score: f64) -> Detection {
        let rest = (1.0 - score) / 3.0;
        let mut probs = vec![rest; 4];
        probs[class_id] = score;
        Detection {
            bbox,
            class_id,
            score,
            class_probs: probs,
            confidence: 0.5,
        }
    }

    fn ctx(dets: Vec<Vec<Detection>>, gts: Vec<Vec<(BBox, usize)>>) -> EvalContext {
        EvalContext {
            num_classes: 3,
            dets_per_image: dets,
            gts_per_image: gts,
        }
    }

    #[test]
    fn taxonomy_thresholds_match_the_stated_fixtures() {
        assert_eq!(categorize_detection(0.55, 0.0), ErrorCategory::Correct);
        assert_eq!(categorize_detection(0.4, 0.0), ErrorCategory::MisLocalized);
        assert_eq!(categorize_detection(0.1, 0.0), ErrorCategory::Background);
        // Boundary cases: 0.5 is Correct, 0.3 is Background.
        assert_eq!(categorize_detection(0.5, 0.0), ErrorCategory::Correct);
        assert_eq!(categorize_detection(0.3, 0.0), ErrorCategory::Background);
        // A confident wrong-class overlap is its own bucket.
        assert_eq!(categorize_detection(0.2, 0.8), ErrorCategory::MisClassified);
    }

    #[test]
    fn fractions_partition_the_analyzed_detections() {
        // One gt per class; detections at IoU 1.0 (correct), 0.4
        // (mis-localized) and disjoint (background).
        let g1 = BBox::new(0.0, 0.0, 10.0, 10.0);
        let g2 = BBox::new(30.0, 0.0, 10.0, 10.0);
        let g3 = BBox::new(0.0, 30.0, 10.0, 10.0);
        let dets = vec![vec![
            det(g1, 1, 0.9),
            det(BBox::new(30.0, 4.3, 10.0, 10.0), 2, 0.8), // IoU ~0.4 with g2
            det(BBox::new(45.0, 45.0, 10.0, 10.0), 3, 0.7), // background
        ]];
        let gts = vec![vec![(g1, 1usize), (g2, 2), (g3, 3)]];
        let report = localization_error_analysis(&ctx(dets, gts), TopKRule::PerClassGtCount)
            .unwrap();
        assert_eq!(report.analyzed, 3);
        assert!((report.fractions_sum() - 1.0).abs() < 1e-9);
        assert!((report.correct - 1.0 / 3.0).abs() < 1e-9);
        assert!((report.mis_localized - 1.0 / 3.0).abs() < 1e-9);
        assert!((report.background - 1.0 / 3.0).abs() < 1e-9);
    }

    #[test]
    fn classification_grades_best_overlap_detections() {
        // 3 gts: two get correct-class best overlaps, one a wrong class.
        let g1 = BBox::new(0.0, 0.0, 10.0, 10.0);
        let g2 = BBox::new(30.0, 0.0, 10.0, 10.0);
        let g3 = BBox::new(0.0, 30.0, 10.0, 10.0);
        let dets = vec![vec![
            det(g1, 1, 0.9),
            det(g2, 2, 0.8),
            det(g3, 1, 0.7), // wrong class on g3
        ]];
        let gts = vec![vec![(g1, 1usize), (g2, 2), (g3, 3)]];
        let report = classification_error_analysis(&ctx(dets, gts)).unwrap();
        assert!((report.correct - 2.0 / 3.0).abs() < 1e-9);
        assert!((report.mis_classified - 1.0 / 3.0).abs() < 1e-9);
        assert_eq!(report.missed, 0.0);
        assert_eq!(report.confusion[2][0], 1);
        assert!((report.fractions_sum() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn unmatched_gts_land_in_the_missed_bucket() {
        let g1 = BBox::new(0.0, 0.0, 10.0, 10.0);
        let g2 = BBox::new(40.0, 40.0, 10.0, 10.0);
        let dets = vec![vec![det(g1, 1, 0.9)]];
        let gts = vec![vec![(g1, 1usize), (g2, 2)]];
        let report = classification_error_analysis(&ctx(dets, gts)).unwrap();
        assert!((report.missed - 0.5).abs() < 1e-9);
        assert!((report.fractions_sum() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn every_class_shifted_by_one_scores_zero_accuracy() {
        let g1 = BBox::new(0.0, 0.0, 10.0, 10.0);
        let g2 = BBox::new(30.0, 0.0, 10.0, 10.0);
        let dets = vec![vec![det(g1, 2, 0.9), det(g2, 3, 0.8)]];
        let gts = vec![vec![(g1, 1usize), (g2, 2)]];
        let report = classification_error_analysis(&ctx(dets, gts)).unwrap();
        assert_eq!(report.correct, 0.0);
        assert!((report.mis_classified - 1.0).abs() < 1e-9);
    }
}
