//! Average precision with all-points interpolation (precision envelope).

use crate::geometry::{match_greedy, BBox, Detection};

/// One pooled detection record: its score and whether greedy matching
/// declared it a true positive.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DetRecord {
    pub score: f64,
    pub tp: bool,
}

/// AP over pooled records. Records may arrive in any order; they are
/// stable-sorted by descending score, so ties keep the caller's order and
/// the result is deterministic. `n_gts` is the recall denominator.
pub fn average_precision_from_records(mut records: Vec<DetRecord>, n_gts: usize) -> f64 {
    if n_gts == 0 {
        return 0.0;
    }
    records.sort_by(|a, b| b.score.partial_cmp(&a.score).unwrap());
    // Precision/recall after each prefix of the ranked list.
    let mut curve = Vec::with_capacity(records.len());
    let (mut tp, mut fp) = (0usize, 0usize);
    for r in &records {
        if r.tp {
            tp += 1;
        } else {
            fp += 1;
        }
        curve.push((tp as f64 / n_gts as f64, tp as f64 / (tp + fp) as f64));
    }
    // Envelope: precision at recall r is the max precision at recall >= r.
    let mut env = vec![0.0; curve.len()];
    let mut max_prec = 0.0f64;
    for i in (0..curve.len()).rev() {
        max_prec = max_prec.max(curve[i].1);
        env[i] = max_prec;
    }
    // Integrate the step function over recall increments.
    let mut ap = 0.0;
    let mut prev_recall = 0.0;
    for (i, &(recall, _)) in curve.iter().enumerate() {
        if recall > prev_recall {
            ap += (recall - prev_recall) * env[i];
            prev_recall = recall;
        }
    }
    ap
}

/// AP for one class: detections and ground truths are given per image (same
/// indexing), already restricted to that class. Matching is greedy per image
/// at `iou_threshold`; pooling and integration follow the all-points rule.
/// Returns `None` when the class has no ground truth anywhere (AP is
/// undefined and the class must be excluded from the mean).
pub fn average_precision(
    dets_per_image: &[Vec<Detection>],
    gts_per_image: &[Vec<(BBox, usize)>],
    iou_threshold: f64,
) -> Option<f64> {
    let n_gts: usize = gts_per_image.iter().map(Vec::len).sum();
    if n_gts == 0 {
        return None;
    }
    let mut records = Vec::new();
    for (dets, gts) in dets_per_image.iter().zip(gts_per_image) {
        let matched = match_greedy(dets, gts, iou_threshold);
        for (det, tp) in dets.iter().zip(matched.det_is_tp) {
            records.push(DetRecord {
                score: det.score,
                tp,
            });
        }
    }
    Some(average_precision_from_records(records, n_gts))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn det(x: f64, score: f64) -> Detection {
        let rest = (1.0 - score) / 3.0;
        let mut probs = vec![rest; 4];
        probs[1] = score;
        Detection {
            bbox: BBox::new(x, 0.0, 10.0, 10.0),
            class_id: 1,
            score,
            class_probs: probs,
            confidence: 0.5,
        }
    }

    #[test]
    fn single_match_gives_full_ap() {
        let dets = vec![vec![det(0.0, 0.9)]];
        let gts = vec![vec![(BBox::new(0.0, 0.0, 10.0, 10.0), 1usize)]];
        assert_eq!(average_precision(&dets, &gts, 0.5), Some(1.0));
    }

    #[test]
    fn high_scoring_fp_halves_ap() {
        // FP at 0.9, TP at 0.8, one gt: precision at full recall is 1/2 and
        // the envelope keeps it there.
        let dets = vec![vec![det(40.0, 0.9), det(0.0, 0.8)]];
        let gts = vec![vec![(BBox::new(0.0, 0.0, 10.0, 10.0), 1usize)]];
        let ap = average_precision(&dets, &gts, 0.5).unwrap();
        assert!((ap - 0.5).abs() < 1e-12, "ap {ap}");
    }

    #[test]
    fn no_detections_is_zero_ap() {
        let dets = vec![vec![]];
        let gts = vec![vec![(BBox::new(0.0, 0.0, 10.0, 10.0), 1usize)]];
        assert_eq!(average_precision(&dets, &gts, 0.5), Some(0.0));
    }

    #[test]
    fn zero_gts_is_undefined() {
        let dets = vec![vec![det(0.0, 0.9)]];
        let gts: Vec<Vec<(BBox, usize)>> = vec![vec![]];
        assert_eq!(average_precision(&dets, &gts, 0.5), None);
    }

    #[test]
    fn three_image_fixture_matches_hand_computed_ap() {
        // Images: (1) TP at 0.95; (2) TP at 0.6 plus a duplicate FP at 0.9;
        // (3) one gt missed entirely. Ranked: 0.95 TP, 0.9 FP, 0.6 TP.
        // Precision/recall points: (1/3, 1), (1/3, 1/2), (2/3, 2/3);
        // envelope integral: 1/3 * 1 + 1/3 * 2/3 = 5/9.
        let gt = |x: f64| (BBox::new(x, 0.0, 10.0, 10.0), 1usize);
        let dets = vec![
            vec![det(0.0, 0.95)],
            vec![det(40.0, 0.9), det(20.0, 0.6)],
            vec![],
        ];
        let gts = vec![vec![gt(0.0)], vec![gt(20.0)], vec![gt(50.0)]];
        let ap = average_precision(&dets, &gts, 0.5).unwrap();
        assert!((ap - 5.0 / 9.0).abs() < 1e-12, "ap {ap}");
    }

    #[test]
    fn ap_is_invariant_under_monotone_score_transforms() {
        let records = vec![
            DetRecord { score: 0.9, tp: true },
            DetRecord { score: 0.7, tp: false },
            DetRecord { score: 0.5, tp: true },
            DetRecord { score: 0.2, tp: false },
            DetRecord { score: 0.1, tp: true },
        ];
        let base = average_precision_from_records(records.clone(), 4);
        for transform in [|s: f64| s * 0.3 + 0.1, |s: f64| s.powi(3), |s: f64| s.exp()] {
            let mapped: Vec<DetRecord> = records
                .iter()
                .map(|r| DetRecord {
                    score: transform(r.score),
                    tp: r.tp,
                })
                .collect();
            assert_eq!(average_precision_from_records(mapped, 4), base);
        }
    }

    #[test]
    fn raising_an_fp_above_a_tp_never_raises_ap() {
        let records = vec![
            DetRecord { score: 0.9, tp: true },
            DetRecord { score: 0.5, tp: false },
            DetRecord { score: 0.4, tp: true },
        ];
        let base = average_precision_from_records(records.clone(), 2);
        let mut worse = records;
        worse[1].score = 0.95;
        let worse_ap = average_precision_from_records(worse, 2);
        assert!(worse_ap <= base + 1e-12, "{worse_ap} vs {base}");
    }
}
