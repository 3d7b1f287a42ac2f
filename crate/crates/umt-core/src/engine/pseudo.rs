//! Pseudo-label selection from teacher detections.
//!
//! Per foreground class: sort by score, suppress duplicates with NMS, then
//! keep entries whose gate value exceeds the threshold. The plain gate is
//! the class score itself; the confidence-aware gate is the geometric mean
//! `sqrt(tau * p)` of confidence and score.

use serde::{Deserialize, Serialize};

use crate::geometry::{nms, BBox, Detection};

/// Which gate admits a detection into the pseudo-label set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GateMode {
    /// `p > T`
    Score,
    /// `sqrt(tau * p) > T`
    ConfidenceScore,
}

impl GateMode {
    pub fn value(&self, det: &Detection) -> f64 {
        match self {
            GateMode::Score => det.score,
            GateMode::ConfidenceScore => (det.confidence * det.score).sqrt(),
        }
    }
}

/// One selected pseudo label with its provenance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PseudoLabel {
    pub bbox: BBox,
    pub class_id: usize,
    /// Teacher class score.
    pub score: f64,
    /// Teacher confidence-branch output.
    pub confidence: f64,
    /// Gate value this entry passed with.
    pub gate: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct PseudoLabelSet {
    pub entries: Vec<PseudoLabel>,
}

impl PseudoLabelSet {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn gts(&self) -> Vec<(BBox, usize)> {
        self.entries.iter().map(|e| (e.bbox, e.class_id)).collect()
    }

    pub fn gate_mean(&self) -> f64 {
        if self.entries.is_empty() {
            0.0
        } else {
            self.entries.iter().map(|e| e.gate).sum::<f64>() / self.entries.len() as f64
        }
    }
}

fn select(dets: &[Detection], threshold: f64, nms_iou: f64, gate: GateMode) -> PseudoLabelSet {
    let num_classes = dets
        .first()
        .map(|d| d.class_probs.len().saturating_sub(1))
        .unwrap_or(0);
    let mut entries = Vec::new();
    for class_id in 1..=num_classes {
        let members: Vec<Detection> = dets
            .iter()
            .filter(|d| d.class_id == class_id)
            .cloned()
            .collect();
        for kept in nms(&members, nms_iou) {
            let gate_value = gate.value(&kept);
            if gate_value > threshold {
                entries.push(PseudoLabel {
                    bbox: kept.bbox,
                    class_id,
                    score: kept.score,
                    confidence: kept.confidence,
                    gate: gate_value,
                });
            }
        }
    }
    PseudoLabelSet { entries }
}

/// Score-gated selection: per-class NMS, keep `score > threshold`.
pub fn select_pseudo_labels(dets: &[Detection], threshold: f64, nms_iou: f64) -> PseudoLabelSet {
    select(dets, threshold, nms_iou, GateMode::Score)
}

/// Confidence-gated selection: per-class NMS, keep
/// `sqrt(confidence * score) > threshold`.
pub fn select_pseudo_labels_conf(
    dets: &[Detection],
    threshold: f64,
    nms_iou: f64,
) -> PseudoLabelSet {
    select(dets, threshold, nms_iou, GateMode::ConfidenceScore)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::RngExt;

    fn det(x: f64, y: f64, class_id: usize, score: f64, confidence: f64) -> Detection {
        let rest = (1.0 - score) / 3.0;
        let mut probs = vec![rest; 4];
        probs[class_id] = score;
        Detection {
            bbox: BBox::new(x, y, 10.0, 10.0),
            class_id,
            score,
            class_probs: probs,
            confidence,
        }
    }

    #[test]
    fn score_threshold_is_strict_and_per_detection() {
        let dets = vec![det(0.0, 0.0, 1, 0.9, 0.5), det(30.0, 30.0, 1, 0.7, 0.5)];
        let set = select_pseudo_labels(&dets, 0.8, 0.3);
        assert_eq!(set.len(), 1);
        assert_eq!(set.entries[0].score, 0.9);
        assert!(set.entries.iter().all(|e| e.gate > 0.8));
    }

    #[test]
    fn all_below_threshold_gives_empty_set() {
        let dets = vec![det(0.0, 0.0, 1, 0.5, 0.9), det(30.0, 0.0, 2, 0.79, 0.9)];
        assert!(select_pseudo_labels(&dets, 0.8, 0.3).is_empty());
    }

    #[test]
    fn confidence_gate_examples() {
        // sqrt(0.9 * 0.75) ~ 0.8216 passes at T = 0.8.
        let kept = select_pseudo_labels_conf(&[det(0.0, 0.0, 1, 0.75, 0.9)], 0.8, 0.3);
        assert_eq!(kept.len(), 1);
        assert!((kept.entries[0].gate - (0.675f64).sqrt()).abs() < 1e-12);
        // sqrt(0.5 * 0.9) ~ 0.6708 is rejected.
        let rejected = select_pseudo_labels_conf(&[det(0.0, 0.0, 1, 0.9, 0.5)], 0.8, 0.3);
        assert!(rejected.is_empty());
    }

    #[test]
    fn conf_gate_with_tau_equal_score_reduces_to_score_gate() {
        let mut rng = crate::rng::seeded(77);
        for _ in 0..200 {
            let dets: Vec<Detection> = (0..12)
                .map(|_| {
                    let score = rng.random_range(0.3..0.999);
                    det(
                        rng.random_range(0.0..50.0),
                        rng.random_range(0.0..50.0),
                        rng.random_range(1..=3),
                        score,
                        score,
                    )
                })
                .collect();
            let plain = select_pseudo_labels(&dets, 0.8, 0.3);
            let gated = select_pseudo_labels_conf(&dets, 0.8, 0.3);
            assert_eq!(plain.gts(), gated.gts());
        }
    }

    #[test]
    fn matches_brute_force_oracle() {
        // Independent O(n^2) oracle: per class, exhaustive suppression then
        // threshold filter.
        let mut rng = crate::rng::seeded(99);
        for _ in 0..100 {
            let dets: Vec<Detection> = (0..20)
                .map(|_| {
                    det(
                        rng.random_range(0.0..40.0),
                        rng.random_range(0.0..40.0),
                        rng.random_range(1..=3),
                        rng.random_range(0.01..0.999),
                        rng.random_range(0.0..1.0),
                    )
                })
                .collect();
            let got = select_pseudo_labels(&dets, 0.6, 0.4);
            let want = oracle(&dets, 0.6, 0.4);
            assert_eq!(got.gts(), want);
        }
    }

    fn oracle(dets: &[Detection], threshold: f64, nms_iou: f64) -> Vec<(BBox, usize)> {
        let mut out = Vec::new();
        for class_id in 1..=3 {
            let mut members: Vec<&Detection> =
                dets.iter().filter(|d| d.class_id == class_id).collect();
            members.sort_by(|a, b| b.score.partial_cmp(&a.score).unwrap());
            let mut kept: Vec<&Detection> = Vec::new();
            'cand: for cand in members {
                for k in &kept {
                    if crate::geometry::iou(&k.bbox, &cand.bbox) > nms_iou {
                        continue 'cand;
                    }
                }
                kept.push(cand);
            }
            for k in kept {
                if k.score > threshold {
                    out.push((k.bbox, k.class_id));
                }
            }
        }
        out
    }

    #[test]
    fn gate_is_monotone_in_confidence_and_score() {
        // With the NMS survivor set fixed, raising tau or p never drops a
        // selected entry.
        let base = det(0.0, 0.0, 1, 0.81, 0.82);
        let gate = GateMode::ConfidenceScore;
        let g0 = gate.value(&base);
        assert!(g0 > 0.8);
        for (ds, dc) in [(0.05, 0.0), (0.0, 0.05), (0.05, 0.05)] {
            let better = det(0.0, 0.0, 1, 0.81 + ds, 0.82 + dc);
            assert!(gate.value(&better) >= g0);
        }
    }
}
