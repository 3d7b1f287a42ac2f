//! Box geometry, IoU, non-maximum suppression and greedy matching.
//!
//! Everything in this module is a pure function over immutable inputs; the
//! rest of the crate builds on these primitives.

use serde::{Deserialize, Serialize};

/// Axis-aligned bounding box, top-left corner plus width/height, in
/// continuous pixel coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
}

impl BBox {
    pub fn new(x: f64, y: f64, w: f64, h: f64) -> Self {
        BBox { x, y, w, h }
    }

    pub fn is_valid(&self) -> bool {
        self.w > 0.0
            && self.h > 0.0
            && self.x.is_finite()
            && self.y.is_finite()
            && self.w.is_finite()
            && self.h.is_finite()
    }

    pub fn area(&self) -> f64 {
        self.w * self.h
    }

    pub fn x2(&self) -> f64 {
        self.x + self.w
    }

    pub fn y2(&self) -> f64 {
        self.y + self.h
    }

    pub fn center(&self) -> (f64, f64) {
        (self.x + 0.5 * self.w, self.y + 0.5 * self.h)
    }

    /// Clips the box to `[0, w] x [0, h]`, enforcing a minimum side length so
    /// downstream arithmetic (log-ratios, IoU) stays finite.
    pub fn clip_to(&self, img_w: f64, img_h: f64, min_side: f64) -> BBox {
        let x1 = self.x.clamp(0.0, img_w - min_side);
        let y1 = self.y.clamp(0.0, img_h - min_side);
        let x2 = self.x2().clamp(x1 + min_side, img_w);
        let y2 = self.y2().clamp(y1 + min_side, img_h);
        BBox::new(x1, y1, x2 - x1, y2 - y1)
    }
}

/// One scored detection: a box, its predicted foreground class, the full
/// distribution over `C + 1` classes (index 0 is background) and the
/// confidence-branch output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub bbox: BBox,
    /// Foreground class in `1..=C`.
    pub class_id: usize,
    /// Max foreground probability; the ranking key everywhere.
    pub score: f64,
    /// Distribution over `C + 1` classes, background first.
    pub class_probs: Vec<f64>,
    /// In-distribution confidence in `[0, 1]`, distinct from `score`.
    pub confidence: f64,
}

impl Detection {
    /// Checks the documented invariants; used by tests and debug assertions.
    pub fn check_invariants(&self) -> Result<(), String> {
        if !self.bbox.is_valid() {
            return Err(format!("invalid box {:?}", self.bbox));
        }
        let sum: f64 = self.class_probs.iter().sum();
        if (sum - 1.0).abs() > 1e-6 || self.class_probs.iter().any(|p| *p < 0.0) {
            return Err(format!("class_probs not on simplex (sum {sum})"));
        }
        let max_fg = self.class_probs[1..]
            .iter()
            .cloned()
            .fold(f64::NEG_INFINITY, f64::max);
        if (self.score - max_fg).abs() > 1e-6 {
            return Err(format!(
                "score {} does not equal max foreground prob {}",
                self.score, max_fg
            ));
        }
        if !(0.0..=1.0).contains(&self.confidence) {
            return Err(format!("confidence {} outside [0,1]", self.confidence));
        }
        if self.class_id == 0 || self.class_id >= self.class_probs.len() {
            return Err(format!("class_id {} out of range", self.class_id));
        }
        Ok(())
    }
}

/// Intersection over union of two boxes. Symmetric, in `[0, 1]`.
pub fn iou(a: &BBox, b: &BBox) -> f64 {
    let ix1 = a.x.max(b.x);
    let iy1 = a.y.max(b.y);
    let ix2 = a.x2().min(b.x2());
    let iy2 = a.y2().min(b.y2());
    let iw = (ix2 - ix1).max(0.0);
    let ih = (iy2 - iy1).max(0.0);
    let inter = iw * ih;
    let union = a.area() + b.area() - inter;
    if union <= 0.0 {
        0.0
    } else {
        inter / union
    }
}

/// Greedy non-maximum suppression over same-class detections.
///
/// The kept set is returned sorted by descending score; a detection is
/// suppressed when it overlaps an already-kept, higher-scored detection with
/// IoU strictly above `iou_threshold`. Score ties keep input order, so the
/// result is deterministic.
pub fn nms(dets: &[Detection], iou_threshold: f64) -> Vec<Detection> {
    let mut order: Vec<usize> = (0..dets.len()).collect();
    // Stable sort: equal scores keep input order.
    order.sort_by(|&a, &b| dets[b].score.partial_cmp(&dets[a].score).unwrap());
    let mut kept: Vec<Detection> = Vec::new();
    for idx in order {
        let candidate = &dets[idx];
        let suppressed = kept
            .iter()
            .any(|k| iou(&k.bbox, &candidate.bbox) > iou_threshold);
        if !suppressed {
            kept.push(candidate.clone());
        }
    }
    kept
}

/// Outcome of greedy detection-to-ground-truth matching for one class on one
/// image.
#[derive(Debug, Clone, PartialEq)]
pub struct MatchResult {
    /// Per detection, in the input order: true-positive flag.
    pub det_is_tp: Vec<bool>,
    /// Per ground truth: whether some detection claimed it.
    pub gt_matched: Vec<bool>,
}

/// VOC-style greedy matching: detections are visited in descending score
/// order, each claims its best-IoU unmatched same-class ground truth if that
/// IoU reaches `iou_threshold`. IoU ties resolve to the lowest gt index.
pub fn match_greedy(
    dets: &[Detection],
    gts: &[(BBox, usize)],
    iou_threshold: f64,
) -> MatchResult {
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&a, &b| dets[b].score.partial_cmp(&dets[a].score).unwrap());
    let mut det_is_tp = vec![false; dets.len()];
    let mut gt_matched = vec![false; gts.len()];
    for idx in order {
        let det = &dets[idx];
        let mut best: Option<(usize, f64)> = None;
        for (gi, (gt_box, gt_class)) in gts.iter().enumerate() {
            if *gt_class != det.class_id || gt_matched[gi] {
                continue;
            }
            let overlap = iou(&det.bbox, gt_box);
            // Strict > keeps the lowest-index gt on ties.
            if best.is_none_or(|(_, b)| overlap > b) {
                best = Some((gi, overlap));
            }
        }
        if let Some((gi, overlap)) = best {
            if overlap >= iou_threshold {
                det_is_tp[idx] = true;
                gt_matched[gi] = true;
            }
        }
    }
    MatchResult {
        det_is_tp,
        gt_matched,
    }
}
