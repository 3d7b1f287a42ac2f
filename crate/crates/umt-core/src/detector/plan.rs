//! Anchor grid, proposal decoding and the frozen per-image plan.
//!
//! A [`FrozenPlan`] pins every discrete decision of one loss evaluation:
//! which anchors are positive/negative, which proposals were kept, their
//! boxes, feature cells and assigned targets. Given a plan, the loss is a
//! smooth function of the parameters.

use serde::{Deserialize, Serialize};

use super::net::{backbone_forward, roi_forward, rpn_forward, sigmoid, RpnOut, Tensor3};
use super::{ArchConfig, DetectorOutput, DetectorParams, STRIDE};
use crate::geometry::{iou, BBox, Detection};
use crate::image::Image;
use crate::Result;

/// Minimum proposal side length after clipping.
const MIN_SIDE: f64 = 2.0;
/// Log-scale deltas are clamped before exponentiation when decoding.
const DELTA_CLAMP: f64 = 4.0;
/// Anchor assignment thresholds (two-stage detector convention).
const ANCHOR_POS_IOU: f64 = 0.7;
const ANCHOR_NEG_IOU: f64 = 0.3;
/// A gt's best anchor is forced positive only above this floor.
const FORCE_POS_MIN_IOU: f64 = 0.1;
/// Proposals matching a gt at or above this are foreground for the ROI head.
const ROI_FG_IOU: f64 = 0.5;

#[derive(Debug, Clone, PartialEq)]
pub struct AnchorInfo {
    pub bbox: BBox,
    /// Feature cell `(y, x)` this anchor belongs to.
    pub cell: (usize, usize),
}

/// The dense anchor grid: one anchor per (scale, aspect) per feature cell,
/// centered on the cell center in image coordinates.
pub fn anchor_grid(arch: &ArchConfig) -> Vec<AnchorInfo> {
    let mut anchors = Vec::with_capacity(arch.num_anchors());
    for y in 0..arch.feat_h() {
        for x in 0..arch.feat_w() {
            let cx = (x as f64 + 0.5) * STRIDE as f64;
            let cy = (y as f64 + 0.5) * STRIDE as f64;
            for scale in &arch.anchor_scales {
                for aspect in &arch.anchor_aspects {
                    let w = scale / aspect.sqrt();
                    let h = scale * aspect.sqrt();
                    anchors.push(AnchorInfo {
                        bbox: BBox::new(cx - w / 2.0, cy - h / 2.0, w, h),
                        cell: (y, x),
                    });
                }
            }
        }
    }
    anchors
}

/// Box-delta encoding between a source box and its target.
pub(crate) fn encode_deltas(src: &BBox, gt: &BBox) -> [f64; 4] {
    let (scx, scy) = src.center();
    let (gcx, gcy) = gt.center();
    [
        (gcx - scx) / src.w,
        (gcy - scy) / src.h,
        (gt.w / src.w).ln(),
        (gt.h / src.h).ln(),
    ]
}

pub(crate) fn decode_deltas(src: &BBox, d: &[f64; 4], arch: &ArchConfig) -> BBox {
    let (scx, scy) = src.center();
    let cx = d[0] * src.w + scx;
    let cy = d[1] * src.h + scy;
    let w = src.w * d[2].clamp(-DELTA_CLAMP, DELTA_CLAMP).exp();
    let h = src.h * d[3].clamp(-DELTA_CLAMP, DELTA_CLAMP).exp();
    BBox::new(cx - w / 2.0, cy - h / 2.0, w, h).clip_to(
        arch.image_w as f64,
        arch.image_h as f64,
        MIN_SIDE,
    )
}

/// Per-anchor assignment for the RPN loss.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum AnchorLabel {
    Positive { gt: usize, target: [f64; 4] },
    Negative,
    Ignored,
}

/// Foreground target of one kept proposal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FgTarget {
    pub class_id: usize,
    pub reg: [f64; 4],
}

/// One kept proposal with everything the ROI loss needs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoiPlan {
    pub anchor_idx: usize,
    pub bbox: BBox,
    pub objectness: f64,
    pub cell: (usize, usize),
    /// `None` marks a background proposal.
    pub fg: Option<FgTarget>,
}

/// All discrete decisions of one loss evaluation, frozen.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrozenPlan {
    pub anchor_labels: Vec<AnchorLabel>,
    pub n_sampled: usize,
    pub n_pos: usize,
    pub rois: Vec<RoiPlan>,
    pub n_fg: usize,
}

/// Decoded, score-sorted proposals (all anchors).
fn propose(arch: &ArchConfig, anchors: &[AnchorInfo], rpn: &RpnOut) -> Vec<(usize, BBox, f64)> {
    let mut proposals: Vec<(usize, BBox, f64)> = anchors
        .iter()
        .enumerate()
        .map(|(i, a)| {
            let bbox = decode_deltas(&a.bbox, &rpn.deltas[i], arch);
            (i, bbox, sigmoid(rpn.obj_logits[i]))
        })
        .collect();
    // Stable: objectness ties keep anchor order.
    proposals.sort_by(|a, b| b.2.partial_cmp(&a.2).unwrap());
    proposals
}

fn cell_of(bbox: &BBox, arch: &ArchConfig) -> (usize, usize) {
    let (cx, cy) = bbox.center();
    let x = ((cx / STRIDE as f64).floor() as isize).clamp(0, arch.feat_w() as isize - 1);
    let y = ((cy / STRIDE as f64).floor() as isize).clamp(0, arch.feat_h() as isize - 1);
    (y as usize, x as usize)
}

/// Builds the frozen plan for one `(params, image, ground truth)` triple.
///
/// An empty gt list is legal: every anchor becomes negative and every kept
/// proposal background.
pub fn make_plan(
    params: &DetectorParams,
    image: &Image,
    gts: &[(BBox, usize)],
) -> Result<FrozenPlan> {
    let arch = params.arch();
    arch.check_image(image)?;
    let acts = backbone_forward(params, image);
    let rpn = rpn_forward(params, &acts.feat);
    Ok(plan_from_net(arch, &acts.feat, &rpn, gts))
}

pub(crate) fn plan_from_net(
    arch: &ArchConfig,
    _feat: &Tensor3,
    rpn: &RpnOut,
    gts: &[(BBox, usize)],
) -> FrozenPlan {
    let anchors = anchor_grid(arch);
    // Anchor assignment: best-IoU gt per anchor, thresholded, plus the
    // best-anchor-per-gt forcing rule so every object supervises the RPN.
    let mut best_iou = vec![0.0f64; anchors.len()];
    let mut best_gt = vec![usize::MAX; anchors.len()];
    for (ai, anchor) in anchors.iter().enumerate() {
        for (gi, (gt_box, _)) in gts.iter().enumerate() {
            let ov = iou(&anchor.bbox, gt_box);
            if ov > best_iou[ai] {
                best_iou[ai] = ov;
                best_gt[ai] = gi;
            }
        }
    }
    let mut forced_pos = vec![false; anchors.len()];
    for (gi, (gt_box, _)) in gts.iter().enumerate() {
        let mut best: Option<(usize, f64)> = None;
        for (ai, anchor) in anchors.iter().enumerate() {
            let ov = iou(&anchor.bbox, gt_box);
            if ov >= FORCE_POS_MIN_IOU && best.is_none_or(|(_, b)| ov > b) {
                best = Some((ai, ov));
            }
        }
        if let Some((ai, ov)) = best {
            forced_pos[ai] = true;
            // The forced anchor regresses towards its own best gt; make sure
            // it has one even if below the negative threshold.
            if best_gt[ai] == usize::MAX || best_iou[ai] < ov {
                best_gt[ai] = gi;
                best_iou[ai] = ov;
            }
        }
    }
    let mut anchor_labels = Vec::with_capacity(anchors.len());
    let (mut n_pos, mut n_neg) = (0usize, 0usize);
    for (ai, anchor) in anchors.iter().enumerate() {
        let label = if best_gt[ai] != usize::MAX
            && (best_iou[ai] >= ANCHOR_POS_IOU || forced_pos[ai])
        {
            n_pos += 1;
            AnchorLabel::Positive {
                gt: best_gt[ai],
                target: encode_deltas(&anchor.bbox, &gts[best_gt[ai]].0),
            }
        } else if best_iou[ai] <= ANCHOR_NEG_IOU {
            n_neg += 1;
            AnchorLabel::Negative
        } else {
            AnchorLabel::Ignored
        };
        anchor_labels.push(label);
    }

    // ROI sampling: top-K proposals by objectness, matched to gts at 0.5.
    let proposals = propose(arch, &anchors, rpn);
    let k = arch.roi_count.min(proposals.len());
    let mut rois = Vec::with_capacity(k);
    let mut n_fg = 0usize;
    for &(anchor_idx, bbox, objectness) in proposals.iter().take(k) {
        let mut best: Option<(usize, f64)> = None;
        for (gi, (gt_box, _)) in gts.iter().enumerate() {
            let ov = iou(&bbox, gt_box);
            if best.is_none_or(|(_, b)| ov > b) {
                best = Some((gi, ov));
            }
        }
        let fg = match best {
            Some((gi, ov)) if ov >= ROI_FG_IOU => {
                n_fg += 1;
                Some(FgTarget {
                    class_id: gts[gi].1,
                    reg: encode_deltas(&bbox, &gts[gi].0),
                })
            }
            _ => None,
        };
        rois.push(RoiPlan {
            anchor_idx,
            bbox,
            objectness,
            cell: cell_of(&bbox, arch),
            fg,
        });
    }
    FrozenPlan {
        anchor_labels,
        n_sampled: n_pos + n_neg,
        n_pos,
        rois,
        n_fg,
    }
}

/// Inference: proposals from the RPN, top-K through the ROI and confidence
/// heads, one detection per kept proposal. Pure in `(params, image)`.
pub fn forward(params: &DetectorParams, image: &Image) -> Result<DetectorOutput> {
    let arch = params.arch();
    arch.check_image(image)?;
    let acts = backbone_forward(params, image);
    let rpn = rpn_forward(params, &acts.feat);
    let anchors = anchor_grid(arch);
    let proposals = propose(arch, &anchors, &rpn);
    let k = arch.roi_count.min(proposals.len());
    let mut kept = Vec::with_capacity(k);
    let mut detections = Vec::with_capacity(k);
    for &(_, bbox, objectness) in proposals.iter().take(k) {
        let (cy, cx) = cell_of(&bbox, arch);
        let f = acts.feat.cell(cy, cx);
        let roi = roi_forward(params, &f);
        let log_probs = super::net::log_softmax(&roi.cls_logits);
        let probs: Vec<f64> = log_probs.iter().map(|lq| lq.exp()).collect();
        // Best foreground class; ties resolve to the lowest class id.
        let (mut class_id, mut score) = (1usize, probs[1]);
        for (c, p) in probs.iter().enumerate().skip(1) {
            if *p > score {
                class_id = c;
                score = *p;
            }
        }
        let final_box = decode_deltas(&bbox, &roi.reg, arch);
        detections.push(Detection {
            bbox: final_box,
            class_id,
            score,
            class_probs: probs,
            confidence: sigmoid(roi.conf_logit),
        });
        kept.push((bbox, objectness));
    }
    Ok(DetectorOutput {
        proposals: kept,
        detections,
    })
}
