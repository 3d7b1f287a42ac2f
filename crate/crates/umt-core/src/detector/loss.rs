//! Loss evaluation and analytic gradients under a frozen plan.
//!
//! The detection loss is the usual two-stage sum: binary cross-entropy on
//! anchor objectness plus smooth-L1 on positive-anchor deltas (RPN part),
//! and cross-entropy over `C+1` classes plus smooth-L1 on foreground
//! proposals (ROI part). The soft mode replaces the one-hot ROI target with
//! the confidence-interpolated label `p' = tau * q + (1 - tau) * y`;
//! gradients flow through both `q` and `tau`. The confidence penalty is
//! `sum_j -log(tau_j)` over the sampled proposals.
//!
//! Derivatives used below, with `q = softmax(z)`, `H(q) = -sum q ln q`:
//!
//! * hard CE: `dL/dz_k = q_k - y_k`
//! * soft CE: `L = tau * H(q) + (1 - tau) * CE(y, q)`,
//!   `dL/dz_k = (1 - tau) (q_k - y_k) - tau q_k (ln q_k + H(q))`,
//!   `dL/dtau = H(q) - CE(y, q)`
//! * penalty: `d(-ln sigmoid(z))/dz = sigmoid(z) - 1`

use super::net::{
    backbone_backward, backbone_forward, bce_with_logit, log_softmax, roi_forward, rpn_forward,
    sigmoid, smooth_l1, smooth_l1_grad, Tensor3,
};
use super::plan::{make_plan, AnchorLabel, FrozenPlan};
use super::DetectorParams;
use crate::geometry::BBox;
use crate::image::Image;
use crate::Result;

/// How the ROI classification term treats its target.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ClsMode {
    /// One-hot targets.
    Hard,
    /// Confidence-interpolated soft targets. `tau_override` substitutes a
    /// fixed confidence for the head output (reduction tests, ablations);
    /// with an override the confidence head receives no gradient from this
    /// term.
    Soft { tau_override: Option<f64> },
}

/// Loss values of one evaluation, before any objective weighting.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossParts {
    pub rpn_cls: f64,
    pub rpn_reg: f64,
    pub roi_cls: f64,
    pub roi_reg: f64,
    /// `sum_j -log(tau_j)` over foreground proposals (not averaged).
    /// Restricting the penalty to foreground keeps background targets
    /// effectively hard: a penalty over every sampled proposal drives all
    /// confidences to saturation and with them the soft labels into pure
    /// self-targets, which destabilizes training.
    pub conf_penalty: f64,
    pub tau_sum: f64,
    pub n_roi: usize,
}

impl LossParts {
    pub fn det_total(&self) -> f64 {
        self.rpn_cls + self.rpn_reg + self.roi_cls + self.roi_reg
    }

    pub fn mean_tau(&self) -> f64 {
        if self.n_roi == 0 {
            0.0
        } else {
            self.tau_sum / self.n_roi as f64
        }
    }

    pub fn all_finite(&self) -> bool {
        self.det_total().is_finite() && self.conf_penalty.is_finite()
    }
}

/// Loss only.
pub fn eval_loss(
    params: &DetectorParams,
    image: &Image,
    plan: &FrozenPlan,
    mode: ClsMode,
) -> LossParts {
    eval_core(params, image, plan, mode, None)
}

/// Loss plus gradient accumulation: adds
/// `det_weight * grad(det_total) + conf_weight * grad(conf_penalty)` into
/// `grad`, which must be one full parameter vector.
pub fn eval_loss_grad(
    params: &DetectorParams,
    image: &Image,
    plan: &FrozenPlan,
    mode: ClsMode,
    det_weight: f64,
    conf_weight: f64,
    grad: &mut [f64],
) -> LossParts {
    eval_core(params, image, plan, mode, Some((det_weight, conf_weight, grad)))
}

fn eval_core(
    params: &DetectorParams,
    image: &Image,
    plan: &FrozenPlan,
    mode: ClsMode,
    mut grad: Option<(f64, f64, &mut [f64])>,
) -> LossParts {
    let arch = params.arch();
    let layout = arch.layout();
    let p = params.as_slice();
    let c3 = arch.channels[2];
    let per_cell = arch.anchors_per_cell();
    let feat_w = arch.feat_w();

    let acts = backbone_forward(params, image);
    let rpn = rpn_forward(params, &acts.feat);
    let mut d_feat = Tensor3::new(acts.feat.c, acts.feat.h, acts.feat.w);

    // RPN classification and regression over the frozen anchor assignment.
    let n_sampled = plan.n_sampled.max(1) as f64;
    let n_pos = plan.n_pos.max(1) as f64;
    let mut rpn_cls = 0.0;
    let mut rpn_reg = 0.0;
    for (i, label) in plan.anchor_labels.iter().enumerate() {
        let (target, reg_target) = match label {
            AnchorLabel::Positive { target, .. } => (1.0, Some(target)),
            AnchorLabel::Negative => (0.0, None),
            AnchorLabel::Ignored => continue,
        };
        let z = rpn.obj_logits[i];
        rpn_cls += bce_with_logit(z, target);
        let cell_idx = i / per_cell;
        let a = i % per_cell;
        let (cy, cx) = (cell_idx / feat_w, cell_idx % feat_w);
        if let Some((det_w, _, g)) = grad.as_mut() {
            if *det_w != 0.0 {
                let dz = *det_w * (sigmoid(z) - target) / n_sampled;
                let row = a * 5;
                scatter_linear_row(
                    g,
                    &mut d_feat,
                    p,
                    &layout.rpn_w,
                    &layout.rpn_b,
                    row,
                    c3,
                    &acts.feat,
                    (cy, cx),
                    dz,
                );
            }
        }
        if let Some(target) = reg_target {
            for d in 0..4 {
                let r = rpn.deltas[i][d] - target[d];
                rpn_reg += smooth_l1(r);
                if let Some((det_w, _, g)) = grad.as_mut() {
                    if *det_w != 0.0 {
                        let dd = *det_w * smooth_l1_grad(r) / n_pos;
                        let row = a * 5 + 1 + d;
                        scatter_linear_row(
                            g,
                            &mut d_feat,
                            p,
                            &layout.rpn_w,
                            &layout.rpn_b,
                            row,
                            c3,
                            &acts.feat,
                            (cy, cx),
                            dd,
                        );
                    }
                }
            }
        }
    }
    rpn_cls /= n_sampled;
    rpn_reg /= n_pos;

    // ROI heads over the frozen proposal set.
    let n_roi = plan.rois.len();
    let n_roi_f = (n_roi.max(1)) as f64;
    let n_fg = plan.n_fg.max(1) as f64;
    let ncls = arch.num_classes + 1;
    let mut roi_cls = 0.0;
    let mut roi_reg = 0.0;
    let mut conf_penalty = 0.0;
    let mut tau_sum = 0.0;
    for roi in &plan.rois {
        let f = acts.feat.cell(roi.cell.0, roi.cell.1);
        let out = roi_forward(params, &f);
        let log_q = log_softmax(&out.cls_logits);
        let q: Vec<f64> = log_q.iter().map(|v| v.exp()).collect();
        let target_class = roi.fg.as_ref().map_or(0, |fg| fg.class_id);
        let tau_head = sigmoid(out.conf_logit);
        if roi.fg.is_some() {
            conf_penalty += -tau_head.ln();
        }
        tau_sum += tau_head;

        // Classification term and its logit gradient.
        let mut dz_cls = vec![0.0; ncls];
        let mut d_tau_soft = 0.0;
        match mode {
            ClsMode::Hard => {
                roi_cls += -log_q[target_class];
                for k in 0..ncls {
                    let y = if k == target_class { 1.0 } else { 0.0 };
                    dz_cls[k] = q[k] - y;
                }
            }
            ClsMode::Soft { tau_override } => {
                let tau = tau_override.unwrap_or(tau_head).clamp(0.0, 1.0);
                let mut ce_soft = 0.0;
                for k in 0..ncls {
                    let y = if k == target_class { 1.0 } else { 0.0 };
                    let p_soft = tau * q[k] + (1.0 - tau) * y;
                    ce_soft += p_soft * log_q[k];
                }
                roi_cls += -ce_soft;
                let entropy: f64 = -q.iter().zip(&log_q).map(|(qk, lq)| qk * lq).sum::<f64>();
                let ce_hard = -log_q[target_class];
                for k in 0..ncls {
                    let y = if k == target_class { 1.0 } else { 0.0 };
                    dz_cls[k] = (1.0 - tau) * (q[k] - y) - tau * q[k] * (log_q[k] + entropy);
                }
                if tau_override.is_none() && !out.conf_clamped {
                    // Route d/dtau through the sigmoid of the confidence logit.
                    d_tau_soft = (entropy - ce_hard) * tau_head * (1.0 - tau_head);
                }
            }
        }

        // Regression term for foreground proposals.
        let mut dd_reg = [0.0; 4];
        if let Some(fg) = &roi.fg {
            for d in 0..4 {
                let r = out.reg[d] - fg.reg[d];
                roi_reg += smooth_l1(r);
                dd_reg[d] = smooth_l1_grad(r);
            }
        }

        if let Some((det_w, conf_w, g)) = grad.as_mut() {
            let mut d_f = vec![0.0; c3];
            // Classification head.
            for k in 0..ncls {
                let dz = *det_w * dz_cls[k] / n_roi_f;
                if dz == 0.0 {
                    continue;
                }
                let wrow = &p[layout.roi_cls_w.clone()][k * c3..(k + 1) * c3];
                let gw = &mut g[layout.roi_cls_w.clone()];
                for j in 0..c3 {
                    gw[k * c3 + j] += dz * f[j];
                    d_f[j] += dz * wrow[j];
                }
                g[layout.roi_cls_b.clone()][k] += dz;
            }
            // Regression head.
            if roi.fg.is_some() {
                for d in 0..4 {
                    let dz = *det_w * dd_reg[d] / n_fg;
                    if dz == 0.0 {
                        continue;
                    }
                    let wrow = &p[layout.roi_reg_w.clone()][d * c3..(d + 1) * c3];
                    let gw = &mut g[layout.roi_reg_w.clone()];
                    for j in 0..c3 {
                        gw[d * c3 + j] += dz * f[j];
                        d_f[j] += dz * wrow[j];
                    }
                    g[layout.roi_reg_b.clone()][d] += dz;
                }
            }
            // Confidence head: penalty term plus the soft-label coupling.
            let mut dz_conf = *det_w * d_tau_soft / n_roi_f;
            if *conf_w != 0.0 && !out.conf_clamped && roi.fg.is_some() {
                dz_conf += *conf_w * (tau_head - 1.0);
            }
            if dz_conf != 0.0 {
                let wrow = &p[layout.conf_w.clone()];
                let gw = &mut g[layout.conf_w.clone()];
                for j in 0..c3 {
                    gw[j] += dz_conf * f[j];
                    d_f[j] += dz_conf * wrow[j];
                }
                g[layout.conf_b.clone()][0] += dz_conf;
            }
            for j in 0..c3 {
                *d_feat.at_mut(j, roi.cell.0, roi.cell.1) += d_f[j];
            }
        }
    }
    roi_cls /= n_roi_f;
    roi_reg /= n_fg;

    if let Some((_, _, g)) = grad.as_mut() {
        backbone_backward(params, &acts, &d_feat, g);
    }

    LossParts {
        rpn_cls,
        rpn_reg,
        roi_cls,
        roi_reg,
        conf_penalty,
        tau_sum,
        n_roi,
    }
}

/// Shared scatter for one RPN linear row: weight/bias gradient plus the
/// feature-map gradient at one cell.
#[allow(clippy::too_many_arguments)]
fn scatter_linear_row(
    g: &mut [f64],
    d_feat: &mut Tensor3,
    p: &[f64],
    w_range: &std::ops::Range<usize>,
    b_range: &std::ops::Range<usize>,
    row: usize,
    c3: usize,
    feat: &Tensor3,
    cell: (usize, usize),
    dz: f64,
) {
    let w = &p[w_range.clone()];
    for j in 0..c3 {
        let fj = feat.at(j, cell.0, cell.1);
        g[w_range.start + row * c3 + j] += dz * fj;
        *d_feat.at_mut(j, cell.0, cell.1) += dz * w[row * c3 + j];
    }
    g[b_range.start + row] += dz;
}

/// Detection loss with hard labels (RPN + ROI terms).
pub fn loss_det(params: &DetectorParams, image: &Image, gts: &[(BBox, usize)]) -> Result<f64> {
    let plan = make_plan(params, image, gts)?;
    Ok(eval_loss(params, image, &plan, ClsMode::Hard).det_total())
}

/// Detection loss with confidence-interpolated soft classification targets.
pub fn loss_det_soft(params: &DetectorParams, image: &Image, gts: &[(BBox, usize)]) -> Result<f64> {
    let plan = make_plan(params, image, gts)?;
    Ok(eval_loss(params, image, &plan, ClsMode::Soft { tau_override: None }).det_total())
}

/// The confidence log penalty `sum_j -log(tau_j)` as a standalone value.
/// Callers guarantee `tau_j > 0`; the sigmoid parameterization plus the
/// logit clamp make that structural inside the detector.
pub fn confidence_loss(taus: &[f64]) -> f64 {
    taus.iter().map(|t| -t.ln()).sum()
}

/// Confidence-weighted soft label `tau * p + (1 - tau) * y`; `tau` is
/// clipped to `[0, 1]` first. Preserves the simplex.
pub fn interpolate(class_probs: &[f64], one_hot: &[f64], tau: f64) -> Vec<f64> {
    let t = tau.clamp(0.0, 1.0);
    class_probs
        .iter()
        .zip(one_hot)
        .map(|(p, y)| t * p + (1.0 - t) * y)
        .collect()
}

/// Which loss a gradient is requested for.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossKind {
    Det,
    DetSoft,
    Confidence,
}

/// Analytic gradient of one named loss for a single image. Returns the loss
/// value and the full-parameter gradient. Composite objectives are assembled
/// in the training engine from [`eval_loss_grad`] terms.
pub fn grad(
    kind: LossKind,
    params: &DetectorParams,
    image: &Image,
    gts: &[(BBox, usize)],
) -> Result<(f64, Vec<f64>)> {
    let plan = make_plan(params, image, gts)?;
    let mut g = vec![0.0; params.len()];
    let (mode, det_w, conf_w) = match kind {
        LossKind::Det => (ClsMode::Hard, 1.0, 0.0),
        LossKind::DetSoft => (ClsMode::Soft { tau_override: None }, 1.0, 0.0),
        LossKind::Confidence => (ClsMode::Hard, 0.0, 1.0),
    };
    let parts = eval_loss_grad(params, image, &plan, mode, det_w, conf_w, &mut g);
    let value = match kind {
        LossKind::Confidence => parts.conf_penalty,
        _ => parts.det_total(),
    };
    Ok((value, g))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::detector::{forward, ArchConfig};
    use crate::rng::seeded;
    use rand::RngExt;

    fn arch() -> ArchConfig {
        ArchConfig::default()
    }

    fn noisy_image(seed: u64) -> Image {
        let mut rng = seeded(seed);
        let mut img = Image::new(64, 64);
        for v in img.data_mut() {
            *v = rng.random();
        }
        img
    }

    fn some_gts() -> Vec<(BBox, usize)> {
        vec![
            (BBox::new(10.0, 2.0, 20.0, 20.0), 1),
            (BBox::new(36.0, 34.0, 18.0, 22.0), 3),
        ]
    }

    #[test]
    fn zero_params_rpn_cls_is_ln2() {
        let params = DetectorParams::zeros(&arch());
        let img = noisy_image(1);
        let plan = make_plan(&params, &img, &some_gts()).unwrap();
        let parts = eval_loss(&params, &img, &plan, ClsMode::Hard);
        assert!((parts.rpn_cls - std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn loss_det_nonnegative_and_finite() {
        let params = DetectorParams::init(&arch(), 9);
        let img = noisy_image(2);
        let value = loss_det(&params, &img, &some_gts()).unwrap();
        assert!(value.is_finite() && value >= 0.0, "loss {value}");
        let empty = loss_det(&params, &img, &[]).unwrap();
        assert!(empty.is_finite() && empty >= 0.0);
    }

    #[test]
    fn perfect_prediction_limit_drives_loss_to_zero() {
        // Zero conv weights make every head see a zero feature vector, so
        // biases set the outputs directly: confident background everywhere
        // on a background-only image is the perfect fit.
        let arch = arch();
        let layout = arch.layout();
        let mut params = DetectorParams::zeros(&arch);
        for v in &mut params.as_mut_slice()[layout.rpn_b.clone()] {
            *v = -30.0;
        }
        params.as_mut_slice()[layout.roi_cls_b.clone()][0] = 30.0;
        let img = Image::filled(64, 64, [0.5, 0.5, 0.5]);
        let value = loss_det(&params, &img, &[]).unwrap();
        assert!(value >= 0.0);
        assert!(value < 1e-10, "loss {value}");
    }

    #[test]
    fn soft_with_tau_zero_bit_equals_hard() {
        let params = DetectorParams::init(&arch(), 11);
        let img = noisy_image(3);
        let plan = make_plan(&params, &img, &some_gts()).unwrap();
        let hard = eval_loss(&params, &img, &plan, ClsMode::Hard);
        let soft = eval_loss(
            &params,
            &img,
            &plan,
            ClsMode::Soft {
                tau_override: Some(0.0),
            },
        );
        assert_eq!(hard.det_total().to_bits(), soft.det_total().to_bits());
    }

    #[test]
    fn soft_with_tau_one_is_mean_prediction_entropy() {
        let params = DetectorParams::init(&arch(), 13);
        let img = noisy_image(4);
        let plan = make_plan(&params, &img, &some_gts()).unwrap();
        let soft = eval_loss(
            &params,
            &img,
            &plan,
            ClsMode::Soft {
                tau_override: Some(1.0),
            },
        );
        // The kept proposals of `forward` are the plan's rois in the same
        // order, so their class distributions give the expected entropy.
        let out = forward(&params, &img).unwrap();
        let mean_entropy: f64 = out
            .detections
            .iter()
            .map(|d| -d.class_probs.iter().map(|q| q * q.ln()).sum::<f64>())
            .sum::<f64>()
            / out.detections.len() as f64;
        assert!((soft.roi_cls - mean_entropy).abs() < 1e-9);
    }

    #[test]
    fn soft_loss_matches_expanded_formula() {
        let params = DetectorParams::init(&arch(), 17);
        let img = noisy_image(5);
        let gts = some_gts();
        let plan = make_plan(&params, &img, &gts).unwrap();
        let soft = eval_loss(&params, &img, &plan, ClsMode::Soft { tau_override: None });
        let out = forward(&params, &img).unwrap();
        // Independent route: tau * H(q) + (1 - tau) * CE(y, q), averaged.
        let mut expected = 0.0;
        for (det, roi) in out.detections.iter().zip(&plan.rois) {
            let tau = det.confidence;
            let entropy: f64 = -det.class_probs.iter().map(|q| q * q.ln()).sum::<f64>();
            let target = roi.fg.as_ref().map_or(0, |fg| fg.class_id);
            let ce = -det.class_probs[target].ln();
            expected += tau * entropy + (1.0 - tau) * ce;
        }
        expected /= plan.rois.len() as f64;
        assert!(
            (soft.roi_cls - expected).abs() < 1e-9,
            "{} vs {expected}",
            soft.roi_cls
        );
        assert!(soft.det_total() >= 0.0 && soft.det_total().is_finite());
    }

    #[test]
    fn interpolate_examples() {
        let p = [0.6, 0.4];
        let y = [0.0, 1.0];
        assert_eq!(interpolate(&p, &y, 1.0), vec![0.6, 0.4]);
        assert_eq!(interpolate(&p, &y, 0.0), vec![0.0, 1.0]);
        let mixed = interpolate(&p, &y, 0.3);
        assert!((mixed[0] - 0.18).abs() < 1e-12);
        assert!((mixed[1] - 0.82).abs() < 1e-12);
        assert!((mixed.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn confidence_loss_examples() {
        assert_eq!(confidence_loss(&[1.0, 1.0, 1.0]), 0.0);
        let two = confidence_loss(&[0.5, 0.5]);
        assert!((two - 2.0 * std::f64::consts::LN_2).abs() < 1e-12);
        let inv_e = confidence_loss(&[(-1.0f64).exp()]);
        assert!((inv_e - 1.0).abs() < 1e-12);
    }

    #[test]
    fn confidence_loss_monotone_decreasing_in_tau() {
        let mut taus = vec![0.2, 0.5, 0.9];
        let base = confidence_loss(&taus);
        taus[0] = 0.3;
        assert!(confidence_loss(&taus) < base);
    }

    #[test]
    fn confidence_grad_is_sigmoid_minus_one() {
        // d(-ln sigmoid(z))/dz = sigmoid(z) - 1, checked by central
        // differences on the scalar penalty.
        for z in [-2.0, -0.3, 0.0, 1.2, 4.0] {
            let eps = 1e-6;
            let f = |z: f64| -sigmoid(z).ln();
            let fd = (f(z + eps) - f(z - eps)) / (2.0 * eps);
            let analytic = sigmoid(z) - 1.0;
            assert!((fd - analytic).abs() < 1e-8, "z={z}");
        }
    }
}
