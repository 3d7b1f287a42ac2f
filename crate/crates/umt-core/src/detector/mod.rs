//! A minimal two-stage detector with hand-derived gradients.
//!
//! The network is deliberately small: a three-layer strided conv backbone
//! (tanh activations, stride 8 overall), a dense one-anchor-per-cell RPN
//! head, a center-cell-lookup ROI head (classification over `C+1` classes
//! plus class-agnostic box regression) and a single-logit confidence
//! side-branch. Small enough that every gradient is written out by hand and
//! checked against central finite differences.
//!
//! Non-differentiable decisions (anchor assignment, proposal selection,
//! proposal-to-target matching) are captured once into a [`FrozenPlan`];
//! losses and gradients are then smooth functions of the parameters given
//! that plan, which is what makes finite-difference validation exact. The
//! training loop rebuilds the plan from the current parameters at every
//! step.

mod loss;
mod net;
mod plan;

pub use loss::{
    confidence_loss, eval_loss, eval_loss_grad, grad, interpolate, loss_det, loss_det_soft,
    ClsMode, LossKind, LossParts,
};
pub use plan::{anchor_grid, forward, make_plan, AnchorInfo, AnchorLabel, FgTarget, FrozenPlan, RoiPlan};

use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::geometry::{BBox, Detection};
use crate::image::Image;
use crate::rng::{derive_seed, seeded, Rng64, Stream};
use crate::{Error, Result};

pub(crate) const KERNEL: usize = 3;
/// Three stride-2 convolutions.
pub(crate) const STRIDE: usize = 8;

/// Architecture hyper-parameters. Two configs are combinable (EMA, loading)
/// iff they are equal; [`ArchConfig::digest`] is embedded in checkpoints to
/// enforce that.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ArchConfig {
    pub image_h: usize,
    pub image_w: usize,
    /// Number of foreground classes; class 0 is background.
    pub num_classes: usize,
    /// Output channels of the three backbone convolutions.
    pub channels: [usize; 3],
    /// Anchor side lengths, one anchor per scale per cell.
    pub anchor_scales: Vec<f64>,
    /// Anchor aspect ratios (height / width).
    pub anchor_aspects: Vec<f64>,
    /// Proposals kept per image (top-K by objectness).
    pub roi_count: usize,
    /// Confidence logits are clamped to this magnitude so `-log(tau)` stays
    /// finite.
    pub conf_logit_limit: f64,
}

impl Default for ArchConfig {
    fn default() -> Self {
        ArchConfig {
            image_h: 64,
            image_w: 64,
            num_classes: 3,
            channels: [8, 12, 16],
            anchor_scales: vec![20.0],
            anchor_aspects: vec![1.0],
            roi_count: 12,
            conf_logit_limit: 15.0,
        }
    }
}

impl ArchConfig {
    pub fn validate(&self) -> Result<()> {
        if !self.image_h.is_multiple_of(STRIDE) || !self.image_w.is_multiple_of(STRIDE) {
            return Err(Error::config(format!(
                "image dimensions {}x{} must be divisible by the stride {STRIDE}",
                self.image_h, self.image_w
            )));
        }
        if self.num_classes == 0 {
            return Err(Error::config("num_classes must be at least 1"));
        }
        if self.channels.contains(&0) {
            return Err(Error::config("backbone channel counts must be positive"));
        }
        if self.anchor_scales.is_empty() || self.anchor_aspects.is_empty() {
            return Err(Error::config("at least one anchor scale and aspect required"));
        }
        if self.roi_count == 0 {
            return Err(Error::config("roi_count must be positive"));
        }
        if self.conf_logit_limit <= 0.0 {
            return Err(Error::config("conf_logit_limit must be positive"));
        }
        Ok(())
    }

    pub fn feat_h(&self) -> usize {
        self.image_h / STRIDE
    }

    pub fn feat_w(&self) -> usize {
        self.image_w / STRIDE
    }

    /// Anchors per cell.
    pub fn anchors_per_cell(&self) -> usize {
        self.anchor_scales.len() * self.anchor_aspects.len()
    }

    pub fn num_anchors(&self) -> usize {
        self.feat_h() * self.feat_w() * self.anchors_per_cell()
    }

    pub fn check_image(&self, image: &Image) -> Result<()> {
        if image.height() != self.image_h || image.width() != self.image_w {
            return Err(Error::config(format!(
                "image is {}x{} but the architecture expects {}x{}",
                image.height(),
                image.width(),
                self.image_h,
                self.image_w
            )));
        }
        Ok(())
    }

    /// FNV-1a over the canonical JSON encoding; stored in checkpoints.
    pub fn digest(&self) -> u64 {
        let json = serde_json::to_string(self).expect("arch config serializes");
        let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
        for byte in json.as_bytes() {
            hash ^= *byte as u64;
            hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
        }
        hash
    }

    pub fn layout(&self) -> Layout {
        Layout::new(self)
    }
}

/// Named parameter blocks, in layout order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamBlock {
    Backbone,
    RpnHead,
    RoiHead,
    ConfHead,
}

/// Offsets of every weight tensor inside the flat parameter vector.
#[derive(Debug, Clone)]
pub struct Layout {
    pub conv_w: [Range<usize>; 3],
    pub conv_b: [Range<usize>; 3],
    pub rpn_w: Range<usize>,
    pub rpn_b: Range<usize>,
    pub roi_cls_w: Range<usize>,
    pub roi_cls_b: Range<usize>,
    pub roi_reg_w: Range<usize>,
    pub roi_reg_b: Range<usize>,
    pub conf_w: Range<usize>,
    pub conf_b: Range<usize>,
    pub total: usize,
}

impl Layout {
    fn new(arch: &ArchConfig) -> Self {
        let [c1, c2, c3] = arch.channels;
        let ins = [3, c1, c2];
        let outs = [c1, c2, c3];
        let mut off = 0;
        let mut conv_w: [Range<usize>; 3] = [0..0, 0..0, 0..0];
        let mut conv_b: [Range<usize>; 3] = [0..0, 0..0, 0..0];
        for layer in 0..3 {
            let wlen = outs[layer] * ins[layer] * KERNEL * KERNEL;
            conv_w[layer] = off..off + wlen;
            off += wlen;
            conv_b[layer] = off..off + outs[layer];
            off += outs[layer];
        }
        let rpn_rows = arch.anchors_per_cell() * 5;
        let rpn_w = off..off + rpn_rows * c3;
        let mut off = rpn_w.end;
        let rpn_b = off..off + rpn_rows;
        off = rpn_b.end;
        let ncls = arch.num_classes + 1;
        let roi_cls_w = off..off + ncls * c3;
        off = roi_cls_w.end;
        let roi_cls_b = off..off + ncls;
        off = roi_cls_b.end;
        let roi_reg_w = off..off + 4 * c3;
        off = roi_reg_w.end;
        let roi_reg_b = off..off + 4;
        off = roi_reg_b.end;
        let conf_w = off..off + c3;
        off = conf_w.end;
        let conf_b = off..off + 1;
        off = conf_b.end;
        Layout {
            conv_w,
            conv_b,
            rpn_w,
            rpn_b,
            roi_cls_w,
            roi_cls_b,
            roi_reg_w,
            roi_reg_b,
            conf_w,
            conf_b,
            total: off,
        }
    }

    pub fn block_range(&self, block: ParamBlock) -> Range<usize> {
        match block {
            ParamBlock::Backbone => self.conv_w[0].start..self.conv_b[2].end,
            ParamBlock::RpnHead => self.rpn_w.start..self.rpn_b.end,
            ParamBlock::RoiHead => self.roi_cls_w.start..self.roi_reg_b.end,
            ParamBlock::ConfHead => self.conf_w.start..self.conf_b.end,
        }
    }
}

/// The detector's full parameter vector plus its architecture config.
#[derive(Debug, Clone, PartialEq)]
pub struct DetectorParams {
    arch: ArchConfig,
    data: Vec<f64>,
}

impl DetectorParams {
    pub fn zeros(arch: &ArchConfig) -> Self {
        let total = arch.layout().total;
        DetectorParams {
            arch: arch.clone(),
            data: vec![0.0; total],
        }
    }

    /// Deterministic fan-in-scaled init; biases start at zero so the first
    /// forward pass is the all-uniform one.
    pub fn init(arch: &ArchConfig, seed: u64) -> Self {
        let mut params = Self::zeros(arch);
        let layout = arch.layout();
        let mut rng = seeded(derive_seed(seed, Stream::ParamInit, 0));
        let [c1, c2, c3] = arch.channels;
        let fan_ins = [3 * 9, c1 * 9, c2 * 9];
        for layer in 0..3 {
            let std = (1.0 / fan_ins[layer] as f64).sqrt();
            fill_normal(&mut params.data[layout.conv_w[layer].clone()], &mut rng, std);
        }
        let head_std = 0.5 / (c3 as f64).sqrt();
        fill_normal(&mut params.data[layout.rpn_w.clone()], &mut rng, head_std);
        fill_normal(&mut params.data[layout.roi_cls_w.clone()], &mut rng, head_std);
        fill_normal(&mut params.data[layout.roi_reg_w.clone()], &mut rng, head_std);
        fill_normal(&mut params.data[layout.conf_w.clone()], &mut rng, head_std);
        // Start the confidence branch low: label interpolation then begins
        // near the hard-label regime and the log penalty raises it as the
        // fit improves.
        params.data[layout.conf_b.clone()][0] = -2.0;
        params
    }

    pub fn arch(&self) -> &ArchConfig {
        &self.arch
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn from_vec(arch: &ArchConfig, data: Vec<f64>) -> Result<Self> {
        if data.len() != arch.layout().total {
            return Err(Error::config(format!(
                "parameter vector length {} does not match architecture ({} expected)",
                data.len(),
                arch.layout().total
            )));
        }
        Ok(DetectorParams {
            arch: arch.clone(),
            data,
        })
    }

    pub fn block(&self, block: ParamBlock) -> &[f64] {
        &self.data[self.arch.layout().block_range(block)]
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Shape compatibility for element-wise combination (EMA etc.).
    pub fn compatible(&self, other: &DetectorParams) -> bool {
        self.arch == other.arch && self.data.len() == other.data.len()
    }
}

fn fill_normal(slice: &mut [f64], rng: &mut Rng64, std: f64) {
    use rand::RngExt;
    // Box-Muller; draws come in pairs.
    let mut idx = 0;
    while idx < slice.len() {
        let u1: f64 = rng.random::<f64>().max(1e-12);
        let u2: f64 = rng.random();
        let radius = (-2.0 * u1.ln()).sqrt();
        let (s, c) = (2.0 * std::f64::consts::PI * u2).sin_cos();
        slice[idx] = radius * c * std;
        idx += 1;
        if idx < slice.len() {
            slice[idx] = radius * s * std;
            idx += 1;
        }
    }
}

/// Inference output: the kept proposals and the detection each one produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectorOutput {
    /// Top-K proposals, `(box, objectness)`, sorted by descending objectness.
    pub proposals: Vec<(BBox, f64)>,
    /// One detection per kept proposal, same order.
    pub detections: Vec<Detection>,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layout_blocks_are_contiguous_and_cover_everything() {
        let arch = ArchConfig::default();
        let layout = arch.layout();
        let blocks = [
            ParamBlock::Backbone,
            ParamBlock::RpnHead,
            ParamBlock::RoiHead,
            ParamBlock::ConfHead,
        ];
        let mut cursor = 0;
        for b in blocks {
            let r = layout.block_range(b);
            assert_eq!(r.start, cursor, "block {b:?} not contiguous");
            cursor = r.end;
        }
        assert_eq!(cursor, layout.total);
    }

    #[test]
    fn init_is_deterministic_and_finite() {
        let arch = ArchConfig::default();
        let a = DetectorParams::init(&arch, 7);
        let b = DetectorParams::init(&arch, 7);
        let c = DetectorParams::init(&arch, 8);
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert!(a.all_finite());
    }

    #[test]
    fn digest_tracks_config_changes() {
        let arch = ArchConfig::default();
        let mut other = arch.clone();
        other.roi_count = 16;
        assert_ne!(arch.digest(), other.digest());
        assert_eq!(arch.digest(), ArchConfig::default().digest());
    }

    #[test]
    fn odd_image_size_rejected() {
        let arch = ArchConfig {
            image_h: 60,
            ..ArchConfig::default()
        };
        assert!(arch.validate().is_err());
    }
}
