//! Raw network plumbing: planar tensors, strided convolutions with tanh
//! activations, and the linear heads. Forward and backward passes are written
//! by hand; [`super::loss`] composes them into loss gradients.

use super::{DetectorParams, Layout, KERNEL};
use crate::image::Image;

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Tensor3 {
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub data: Vec<f64>,
}

impl Tensor3 {
    pub fn new(c: usize, h: usize, w: usize) -> Self {
        Tensor3 {
            c,
            h,
            w,
            data: vec![0.0; c * h * w],
        }
    }

    pub fn from_image(img: &Image) -> Self {
        Tensor3 {
            c: 3,
            h: img.height(),
            w: img.width(),
            data: img.data().to_vec(),
        }
    }

    #[inline]
    pub fn at(&self, c: usize, y: usize, x: usize) -> f64 {
        self.data[(c * self.h + y) * self.w + x]
    }

    #[inline]
    pub fn at_mut(&mut self, c: usize, y: usize, x: usize) -> &mut f64 {
        &mut self.data[(c * self.h + y) * self.w + x]
    }

    #[inline]
    pub fn row(&self, c: usize, y: usize) -> &[f64] {
        let start = (c * self.h + y) * self.w;
        &self.data[start..start + self.w]
    }

    /// Feature vector of one cell, gathered across channels.
    pub fn cell(&self, y: usize, x: usize) -> Vec<f64> {
        (0..self.c).map(|c| self.at(c, y, x)).collect()
    }
}

/// 3x3 convolution, stride 2, zero padding 1, tanh activation.
fn conv_s2_tanh(inp: &Tensor3, w: &[f64], b: &[f64], out_c: usize) -> Tensor3 {
    let (ic, ih, iw) = (inp.c, inp.h, inp.w);
    let (oh, ow) = (ih / 2, iw / 2);
    let mut out = Tensor3::new(out_c, oh, ow);
    for o in 0..out_c {
        let wbase = o * ic * KERNEL * KERNEL;
        for y in 0..oh {
            for x in 0..ow {
                let mut acc = b[o];
                for i in 0..ic {
                    let kbase = wbase + i * KERNEL * KERNEL;
                    for ky in 0..KERNEL {
                        let iy = (2 * y + ky) as isize - 1;
                        if iy < 0 || iy >= ih as isize {
                            continue;
                        }
                        let row = inp.row(i, iy as usize);
                        let krow = &w[kbase + ky * KERNEL..kbase + ky * KERNEL + KERNEL];
                        for kx in 0..KERNEL {
                            let ix = (2 * x + kx) as isize - 1;
                            if ix < 0 || ix >= iw as isize {
                                continue;
                            }
                            acc += krow[kx] * row[ix as usize];
                        }
                    }
                }
                *out.at_mut(o, y, x) = acc.tanh();
            }
        }
    }
    out
}

/// Backward of [`conv_s2_tanh`]. `d_out` is the gradient w.r.t. the
/// activation; tanh is differentiated from the stored output. Accumulates
/// into `d_w`/`d_b` and, when given, the input gradient.
#[allow(clippy::too_many_arguments)]
fn conv_s2_tanh_backward(
    inp: &Tensor3,
    out: &Tensor3,
    w: &[f64],
    d_out: &Tensor3,
    d_w: &mut [f64],
    d_b: &mut [f64],
    mut d_inp: Option<&mut Tensor3>,
) {
    let (ic, ih, iw) = (inp.c, inp.h, inp.w);
    let (oh, ow) = (out.h, out.w);
    for o in 0..out.c {
        let wbase = o * ic * KERNEL * KERNEL;
        for y in 0..oh {
            for x in 0..ow {
                let a = out.at(o, y, x);
                let d_pre = d_out.at(o, y, x) * (1.0 - a * a);
                if d_pre == 0.0 {
                    continue;
                }
                d_b[o] += d_pre;
                for i in 0..ic {
                    let kbase = wbase + i * KERNEL * KERNEL;
                    for ky in 0..KERNEL {
                        let iy = (2 * y + ky) as isize - 1;
                        if iy < 0 || iy >= ih as isize {
                            continue;
                        }
                        for kx in 0..KERNEL {
                            let ix = (2 * x + kx) as isize - 1;
                            if ix < 0 || ix >= iw as isize {
                                continue;
                            }
                            let widx = kbase + ky * KERNEL + kx;
                            d_w[widx] += d_pre * inp.at(i, iy as usize, ix as usize);
                            if let Some(d) = d_inp.as_deref_mut() {
                                *d.at_mut(i, iy as usize, ix as usize) += d_pre * w[widx];
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Cached activations of one backbone pass.
pub(crate) struct Activations {
    pub input: Tensor3,
    pub a1: Tensor3,
    pub a2: Tensor3,
    pub feat: Tensor3,
}

pub(crate) fn backbone_forward(params: &DetectorParams, image: &Image) -> Activations {
    let arch = params.arch();
    let layout = arch.layout();
    let p = params.as_slice();
    let input = Tensor3::from_image(image);
    let a1 = conv_s2_tanh(
        &input,
        &p[layout.conv_w[0].clone()],
        &p[layout.conv_b[0].clone()],
        arch.channels[0],
    );
    let a2 = conv_s2_tanh(
        &a1,
        &p[layout.conv_w[1].clone()],
        &p[layout.conv_b[1].clone()],
        arch.channels[1],
    );
    let feat = conv_s2_tanh(
        &a2,
        &p[layout.conv_w[2].clone()],
        &p[layout.conv_b[2].clone()],
        arch.channels[2],
    );
    Activations {
        input,
        a1,
        a2,
        feat,
    }
}

/// Chains the three conv backwards from a feature-map gradient, accumulating
/// into the flat parameter gradient.
pub(crate) fn backbone_backward(
    params: &DetectorParams,
    acts: &Activations,
    d_feat: &Tensor3,
    grad: &mut [f64],
) {
    let layout = params.arch().layout();
    let p = params.as_slice();
    let mut d_a2 = Tensor3::new(acts.a2.c, acts.a2.h, acts.a2.w);
    {
        let (head, tail) = split_two(grad, &layout, 2);
        conv_s2_tanh_backward(
            &acts.a2,
            &acts.feat,
            &p[layout.conv_w[2].clone()],
            d_feat,
            head,
            tail,
            Some(&mut d_a2),
        );
    }
    let mut d_a1 = Tensor3::new(acts.a1.c, acts.a1.h, acts.a1.w);
    {
        let (head, tail) = split_two(grad, &layout, 1);
        conv_s2_tanh_backward(
            &acts.a1,
            &acts.a2,
            &p[layout.conv_w[1].clone()],
            &d_a2,
            head,
            tail,
            Some(&mut d_a1),
        );
    }
    {
        let (head, tail) = split_two(grad, &layout, 0);
        conv_s2_tanh_backward(
            &acts.input,
            &acts.a1,
            &p[layout.conv_w[0].clone()],
            &d_a1,
            head,
            tail,
            None,
        );
    }
}

/// Borrows the weight and bias gradient slices of one conv layer at once.
fn split_two<'g>(
    grad: &'g mut [f64],
    layout: &Layout,
    layer: usize,
) -> (&'g mut [f64], &'g mut [f64]) {
    let wr = layout.conv_w[layer].clone();
    let br = layout.conv_b[layer].clone();
    debug_assert_eq!(wr.end, br.start);
    let (_, rest) = grad.split_at_mut(wr.start);
    let (w, rest) = rest.split_at_mut(wr.len());
    let (b, _) = rest.split_at_mut(br.len());
    (w, b)
}

/// RPN head output over the whole grid, indexed by anchor.
pub(crate) struct RpnOut {
    pub obj_logits: Vec<f64>,
    pub deltas: Vec<[f64; 4]>,
}

pub(crate) fn rpn_forward(params: &DetectorParams, feat: &Tensor3) -> RpnOut {
    let arch = params.arch();
    let layout = arch.layout();
    let p = params.as_slice();
    let w = &p[layout.rpn_w.clone()];
    let b = &p[layout.rpn_b.clone()];
    let per_cell = arch.anchors_per_cell();
    let c3 = feat.c;
    let mut obj_logits = Vec::with_capacity(arch.num_anchors());
    let mut deltas = Vec::with_capacity(arch.num_anchors());
    for y in 0..feat.h {
        for x in 0..feat.w {
            let f = feat.cell(y, x);
            for a in 0..per_cell {
                let row = |j: usize| {
                    let base = (a * 5 + j) * c3;
                    let mut acc = b[a * 5 + j];
                    for (k, fk) in f.iter().enumerate() {
                        acc += w[base + k] * fk;
                    }
                    acc
                };
                obj_logits.push(row(0));
                deltas.push([row(1), row(2), row(3), row(4)]);
            }
        }
    }
    RpnOut { obj_logits, deltas }
}

/// Per-proposal head outputs.
pub(crate) struct RoiOut {
    pub cls_logits: Vec<f64>,
    pub reg: [f64; 4],
    /// Clamped confidence logit and whether the clamp was hit (gradient is
    /// zero through an active clamp).
    pub conf_logit: f64,
    pub conf_clamped: bool,
}

pub(crate) fn roi_forward(params: &DetectorParams, f: &[f64]) -> RoiOut {
    let arch = params.arch();
    let layout = arch.layout();
    let p = params.as_slice();
    let ncls = arch.num_classes + 1;
    let c3 = f.len();
    let cls_w = &p[layout.roi_cls_w.clone()];
    let cls_b = &p[layout.roi_cls_b.clone()];
    let mut cls_logits = vec![0.0; ncls];
    for (k, logit) in cls_logits.iter_mut().enumerate() {
        let mut acc = cls_b[k];
        for (j, fj) in f.iter().enumerate() {
            acc += cls_w[k * c3 + j] * fj;
        }
        *logit = acc;
    }
    let reg_w = &p[layout.roi_reg_w.clone()];
    let reg_b = &p[layout.roi_reg_b.clone()];
    let mut reg = [0.0; 4];
    for (k, r) in reg.iter_mut().enumerate() {
        let mut acc = reg_b[k];
        for (j, fj) in f.iter().enumerate() {
            acc += reg_w[k * c3 + j] * fj;
        }
        *r = acc;
    }
    let conf_w = &p[layout.conf_w.clone()];
    let conf_b = &p[layout.conf_b.clone()];
    let mut conf = conf_b[0];
    for (j, fj) in f.iter().enumerate() {
        conf += conf_w[j] * fj;
    }
    let limit = arch.conf_logit_limit;
    let conf_clamped = conf.abs() > limit;
    RoiOut {
        cls_logits,
        reg,
        conf_logit: conf.clamp(-limit, limit),
        conf_clamped,
    }
}

pub(crate) fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

/// Numerically stable binary cross-entropy on a logit.
pub(crate) fn bce_with_logit(z: f64, target: f64) -> f64 {
    z.max(0.0) - z * target + (-z.abs()).exp().ln_1p()
}

/// Log-softmax of a logit vector.
pub(crate) fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + logits.iter().map(|z| (z - m).exp()).sum::<f64>().ln();
    logits.iter().map(|z| z - lse).collect()
}

/// Smooth-L1 (Huber with transition at 1) and its derivative.
pub(crate) fn smooth_l1(x: f64) -> f64 {
    let a = x.abs();
    if a < 1.0 {
        0.5 * x * x
    } else {
        a - 0.5
    }
}

pub(crate) fn smooth_l1_grad(x: f64) -> f64 {
    if x.abs() < 1.0 {
        x
    } else {
        x.signum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_params_give_tanh_zero_activations() {
        let arch = super::super::ArchConfig::default();
        let params = DetectorParams::zeros(&arch);
        let img = Image::filled(64, 64, [0.3, 0.6, 0.9]);
        let acts = backbone_forward(&params, &img);
        assert!(acts.feat.data.iter().all(|v| *v == 0.0));
        assert_eq!(acts.feat.h, arch.feat_h());
        assert_eq!(acts.feat.w, arch.feat_w());
    }

    #[test]
    fn bce_matches_direct_formula() {
        for (z, t) in [(0.0, 1.0), (2.5, 0.0), (-3.0, 1.0), (0.7, 0.3)] {
            let p: f64 = sigmoid(z);
            let direct = -(t * p.ln() + (1.0 - t) * (1.0 - p).ln());
            assert!((bce_with_logit(z, t) - direct).abs() < 1e-12);
        }
    }

    #[test]
    fn log_softmax_normalizes() {
        let lq = log_softmax(&[1.0, -2.0, 0.5, 3.0]);
        let total: f64 = lq.iter().map(|v| v.exp()).sum();
        assert!((total - 1.0).abs() < 1e-12);
    }
}
