//! Paired-view augmentation: a shared geometric transform (random crop and
//! pad, realized as one affine warp) plus independent photometric jitter per
//! view. Sharing the geometry is what keeps teacher-frame pseudo boxes valid
//! in the student frame.

use rand::RngExt;
use serde::{Deserialize, Serialize};

use crate::geometry::BBox;
use crate::image::Image;
use crate::rng::Rng64;
use crate::synth::hue_rotation;
use crate::{Error, Result};

/// Gray used for padded border regions.
const PAD_VALUE: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AugmentConfig {
    /// Up to this fraction of each dimension is cropped away.
    pub crop_fraction: f64,
    /// Up to this fraction of each dimension becomes padded border.
    pub pad_fraction: f64,
    /// Photometric jitter amplitudes.
    pub brightness: f64,
    pub contrast: f64,
    pub hue_degrees: f64,
    pub saturation: f64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig {
            crop_fraction: 0.1,
            pad_fraction: 0.1,
            brightness: 0.08,
            contrast: 0.15,
            hue_degrees: 15.0,
            saturation: 0.2,
        }
    }
}

impl AugmentConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..0.95).contains(&self.crop_fraction) {
            return Err(Error::config(
                "augment crop_fraction must lie in [0, 0.95); larger crops leave no image",
            ));
        }
        if !(0.0..0.95).contains(&self.pad_fraction) {
            return Err(Error::config("augment pad_fraction must lie in [0, 0.95)"));
        }
        for (name, v) in [
            ("brightness", self.brightness),
            ("contrast", self.contrast),
            ("saturation", self.saturation),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::config(format!("augment {name} must lie in [0, 1]")));
            }
        }
        if !(0.0..=180.0).contains(&self.hue_degrees) {
            return Err(Error::config("augment hue_degrees must lie in [0, 180]"));
        }
        Ok(())
    }

    fn is_geometric_identity(&self) -> bool {
        self.crop_fraction == 0.0 && self.pad_fraction == 0.0
    }
}

/// Affine map from original coordinates into view coordinates:
/// `xv = x * scale_x + offset_x` (same for y). Invertible on box
/// coordinates by construction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeoTransform {
    pub scale_x: f64,
    pub scale_y: f64,
    pub offset_x: f64,
    pub offset_y: f64,
    pub out_h: usize,
    pub out_w: usize,
}

impl GeoTransform {
    pub fn identity(h: usize, w: usize) -> Self {
        GeoTransform {
            scale_x: 1.0,
            scale_y: 1.0,
            offset_x: 0.0,
            offset_y: 0.0,
            out_h: h,
            out_w: w,
        }
    }

    /// Samples a crop rectangle and a padded placement; the two compose into
    /// one affine map. The output size equals the input size, as the
    /// detector expects fixed dimensions.
    pub fn sample(rng: &mut Rng64, cfg: &AugmentConfig, h: usize, w: usize) -> Self {
        if cfg.is_geometric_identity() {
            return GeoTransform::identity(h, w);
        }
        let (hf, wf) = (h as f64, w as f64);
        let crop_keep = 1.0 - rng.random_range(0.0..=1.0) * cfg.crop_fraction;
        let crop_w = (wf * crop_keep).max(1.0);
        let crop_h = (hf * crop_keep).max(1.0);
        let crop_x = rng.random_range(0.0..=(wf - crop_w));
        let crop_y = rng.random_range(0.0..=(hf - crop_h));
        let pad_keep = 1.0 - rng.random_range(0.0..=1.0) * cfg.pad_fraction;
        let dst_w = (wf * pad_keep).max(1.0);
        let dst_h = (hf * pad_keep).max(1.0);
        let dst_x = rng.random_range(0.0..=(wf - dst_w));
        let dst_y = rng.random_range(0.0..=(hf - dst_h));
        let scale_x = dst_w / crop_w;
        let scale_y = dst_h / crop_h;
        GeoTransform {
            scale_x,
            scale_y,
            offset_x: dst_x - crop_x * scale_x,
            offset_y: dst_y - crop_y * scale_y,
            out_h: h,
            out_w: w,
        }
    }

    /// Resamples the image under the transform (bilinear, gray border).
    pub fn warp(&self, img: &Image) -> Image {
        let mut out = Image::new(self.out_h, self.out_w);
        let (ih, iw) = (img.height() as f64, img.width() as f64);
        for y in 0..self.out_h {
            let sy = (y as f64 + 0.5 - self.offset_y) / self.scale_y - 0.5;
            for x in 0..self.out_w {
                let sx = (x as f64 + 0.5 - self.offset_x) / self.scale_x - 0.5;
                let px = if sx < -0.5 || sy < -0.5 || sx > iw - 0.5 || sy > ih - 0.5 {
                    [PAD_VALUE; 3]
                } else {
                    bilinear(img, sy, sx)
                };
                out.set_pixel(y, x, px);
            }
        }
        out
    }

    pub fn map_box(&self, b: &BBox) -> BBox {
        BBox::new(
            b.x * self.scale_x + self.offset_x,
            b.y * self.scale_y + self.offset_y,
            b.w * self.scale_x,
            b.h * self.scale_y,
        )
    }

    pub fn unmap_box(&self, b: &BBox) -> BBox {
        BBox::new(
            (b.x - self.offset_x) / self.scale_x,
            (b.y - self.offset_y) / self.scale_y,
            b.w / self.scale_x,
            b.h / self.scale_y,
        )
    }
}

fn bilinear(img: &Image, y: f64, x: f64) -> [f64; 3] {
    let x0 = x.floor();
    let y0 = y.floor();
    let fx = x - x0;
    let fy = y - y0;
    let clamp_x = |v: f64| (v.max(0.0) as usize).min(img.width() - 1);
    let clamp_y = |v: f64| (v.max(0.0) as usize).min(img.height() - 1);
    let (x0i, x1i) = (clamp_x(x0), clamp_x(x0 + 1.0));
    let (y0i, y1i) = (clamp_y(y0), clamp_y(y0 + 1.0));
    let mut out = [0.0; 3];
    for c in 0..3 {
        let top = img.get(c, y0i, x0i) * (1.0 - fx) + img.get(c, y0i, x1i) * fx;
        let bottom = img.get(c, y1i, x0i) * (1.0 - fx) + img.get(c, y1i, x1i) * fx;
        out[c] = top * (1.0 - fy) + bottom * fy;
    }
    out
}

/// One augmented view together with the geometric record that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct AugmentedView {
    pub image: Image,
    pub transform: GeoTransform,
}

/// Independent per-view photometric jitter: brightness, contrast, hue and
/// saturation, each skipped when its amplitude is zero.
pub fn photometric_jitter(img: &mut Image, rng: &mut Rng64, cfg: &AugmentConfig) {
    if cfg.brightness > 0.0 {
        let delta = rng.random_range(-cfg.brightness..=cfg.brightness);
        for v in img.data_mut() {
            *v += delta;
        }
    }
    if cfg.contrast > 0.0 {
        let gain = 1.0 + rng.random_range(-cfg.contrast..=cfg.contrast);
        for v in img.data_mut() {
            *v = (*v - 0.5) * gain + 0.5;
        }
    }
    if cfg.saturation > 0.0 {
        let gain = 1.0 + rng.random_range(-cfg.saturation..=cfg.saturation);
        for y in 0..img.height() {
            for x in 0..img.width() {
                let p = img.pixel(y, x);
                let luma = 0.299 * p[0] + 0.587 * p[1] + 0.114 * p[2];
                img.set_pixel(
                    y,
                    x,
                    [
                        luma + gain * (p[0] - luma),
                        luma + gain * (p[1] - luma),
                        luma + gain * (p[2] - luma),
                    ],
                );
            }
        }
    }
    if cfg.hue_degrees > 0.0 {
        let angle = rng.random_range(-cfg.hue_degrees..=cfg.hue_degrees);
        let rot = hue_rotation(angle);
        for y in 0..img.height() {
            for x in 0..img.width() {
                let p = img.pixel(y, x);
                img.set_pixel(
                    y,
                    x,
                    [
                        rot[0][0] * p[0] + rot[0][1] * p[1] + rot[0][2] * p[2],
                        rot[1][0] * p[0] + rot[1][1] * p[1] + rot[1][2] * p[2],
                        rot[2][0] * p[0] + rot[2][1] * p[1] + rot[2][2] * p[2],
                    ],
                );
            }
        }
    }
    img.clip01();
}

/// Teacher/student views of one image: shared geometry, independent
/// photometric jitter.
pub fn augment_pair(
    image: &Image,
    rng: &mut Rng64,
    cfg: &AugmentConfig,
) -> Result<(AugmentedView, AugmentedView)> {
    augment_cross_pair(image, image, rng, cfg)
}

/// Teacher/student views of two translation-paired images. The geometric
/// transform is sampled once and applied to both, so boxes predicted on the
/// teacher view are directly valid on the student view.
pub fn augment_cross_pair(
    teacher_image: &Image,
    student_image: &Image,
    rng: &mut Rng64,
    cfg: &AugmentConfig,
) -> Result<(AugmentedView, AugmentedView)> {
    cfg.validate()?;
    let geo = GeoTransform::sample(rng, cfg, teacher_image.height(), teacher_image.width());
    let mut teacher = geo.warp(teacher_image);
    let mut student = geo.warp(student_image);
    photometric_jitter(&mut teacher, rng, cfg);
    photometric_jitter(&mut student, rng, cfg);
    Ok((
        AugmentedView {
            image: teacher,
            transform: geo,
        },
        AugmentedView {
            image: student,
            transform: geo,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;

    fn test_image() -> Image {
        let mut img = Image::new(64, 64);
        for (i, v) in img.data_mut().iter_mut().enumerate() {
            *v = ((i * 13) % 89) as f64 / 88.0;
        }
        img
    }

    fn zero_cfg() -> AugmentConfig {
        AugmentConfig {
            crop_fraction: 0.0,
            pad_fraction: 0.0,
            brightness: 0.0,
            contrast: 0.0,
            hue_degrees: 0.0,
            saturation: 0.0,
        }
    }

    #[test]
    fn zero_amplitude_views_equal_input() {
        let img = test_image();
        let mut rng = seeded(5);
        let (t, s) = augment_pair(&img, &mut rng, &zero_cfg()).unwrap();
        assert_eq!(t.image, img);
        assert_eq!(s.image, img);
        assert_eq!(t.transform, GeoTransform::identity(64, 64));
    }

    #[test]
    fn same_seed_gives_identical_view_pairs() {
        let img = test_image();
        let cfg = AugmentConfig::default();
        let (t1, s1) = augment_pair(&img, &mut seeded(9), &cfg).unwrap();
        let (t2, s2) = augment_pair(&img, &mut seeded(9), &cfg).unwrap();
        assert_eq!(t1, t2);
        assert_eq!(s1, s2);
        // Photometric jitter is independent per view.
        assert_ne!(t1.image, s1.image);
        assert_eq!(t1.transform, s1.transform);
    }

    #[test]
    fn box_roundtrip_through_transform_is_exact() {
        let cfg = AugmentConfig::default();
        let mut rng = seeded(17);
        for _ in 0..20 {
            let geo = GeoTransform::sample(&mut rng, &cfg, 64, 64);
            let b = BBox::new(11.25, 7.5, 20.0, 17.75);
            let back = geo.unmap_box(&geo.map_box(&b));
            assert!((back.x - b.x).abs() < 1e-9);
            assert!((back.y - b.y).abs() < 1e-9);
            assert!((back.w - b.w).abs() < 1e-9);
            assert!((back.h - b.h).abs() < 1e-9);
        }
    }

    #[test]
    fn overlarge_crop_fraction_is_config_error() {
        let cfg = AugmentConfig {
            crop_fraction: 1.0,
            ..AugmentConfig::default()
        };
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
    }

    #[test]
    fn cross_pair_shares_geometry_across_different_images() {
        let a = test_image();
        let b = Image::filled(64, 64, [0.2, 0.6, 0.4]);
        let cfg = AugmentConfig::default();
        let (t, s) = augment_cross_pair(&a, &b, &mut seeded(33), &cfg).unwrap();
        assert_eq!(t.transform, s.transform);
    }
}
