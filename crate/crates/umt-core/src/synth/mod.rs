//! The synthetic two-domain detection benchmark: scene rendering, the
//! parametric invertible domain translator, and dataset persistence.

mod dataset;
mod render;
mod shift;

pub use dataset::{
    generate_datasets, load_manifest, load_split, DatasetManifest, SPLIT_NAMES,
};
pub use render::render_scene;
pub use shift::{apply_shift, hue_rotation, invert_shift, shift_preset, translate_scene, Direction};

use serde::{Deserialize, Serialize};

use crate::geometry::BBox;
use crate::image::Image;
use crate::{Error, Result};

/// Which distribution a scene belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Domain {
    Source,
    Target,
    SourceLike,
    TargetLike,
}

/// Background fill of rendered scenes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackgroundStyle {
    Flat,
    Gradient,
}

/// Scene generator configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SceneSpec {
    pub image_h: usize,
    pub image_w: usize,
    /// Foreground classes: 1 = disc, 2 = rectangle, 3 = triangle.
    pub num_classes: usize,
    pub objects_min: usize,
    pub objects_max: usize,
    pub size_min: f64,
    pub size_max: f64,
    pub background: BackgroundStyle,
}

impl Default for SceneSpec {
    fn default() -> Self {
        SceneSpec {
            image_h: 64,
            image_w: 64,
            num_classes: 3,
            objects_min: 1,
            objects_max: 3,
            size_min: 16.0,
            size_max: 26.0,
            background: BackgroundStyle::Gradient,
        }
    }
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        if self.num_classes == 0 || self.num_classes > 3 {
            return Err(Error::config(
                "scene num_classes must be between 1 and 3 (one shape kind per class)",
            ));
        }
        if self.objects_min > self.objects_max {
            return Err(Error::config("scene objects_min exceeds objects_max"));
        }
        if self.size_min <= 4.0 || self.size_min > self.size_max {
            return Err(Error::config("scene size range must satisfy 4 < min <= max"));
        }
        let max_dim = self.image_h.min(self.image_w) as f64;
        if self.size_max > max_dim - 2.0 {
            return Err(Error::config(format!(
                "scene size_max {} does not fit a {}x{} image",
                self.size_max, self.image_h, self.image_w
            )));
        }
        Ok(())
    }
}

/// Texture overlays the translator can mix in. Identified by a small integer
/// in configs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Texture {
    None,
    DiagonalStripes,
    Checker,
}

impl Texture {
    pub fn from_id(id: u32) -> Result<Texture> {
        match id {
            0 => Ok(Texture::None),
            1 => Ok(Texture::DiagonalStripes),
            2 => Ok(Texture::Checker),
            other => Err(Error::config(format!("unknown texture id {other}"))),
        }
    }

    /// Zero-centered pattern value at a pixel; deterministic in `(x, y)`.
    pub fn value(&self, y: usize, x: usize) -> f64 {
        match self {
            Texture::None => 0.0,
            Texture::DiagonalStripes => {
                ((x + y) as f64 * std::f64::consts::TAU / 12.0).sin()
            }
            Texture::Checker => {
                if (x / 6 + y / 6).is_multiple_of(2) {
                    1.0
                } else {
                    -1.0
                }
            }
        }
    }
}

/// The parametric domain translator: a per-channel affine color map plus
/// structured additive noise and a texture overlay, with an explicit
/// inverse-fidelity knob for the reverse direction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DomainShiftSpec {
    pub color_matrix: [[f64; 3]; 3],
    pub color_offset: [f64; 3],
    /// Amplitude of the structured (smooth, zero-mean) additive noise.
    pub noise_amp: f64,
    pub texture_id: u32,
    pub texture_strength: f64,
    /// Fresh-noise amplitude injected when inverting, modelling an imperfect
    /// learned translator. Zero gives the exact analytic inverse.
    pub inverse_noise: f64,
}

impl Default for DomainShiftSpec {
    fn default() -> Self {
        DomainShiftSpec {
            color_matrix: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
            color_offset: [0.0; 3],
            noise_amp: 0.0,
            texture_id: 0,
            texture_strength: 0.0,
            inverse_noise: 0.0,
        }
    }
}

impl DomainShiftSpec {
    pub fn validate(&self) -> Result<()> {
        if self.inverse_noise < 0.0 {
            return Err(Error::config("inverse_noise must be >= 0"));
        }
        if self.noise_amp < 0.0 {
            return Err(Error::config("noise_amp must be >= 0"));
        }
        Texture::from_id(self.texture_id)?;
        let cond = shift::condition_number(&self.color_matrix)?;
        if cond > 1e3 {
            return Err(Error::config(format!(
                "color matrix condition number {cond:.1} exceeds 1e3"
            )));
        }
        Ok(())
    }
}

/// One rendered and annotated scene.
#[derive(Debug, Clone, PartialEq)]
pub struct AnnotatedScene {
    pub id: String,
    pub domain: Domain,
    pub image: Image,
    pub boxes: Vec<BBox>,
    pub classes: Vec<usize>,
}

impl AnnotatedScene {
    pub fn gts(&self) -> Vec<(BBox, usize)> {
        self.boxes.iter().cloned().zip(self.classes.iter().cloned()).collect()
    }

    pub fn check_invariants(&self) -> Result<()> {
        if self.boxes.len() != self.classes.len() {
            return Err(Error::corrupt(format!(
                "scene {}: {} boxes vs {} classes",
                self.id,
                self.boxes.len(),
                self.classes.len()
            )));
        }
        let (h, w) = (self.image.height() as f64, self.image.width() as f64);
        for b in &self.boxes {
            if !b.is_valid() || b.x < 0.0 || b.y < 0.0 || b.x2() > w || b.y2() > h {
                return Err(Error::corrupt(format!(
                    "scene {}: box {b:?} outside {w}x{h}",
                    self.id
                )));
            }
        }
        Ok(())
    }
}
