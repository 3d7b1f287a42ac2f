//! Annotated-image dumps: ground truth in green, confident detections in
//! red with a stamped score label.

use std::path::Path;

use crate::detector::{forward, DetectorParams};
use crate::image::{draw_box_outline, draw_label};
use crate::synth::AnnotatedScene;
use crate::Result;

const GT_COLOR: [f64; 3] = [0.1, 0.9, 0.1];
const DET_COLOR: [f64; 3] = [0.95, 0.1, 0.1];
/// Detections below this score are not drawn.
pub const DUMP_SCORE_THRESHOLD: f64 = 0.6;

/// Writes one annotated PNG per scene into `dir`.
pub fn dump_annotated_images(
    params: &DetectorParams,
    scenes: &[AnnotatedScene],
    dir: &Path,
) -> Result<usize> {
    std::fs::create_dir_all(dir)?;
    for scene in scenes {
        let out = forward(params, &scene.image)?;
        let mut canvas = scene.image.clone();
        for bbox in &scene.boxes {
            draw_box_outline(&mut canvas, bbox, GT_COLOR);
        }
        for det in &out.detections {
            if det.score > DUMP_SCORE_THRESHOLD {
                draw_box_outline(&mut canvas, &det.bbox, DET_COLOR);
                let label = format!("{:.2}", det.score);
                draw_label(
                    &mut canvas,
                    det.bbox.y.round() as i64 - 6,
                    det.bbox.x.round() as i64,
                    &label,
                    DET_COLOR,
                );
            }
        }
        canvas.write_png(&dir.join(format!("{}.png", scene.id)))?;
    }
    Ok(scenes.len())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::detector::ArchConfig;
    use crate::synth::{render_scene, SceneSpec};

    #[test]
    fn writes_one_png_per_scene() {
        let dir = std::env::temp_dir().join(format!("umt_dump_{}", std::process::id()));
        std::fs::remove_dir_all(&dir).ok();
        let params = DetectorParams::init(&ArchConfig::default(), 3);
        let scenes: Vec<_> = (0..2)
            .map(|i| render_scene(&SceneSpec::default(), 800 + i).unwrap())
            .collect();
        let n = dump_annotated_images(&params, &scenes, &dir).unwrap();
        assert_eq!(n, 2);
        for scene in &scenes {
            assert!(dir.join(format!("{}.png", scene.id)).exists());
        }
        std::fs::remove_dir_all(&dir).ok();
    }
}
