//! Scene rasterizer: colored shapes on a muted background, with tight
//! ground-truth boxes by construction.

use rand::RngExt;

use super::{AnnotatedScene, BackgroundStyle, Domain, SceneSpec};
use crate::geometry::{iou, BBox};
use crate::image::Image;
use crate::rng::{seeded, Rng64};
use crate::Result;

/// Base color per class, jittered per instance. Classes are color-coded so
/// the translator's color map is what carries the domain gap.
const CLASS_COLORS: [[f64; 3]; 3] = [
    [0.85, 0.22, 0.18], // disc: red
    [0.18, 0.78, 0.28], // rectangle: green
    [0.22, 0.32, 0.88], // triangle: blue
];
const COLOR_JITTER: f64 = 0.06;
/// Placement retries per object before the scene restarts with one fewer.
const PLACE_RETRIES: usize = 40;
const MAX_PAIRWISE_IOU: f64 = 0.3;
/// Coverage supersampling grid per pixel.
const SUBSAMPLES: usize = 4;

#[derive(Clone, Copy)]
enum Shape {
    Disc,
    Rect,
    Triangle,
}

impl Shape {
    fn for_class(class_id: usize) -> Shape {
        match class_id {
            1 => Shape::Disc,
            2 => Shape::Rect,
            _ => Shape::Triangle,
        }
    }

    /// Point-inside test in box-relative coordinates `(u, v)` in `[0, 1]^2`.
    fn contains(&self, u: f64, v: f64) -> bool {
        match self {
            Shape::Disc => {
                let du = u - 0.5;
                let dv = v - 0.5;
                du * du + dv * dv <= 0.25
            }
            Shape::Rect => true,
            Shape::Triangle => {
                // Apex at top center, base along the bottom edge.
                let half_width = v * 0.5;
                (u - 0.5).abs() <= half_width
            }
        }
    }
}

/// Renders one annotated source-domain scene. Deterministic given the seed.
///
/// Objects are placed with bounded retries under the pairwise-overlap cap;
/// if placement keeps failing the whole scene restarts with one object
/// fewer, so generation always terminates.
pub fn render_scene(spec: &SceneSpec, seed: u64) -> Result<AnnotatedScene> {
    spec.validate()?;
    let mut rng = seeded(seed);
    let mut image = background(spec, &mut rng);
    let requested = rng.random_range(spec.objects_min..=spec.objects_max);

    let mut placed: Vec<(BBox, usize)> = Vec::new();
    let mut want = requested;
    'outer: loop {
        placed.clear();
        let attempt_target = want;
        for _ in 0..attempt_target {
            let mut ok = false;
            for _ in 0..PLACE_RETRIES {
                let w = rng.random_range(spec.size_min..=spec.size_max);
                let h = rng.random_range(spec.size_min..=spec.size_max);
                let x = rng.random_range(1.0..(spec.image_w as f64 - w - 1.0));
                let y = rng.random_range(1.0..(spec.image_h as f64 - h - 1.0));
                let candidate = BBox::new(x, y, w, h);
                if placed.iter().all(|(b, _)| iou(b, &candidate) <= MAX_PAIRWISE_IOU) {
                    let class = rng.random_range(1..=spec.num_classes);
                    placed.push((candidate, class));
                    ok = true;
                    break;
                }
            }
            if !ok {
                // Crowded: restart with fewer objects.
                want = want.saturating_sub(1);
                continue 'outer;
            }
        }
        break;
    }

    let mut boxes = Vec::with_capacity(placed.len());
    let mut classes = Vec::with_capacity(placed.len());
    for (bbox, class) in &placed {
        let base = CLASS_COLORS[class - 1];
        let color = [
            (base[0] + rng.random_range(-COLOR_JITTER..=COLOR_JITTER)).clamp(0.0, 1.0),
            (base[1] + rng.random_range(-COLOR_JITTER..=COLOR_JITTER)).clamp(0.0, 1.0),
            (base[2] + rng.random_range(-COLOR_JITTER..=COLOR_JITTER)).clamp(0.0, 1.0),
        ];
        rasterize(&mut image, bbox, Shape::for_class(*class), color);
        boxes.push(*bbox);
        classes.push(*class);
    }

    Ok(AnnotatedScene {
        id: format!("scene_{seed:016x}"),
        domain: Domain::Source,
        image,
        boxes,
        classes,
    })
}

fn background(spec: &SceneSpec, rng: &mut Rng64) -> Image {
    let muted = |rng: &mut Rng64| {
        [
            rng.random_range(0.38..0.62),
            rng.random_range(0.38..0.62),
            rng.random_range(0.38..0.62),
        ]
    };
    match spec.background {
        BackgroundStyle::Flat => Image::filled(spec.image_h, spec.image_w, muted(rng)),
        BackgroundStyle::Gradient => {
            let a = muted(rng);
            let b = muted(rng);
            let mut img = Image::new(spec.image_h, spec.image_w);
            let denom = (spec.image_h + spec.image_w - 2).max(1) as f64;
            for y in 0..spec.image_h {
                for x in 0..spec.image_w {
                    let t = (y + x) as f64 / denom;
                    img.set_pixel(
                        y,
                        x,
                        [
                            a[0] + t * (b[0] - a[0]),
                            a[1] + t * (b[1] - a[1]),
                            a[2] + t * (b[2] - a[2]),
                        ],
                    );
                }
            }
            img
        }
    }
}

/// Coverage-weighted compositing of a shape over the background.
fn rasterize(image: &mut Image, bbox: &BBox, shape: Shape, color: [f64; 3]) {
    let x1 = bbox.x.floor().max(0.0) as usize;
    let y1 = bbox.y.floor().max(0.0) as usize;
    let x2 = (bbox.x2().ceil() as usize).min(image.width());
    let y2 = (bbox.y2().ceil() as usize).min(image.height());
    let inv = 1.0 / (SUBSAMPLES * SUBSAMPLES) as f64;
    for py in y1..y2 {
        for px in x1..x2 {
            let mut coverage = 0.0;
            for sy in 0..SUBSAMPLES {
                for sx in 0..SUBSAMPLES {
                    let cx = px as f64 + (sx as f64 + 0.5) / SUBSAMPLES as f64;
                    let cy = py as f64 + (sy as f64 + 0.5) / SUBSAMPLES as f64;
                    let u = (cx - bbox.x) / bbox.w;
                    let v = (cy - bbox.y) / bbox.h;
                    if (0.0..1.0).contains(&u) && (0.0..1.0).contains(&v) && shape.contains(u, v)
                    {
                        coverage += 1.0;
                    }
                }
            }
            if coverage > 0.0 {
                let alpha = coverage * inv;
                let bg = image.pixel(py, px);
                image.set_pixel(
                    py,
                    px,
                    [
                        bg[0] + alpha * (color[0] - bg[0]),
                        bg[1] + alpha * (color[1] - bg[1]),
                        bg[2] + alpha * (color[2] - bg[2]),
                    ],
                );
            }
        }
    }
}
