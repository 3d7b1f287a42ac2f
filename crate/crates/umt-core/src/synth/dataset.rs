//! On-disk dataset layout:
//!
//! ```text
//! <root>/
//!   manifest.json
//!   {source_train,target_train,target_test,source_like,target_like}/
//!     images/<id>.png      # 8-bit preview
//!     raw/<id>.bin         # lossless f64 tensor, the one pipelines read
//!     annotations.jsonl    # one scene per line: id, domain, boxes, classes
//! ```
//!
//! `source_like` mirrors `target_train` scene-for-scene (same ids), and
//! `target_like` mirrors `source_train`. Target-train annotations are stored
//! for diagnostics; training code paths never read them.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::shift::{invert_shift, translate_scene, Direction};
use super::{render_scene, AnnotatedScene, Domain, DomainShiftSpec, SceneSpec};
use crate::geometry::BBox;
use crate::image::Image;
use crate::rng::{derive_seed, Stream};
use crate::{Error, Result};

pub const SPLIT_NAMES: [&str; 5] = [
    "source_train",
    "target_train",
    "target_test",
    "source_like",
    "target_like",
];

const FORMAT_VERSION: u32 = 1;

/// Split-id offsets keep render/shift seeds disjoint across splits.
const SOURCE_TRAIN_TAG: u64 = 0;
const TARGET_TRAIN_TAG: u64 = 1;
const TARGET_TEST_TAG: u64 = 2;
const TARGET_LIKE_TAG: u64 = 3;
const SOURCE_LIKE_TAG: u64 = 4;

fn split_seed(tag: u64, index: usize) -> u64 {
    (tag << 32) | index as u64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub format_version: u32,
    pub seed: u64,
    pub scene: SceneSpec,
    pub shift: DomainShiftSpec,
    pub counts: BTreeMap<String, usize>,
}

#[derive(Debug, Serialize, Deserialize)]
struct SceneRecord {
    id: String,
    domain: Domain,
    boxes: Vec<[f64; 4]>,
    classes: Vec<usize>,
}

impl SceneRecord {
    fn of(scene: &AnnotatedScene) -> Self {
        SceneRecord {
            id: scene.id.clone(),
            domain: scene.domain,
            boxes: scene.boxes.iter().map(|b| [b.x, b.y, b.w, b.h]).collect(),
            classes: scene.classes.clone(),
        }
    }
}

/// Renders and persists all five splits. Refuses to overwrite an existing
/// root unless `force` is set. Deterministic: the same arguments produce a
/// byte-identical directory.
#[allow(clippy::too_many_arguments)]
pub fn generate_datasets(
    root: &Path,
    scene_spec: &SceneSpec,
    shift: &DomainShiftSpec,
    n_source: usize,
    n_target: usize,
    n_eval: usize,
    seed: u64,
    force: bool,
) -> Result<DatasetManifest> {
    scene_spec.validate()?;
    shift.validate()?;
    if n_source == 0 || n_target == 0 || n_eval == 0 {
        return Err(Error::config("dataset sizes must all be at least 1"));
    }
    if root.exists() && root.read_dir().map(|mut d| d.next().is_some()).unwrap_or(false) {
        if !force {
            return Err(Error::config(format!(
                "output directory {} already exists; pass --force to overwrite",
                root.display()
            )));
        }
        fs::remove_dir_all(root)?;
    }
    fs::create_dir_all(root)?;

    // Source-domain training scenes.
    let mut source_train = Vec::with_capacity(n_source);
    for i in 0..n_source {
        let mut scene = render_scene(
            scene_spec,
            derive_seed(seed, Stream::SceneRender, split_seed(SOURCE_TRAIN_TAG, i)),
        )?;
        scene.id = format!("src_{i:05}");
        source_train.push(scene);
    }

    // Target scenes are fresh renders pushed through the forward shift.
    let render_target = |tag: u64, prefix: &str, count: usize| -> Result<Vec<AnnotatedScene>> {
        let mut out = Vec::with_capacity(count);
        for i in 0..count {
            let mut scene = render_scene(
                scene_spec,
                derive_seed(seed, Stream::SceneRender, split_seed(tag, i)),
            )?;
            scene.id = format!("{prefix}_{i:05}");
            scene.image = super::apply_shift(
                &scene.image,
                shift,
                derive_seed(seed, Stream::DomainShift, split_seed(tag, i)),
            )?;
            scene.domain = Domain::Target;
            out.push(scene);
        }
        Ok(out)
    };
    let target_train = render_target(TARGET_TRAIN_TAG, "tgt", n_target)?;
    let target_test = render_target(TARGET_TEST_TAG, "tst", n_eval)?;

    // Translated mirrors.
    let source_like: Vec<AnnotatedScene> = target_train
        .iter()
        .enumerate()
        .map(|(i, scene)| {
            let mut s = scene.clone();
            s.image = invert_shift(
                &scene.image,
                shift,
                derive_seed(seed, Stream::InverseNoise, split_seed(SOURCE_LIKE_TAG, i)),
            )?;
            s.domain = Domain::SourceLike;
            Ok(s)
        })
        .collect::<Result<_>>()?;
    let target_like: Vec<AnnotatedScene> = source_train
        .iter()
        .enumerate()
        .map(|(i, scene)| {
            translate_scene(
                scene,
                shift,
                Direction::Apply,
                derive_seed(seed, Stream::DomainShift, split_seed(TARGET_LIKE_TAG, i)),
            )
        })
        .collect::<Result<_>>()?;

    write_split(&root.join("source_train"), &source_train)?;
    write_split(&root.join("target_train"), &target_train)?;
    write_split(&root.join("target_test"), &target_test)?;
    write_split(&root.join("source_like"), &source_like)?;
    write_split(&root.join("target_like"), &target_like)?;

    let mut counts = BTreeMap::new();
    counts.insert("source_train".into(), source_train.len());
    counts.insert("target_train".into(), target_train.len());
    counts.insert("target_test".into(), target_test.len());
    counts.insert("source_like".into(), source_like.len());
    counts.insert("target_like".into(), target_like.len());
    let manifest = DatasetManifest {
        format_version: FORMAT_VERSION,
        seed,
        scene: scene_spec.clone(),
        shift: shift.clone(),
        counts,
    };
    let json = serde_json::to_string_pretty(&manifest)?;
    fs::write(root.join("manifest.json"), json)?;
    Ok(manifest)
}

fn write_split(dir: &Path, scenes: &[AnnotatedScene]) -> Result<()> {
    fs::create_dir_all(dir.join("images"))?;
    fs::create_dir_all(dir.join("raw"))?;
    let mut jsonl = Vec::new();
    for scene in scenes {
        scene.check_invariants()?;
        scene
            .image
            .write_png(&dir.join("images").join(format!("{}.png", scene.id)))?;
        scene
            .image
            .write_raw(&dir.join("raw").join(format!("{}.bin", scene.id)))?;
        serde_json::to_writer(&mut jsonl, &SceneRecord::of(scene))?;
        jsonl.push(b'\n');
    }
    let mut file = fs::File::create(dir.join("annotations.jsonl"))?;
    file.write_all(&jsonl)?;
    Ok(())
}

pub fn load_manifest(root: &Path) -> Result<DatasetManifest> {
    let path = root.join("manifest.json");
    let text = fs::read_to_string(&path)
        .map_err(|_| Error::missing(format!("dataset manifest {}", path.display())))?;
    let manifest: DatasetManifest = serde_json::from_str(&text)?;
    if manifest.format_version != FORMAT_VERSION {
        return Err(Error::corrupt(format!(
            "dataset format version {} (this build reads {FORMAT_VERSION})",
            manifest.format_version
        )));
    }
    Ok(manifest)
}

/// Loads one split from the lossless raw tensors, in annotation order.
pub fn load_split(root: &Path, split: &str) -> Result<Vec<AnnotatedScene>> {
    if !SPLIT_NAMES.contains(&split) {
        return Err(Error::config(format!("unknown split `{split}`")));
    }
    let dir = root.join(split);
    let ann_path = dir.join("annotations.jsonl");
    let file = fs::File::open(&ann_path)
        .map_err(|_| Error::missing(format!("split annotations {}", ann_path.display())))?;
    let mut scenes = Vec::new();
    for line in BufReader::new(file).lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record: SceneRecord = serde_json::from_str(&line)?;
        let raw_path: PathBuf = dir.join("raw").join(format!("{}.bin", record.id));
        let image = Image::read_raw(&raw_path)?;
        let scene = AnnotatedScene {
            id: record.id,
            domain: record.domain,
            image,
            boxes: record
                .boxes
                .iter()
                .map(|b| BBox::new(b[0], b[1], b[2], b[3]))
                .collect(),
            classes: record.classes,
        };
        scene.check_invariants()?;
        scenes.push(scene);
    }
    Ok(scenes)
}
