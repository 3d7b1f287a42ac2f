//! Command implementations behind the CLI verbs.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde_json::json;
use umt_core::detector::DetectorParams;
use umt_core::engine::{
    read_checkpoint, run_training, Checkpoint, TrainConfig, TrainDatasets, Variant,
};
use umt_core::eval::{
    bias_diagnostic, classification_error_analysis, detect_all, dump_annotated_images, iou_sweep,
    localization_error_analysis, map_at, EvalReport, SweepPoint, TopKRule,
};
use umt_core::synth::{
    generate_datasets, load_manifest, load_split, translate_scene, Direction, SPLIT_NAMES,
};
use umt_core::{Error, Result};

use crate::config::{ExperimentConfig, ModelHalf};
use crate::manifest::RunManifest;
use crate::plot;

/// `gen-data`: render and persist the five dataset splits.
pub fn cmd_gen_data(
    config: &ExperimentConfig,
    out: Option<&Path>,
    seed: Option<u64>,
    force: bool,
) -> Result<PathBuf> {
    let root = out
        .map(Path::to_path_buf)
        .unwrap_or_else(|| Path::new(&config.out_dir).join("dataset"));
    let seed = seed.unwrap_or_else(|| config.seeds[0]);
    let shift = config.shift.resolve()?;
    let started = Instant::now();
    let manifest = generate_datasets(
        &root,
        &config.scene,
        &shift,
        config.data.n_source,
        config.data.n_target,
        config.data.n_eval,
        seed,
        force,
    )?;
    let mut run = RunManifest::new("gen-data", config.digest());
    for split in SPLIT_NAMES {
        run.add_artifact(&root, &root.join(split).join("annotations.jsonl"));
    }
    run.details = json!({
        "seed": seed,
        "counts": manifest.counts,
        "wall_ms": started.elapsed().as_millis() as u64,
    });
    run.write(&root)?;
    println!("dataset written to {}", root.display());
    Ok(root)
}

pub struct TrainSummary {
    pub run_dir: PathBuf,
    pub final_checkpoint: PathBuf,
    pub metrics_csv: PathBuf,
}

/// `train`: one variant, one seed. Without `--resume` any previous run in
/// the same directory is cleared first.
pub fn cmd_train(
    config: &ExperimentConfig,
    variant: Variant,
    seed: u64,
    data_dir: Option<&Path>,
    out: Option<&Path>,
    resume: bool,
) -> Result<TrainSummary> {
    let data_root = data_dir
        .map(Path::to_path_buf)
        .unwrap_or_else(|| Path::new(&config.out_dir).join("dataset"));
    if !data_root.join("manifest.json").exists() {
        return Err(Error::missing(format!(
            "dataset at {} (run `umt gen-data` first)",
            data_root.display()
        )));
    }
    load_manifest(&data_root)?;
    let datasets = TrainDatasets::load(&data_root)?;
    let run_dir = out.map(Path::to_path_buf).unwrap_or_else(|| {
        Path::new(&config.out_dir)
            .join("runs")
            .join(variant.name())
            .join(format!("seed_{seed}"))
    });
    if !resume && run_dir.exists() {
        fs::remove_dir_all(&run_dir)?;
    }
    fs::create_dir_all(&run_dir)?;
    let train_cfg = TrainConfig {
        variant,
        seed,
        ..config.train.clone()
    };
    let started = Instant::now();
    let outcome = run_training(&config.arch, &train_cfg, &datasets, &run_dir, resume, None)?;
    let wall_ms = started.elapsed().as_millis() as u64;

    // Loss curve from the metrics CSV; decorative next to the CSV itself.
    let points: Vec<(f64, f64)> = fs::read_to_string(&outcome.metrics_csv)?
        .lines()
        .skip(1)
        .filter_map(|line| {
            let mut cols = line.split(',');
            let step: f64 = cols.next()?.parse().ok()?;
            let _lr = cols.next()?;
            let total: f64 = cols.next()?.parse().ok()?;
            Some((step, total))
        })
        .collect();
    let _ = plot::line_chart(
        &run_dir.join("loss.svg"),
        &format!("{} seed {seed}: total loss", variant.name()),
        &points,
    );

    let mut run = RunManifest::new("train", config.digest());
    run.add_artifact(&run_dir, &outcome.final_checkpoint);
    run.add_artifact(&run_dir, &outcome.metrics_csv);
    run.details = json!({
        "variant": variant.name(),
        "seed": seed,
        "steps": outcome.state.step,
        "wall_ms": wall_ms,
    });
    run.write(&run_dir)?;
    Ok(TrainSummary {
        final_checkpoint: outcome.final_checkpoint,
        metrics_csv: outcome.metrics_csv,
        run_dir,
    })
}

pub struct EvalOptions {
    pub split: String,
    pub sweep: Option<Vec<f64>>,
    pub error_analysis: bool,
    pub bias_diagnostic: bool,
    pub dump_images: bool,
    pub iou_threshold: Option<f64>,
    pub model: Option<ModelHalf>,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions {
            split: "target_test".into(),
            sweep: None,
            error_analysis: false,
            bias_diagnostic: false,
            dump_images: false,
            iou_threshold: None,
            model: None,
        }
    }
}

/// Loads a checkpoint and returns the requested model half, enforcing the
/// architecture digest.
pub fn load_model(
    config: &ExperimentConfig,
    checkpoint_path: &Path,
    half: ModelHalf,
) -> Result<(DetectorParams, u64)> {
    let ckpt: Checkpoint = read_checkpoint(checkpoint_path)?;
    let step = ckpt.step;
    let (student, teacher, _, _, _) = ckpt.into_params(&config.arch)?;
    let params = match half {
        ModelHalf::Teacher => teacher,
        ModelHalf::Student => student,
    };
    Ok((params, step))
}

/// `eval`: reports for one checkpoint on one dataset split.
pub fn cmd_eval(
    config: &ExperimentConfig,
    checkpoint_path: &Path,
    data_dir: Option<&Path>,
    out: Option<&Path>,
    opts: &EvalOptions,
) -> Result<PathBuf> {
    let data_root = data_dir
        .map(Path::to_path_buf)
        .unwrap_or_else(|| Path::new(&config.out_dir).join("dataset"));
    let half = opts.model.unwrap_or(config.eval.model);
    let (params, step) = load_model(config, checkpoint_path, half)?;
    let scenes = load_split(&data_root, &opts.split)?;
    if scenes.is_empty() {
        return Err(Error::missing(format!(
            "split {} at {} is empty",
            opts.split,
            data_root.display()
        )));
    }
    let iou_threshold = opts.iou_threshold.unwrap_or(config.eval.iou_threshold);
    let out_dir = out.map(Path::to_path_buf).unwrap_or_else(|| {
        Path::new(&config.out_dir)
            .join("eval")
            .join(format!("step_{step:06}_{}", opts.split))
    });
    fs::create_dir_all(&out_dir)?;

    let ctx = detect_all(&params, &scenes, config.eval.nms_iou)?;
    let (per_class, skipped_classes, map) = map_at(&ctx, iou_threshold);
    for class in &skipped_classes {
        eprintln!("warning: class {class} has no ground truth in {}; excluded from mAP", opts.split);
    }
    let mut report = EvalReport {
        checkpoint_id: checkpoint_path
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_default(),
        dataset_id: format!("{}/{}", dataset_id(&data_root), opts.split),
        iou_threshold,
        per_class,
        skipped_classes,
        map,
        error_analysis: None,
        classification: None,
        sweep: None,
    };
    let mut run = RunManifest::new("eval", config.digest());

    if let Some(thresholds) = &opts.sweep {
        let curve = iou_sweep(&ctx, thresholds)?;
        let csv_path = out_dir.join("sweep.csv");
        write_sweep_csv(&csv_path, &curve)?;
        run.add_artifact(&out_dir, &csv_path);
        let _ = plot::line_chart(
            &out_dir.join("sweep.svg"),
            "mAP vs IoU threshold",
            &curve.iter().map(|p| (p.iou_threshold, p.map)).collect::<Vec<_>>(),
        );
        report.sweep = Some(curve);
    }
    if opts.error_analysis {
        // Best-effort on degenerate runs (e.g. a barely-trained model that
        // emits no detection for any annotated class).
        match localization_error_analysis(&ctx, TopKRule::PerClassGtCount) {
            Ok(analysis) => report.error_analysis = Some(analysis),
            Err(e) => eprintln!("warning: localization analysis skipped: {e}"),
        }
        match classification_error_analysis(&ctx) {
            Ok(analysis) => report.classification = Some(analysis),
            Err(e) => eprintln!("warning: classification analysis skipped: {e}"),
        }
    }
    if opts.bias_diagnostic {
        // Source-like views of the same split, produced with an exact
        // inverse so the pair isolates the domain gap itself.
        let data_manifest = load_manifest(&data_root)?;
        let mut shift = data_manifest.shift.clone();
        shift.inverse_noise = 0.0;
        let source_like: Vec<_> = scenes
            .iter()
            .map(|s| translate_scene(s, &shift, Direction::Invert, 0))
            .collect::<Result<_>>()?;
        let diag = bias_diagnostic(
            &params,
            &scenes,
            &source_like,
            iou_threshold,
            config.eval.nms_iou,
        )?;
        let path = out_dir.join("bias_diagnostic.json");
        fs::write(&path, serde_json::to_string_pretty(&diag)?)?;
        run.add_artifact(&out_dir, &path);
        println!(
            "bias diagnostic: target mAP {:.4}, source-like mAP {:.4}, difference {:+.4}",
            diag.map_target, diag.map_source_like, diag.difference
        );
    }
    if opts.dump_images {
        let dumps = out_dir.join("images");
        dump_annotated_images(&params, &scenes, &dumps)?;
        run.add_artifact(&out_dir, &dumps.join(format!("{}.png", scenes[0].id)));
    }

    let report_path = out_dir.join("report.json");
    fs::write(&report_path, serde_json::to_string_pretty(&report)?)?;
    let per_class_path = out_dir.join("per_class.csv");
    write_per_class_csv(&per_class_path, &report)?;
    run.add_artifact(&out_dir, &report_path);
    run.add_artifact(&out_dir, &per_class_path);
    run.details = json!({
        "checkpoint": report.checkpoint_id,
        "dataset": report.dataset_id,
        "model": match half { ModelHalf::Teacher => "teacher", ModelHalf::Student => "student" },
        "map": report.map,
    });
    run.write(&out_dir)?;
    println!(
        "mAP@{iou_threshold} on {}: {:.4} ({} classes)",
        report.dataset_id,
        report.map,
        report.per_class.len()
    );
    Ok(out_dir)
}

fn dataset_id(root: &Path) -> String {
    root.file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| "dataset".into())
}

fn write_sweep_csv(path: &Path, curve: &[SweepPoint]) -> Result<()> {
    let mut text = String::from("iou_threshold,map\n");
    for p in curve {
        text.push_str(&format!("{},{}\n", p.iou_threshold, p.map));
    }
    fs::write(path, text)?;
    Ok(())
}

fn write_per_class_csv(path: &Path, report: &EvalReport) -> Result<()> {
    let mut text = String::from("class_id,ap,gt_count,det_count\n");
    for c in &report.per_class {
        text.push_str(&format!(
            "{},{},{},{}\n",
            c.class_id, c.ap, c.gt_count, c.det_count
        ));
    }
    fs::write(path, text)?;
    Ok(())
}

#[derive(Debug, Clone, serde::Serialize)]
pub struct LadderCell {
    pub variant: String,
    pub seed: u64,
    pub map: Option<f64>,
    pub error: Option<String>,
    pub wall_ms: u64,
}

#[derive(Debug, Clone, serde::Serialize)]
pub struct LadderReport {
    pub cells: Vec<LadderCell>,
    /// `(variant, median target-test mAP over seeds)`.
    pub medians: Vec<(String, f64)>,
}

pub fn median(mut values: Vec<f64>) -> f64 {
    values.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = values.len();
    if n == 0 {
        f64::NAN
    } else if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// `ablation`: trains and evaluates every variant for every seed, fanning
/// independent cells out across worker threads. Per-cell failures are
/// recorded and the ladder continues.
pub fn cmd_ablation(
    config: &ExperimentConfig,
    seeds: &[u64],
    data_dir: Option<&Path>,
    out: Option<&Path>,
) -> Result<LadderReport> {
    let data_root = data_dir
        .map(Path::to_path_buf)
        .unwrap_or_else(|| Path::new(&config.out_dir).join("dataset"));
    if !data_root.join("manifest.json").exists() {
        return Err(Error::missing(format!(
            "dataset at {} (run `umt gen-data` first)",
            data_root.display()
        )));
    }
    let out_dir = out
        .map(Path::to_path_buf)
        .unwrap_or_else(|| Path::new(&config.out_dir).join("ablation"));
    fs::create_dir_all(&out_dir)?;
    let datasets = TrainDatasets::load(&data_root)?;
    let target_test = load_split(&data_root, "target_test")?;

    let mut jobs: Vec<(Variant, u64)> = Vec::new();
    for &seed in seeds {
        for variant in Variant::ALL {
            jobs.push((variant, seed));
        }
    }
    let next = std::sync::atomic::AtomicUsize::new(0);
    let workers = std::thread::available_parallelism()
        .map(|n| n.get())
        .unwrap_or(1)
        .min(jobs.len().max(1));
    let mut results: Vec<(usize, LadderCell)> = Vec::with_capacity(jobs.len());
    let results_mutex = std::sync::Mutex::new(&mut results);
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let idx = next.fetch_add(1, std::sync::atomic::Ordering::SeqCst);
                if idx >= jobs.len() {
                    break;
                }
                let (variant, seed) = jobs[idx];
                let cell = run_cell(config, &datasets, &target_test, &out_dir, variant, seed);
                results_mutex.lock().unwrap().push((idx, cell));
            });
        }
    });
    results.sort_by_key(|(idx, _)| *idx);
    let cells: Vec<LadderCell> = results.into_iter().map(|(_, c)| c).collect();

    let mut medians = Vec::new();
    for variant in Variant::ALL {
        let values: Vec<f64> = cells
            .iter()
            .filter(|c| c.variant == variant.name())
            .filter_map(|c| c.map)
            .collect();
        if !values.is_empty() {
            medians.push((variant.name().to_string(), median(values)));
        }
    }
    let report = LadderReport { cells, medians };

    let csv_path = out_dir.join("ladder.csv");
    let mut csv = String::from("variant,seed,map\n");
    for cell in &report.cells {
        csv.push_str(&format!(
            "{},{},{}\n",
            cell.variant,
            cell.seed,
            cell.map.map_or_else(|| "error".into(), |m| m.to_string())
        ));
    }
    fs::write(&csv_path, csv)?;
    let table_path = out_dir.join("ladder.txt");
    fs::write(&table_path, render_table(&report, seeds))?;
    let _ = plot::bar_chart(
        &out_dir.join("ladder.svg"),
        "median target-test mAP per variant",
        &report
            .medians
            .iter()
            .map(|(v, m)| (v.clone(), *m))
            .collect::<Vec<_>>(),
    );
    let mut run = RunManifest::new("ablation", config.digest());
    run.add_artifact(&out_dir, &csv_path);
    run.add_artifact(&out_dir, &table_path);
    run.details = serde_json::to_value(&report)?;
    run.write(&out_dir)?;
    print!("{}", render_table(&report, seeds));
    Ok(report)
}

fn run_cell(
    config: &ExperimentConfig,
    datasets: &TrainDatasets,
    target_test: &[umt_core::synth::AnnotatedScene],
    out_dir: &Path,
    variant: Variant,
    seed: u64,
) -> LadderCell {
    let started = Instant::now();
    let attempt = || -> Result<f64> {
        let run_dir = out_dir.join(variant.name()).join(format!("seed_{seed}"));
        if run_dir.exists() {
            fs::remove_dir_all(&run_dir)?;
        }
        let train_cfg = TrainConfig {
            variant,
            seed,
            ..config.train.clone()
        };
        let outcome = run_training(&config.arch, &train_cfg, datasets, &run_dir, false, None)?;
        let params = match config.eval.model {
            ModelHalf::Teacher => &outcome.state.teacher,
            ModelHalf::Student => &outcome.state.student,
        };
        let report = umt_core::eval::mean_ap(
            params,
            target_test,
            config.eval.iou_threshold,
            config.eval.nms_iou,
        )?;
        Ok(report.map)
    };
    let (map, error) = match attempt() {
        Ok(map) => (Some(map), None),
        Err(e) => (None, Some(e.to_string())),
    };
    LadderCell {
        variant: variant.name().to_string(),
        seed,
        map,
        error,
        wall_ms: started.elapsed().as_millis() as u64,
    }
}

fn render_table(report: &LadderReport, seeds: &[u64]) -> String {
    let mut out = String::new();
    out.push_str(&format!("{:<12}", "variant"));
    for seed in seeds {
        out.push_str(&format!(" {:>10}", format!("seed {seed}")));
    }
    out.push_str(&format!(" {:>10}\n", "median"));
    for variant in Variant::ALL {
        out.push_str(&format!("{:<12}", variant.name()));
        for seed in seeds {
            let cell = report
                .cells
                .iter()
                .find(|c| c.variant == variant.name() && c.seed == *seed);
            match cell.and_then(|c| c.map) {
                Some(map) => out.push_str(&format!(" {map:>10.4}")),
                None => out.push_str(&format!(" {:>10}", "error")),
            }
        }
        let median = report
            .medians
            .iter()
            .find(|(v, _)| v == variant.name())
            .map(|(_, m)| *m);
        match median {
            Some(m) => out.push_str(&format!(" {m:>10.4}\n")),
            None => out.push_str(&format!(" {:>10}\n", "-")),
        }
    }
    out
}

/// `translate`: apply or invert the configured shift over a split
/// directory, writing a new split-shaped directory.
pub fn cmd_translate(
    config: &ExperimentConfig,
    input: &Path,
    out: &Path,
    direction: Direction,
    seed: u64,
    force: bool,
) -> Result<PathBuf> {
    let scenes = load_split_dir(input)?;
    if out.exists() && out.read_dir().map(|mut d| d.next().is_some()).unwrap_or(false) {
        if !force {
            return Err(Error::config(format!(
                "output directory {} already exists; pass --force to overwrite",
                out.display()
            )));
        }
        fs::remove_dir_all(out)?;
    }
    let shift = config.shift.resolve()?;
    let translated: Vec<_> = scenes
        .iter()
        .enumerate()
        .map(|(i, s)| {
            translate_scene(
                s,
                &shift,
                direction,
                umt_core::rng::derive_seed(seed, umt_core::rng::Stream::DomainShift, i as u64),
            )
        })
        .collect::<Result<_>>()?;
    write_split_dir(out, &translated)?;
    println!(
        "translated {} scenes ({}) into {}",
        translated.len(),
        match direction {
            Direction::Apply => "to target style",
            Direction::Invert => "to source style",
        },
        out.display()
    );
    Ok(out.to_path_buf())
}

/// Reads a bare split directory (raw tensors + annotations), independent of
/// the five fixed split names.
fn load_split_dir(dir: &Path) -> Result<Vec<umt_core::synth::AnnotatedScene>> {
    // Reuse the dataset loader by faking a root: the loader only joins
    // `<root>/<split>`, so point it at the parent.
    let parent = dir
        .parent()
        .ok_or_else(|| Error::config(format!("{} has no parent directory", dir.display())))?;
    let split = dir
        .file_name()
        .and_then(|n| n.to_str())
        .ok_or_else(|| Error::config(format!("{} is not a named directory", dir.display())))?;
    if SPLIT_NAMES.contains(&split) {
        load_split(parent, split)
    } else {
        Err(Error::config(format!(
            "translate expects one of the dataset splits ({}), got `{split}`",
            SPLIT_NAMES.join(", ")
        )))
    }
}

fn write_split_dir(dir: &Path, scenes: &[umt_core::synth::AnnotatedScene]) -> Result<()> {
    fs::create_dir_all(dir.join("images"))?;
    fs::create_dir_all(dir.join("raw"))?;
    let mut jsonl = String::new();
    for scene in scenes {
        scene.check_invariants()?;
        scene
            .image
            .write_png(&dir.join("images").join(format!("{}.png", scene.id)))?;
        scene
            .image
            .write_raw(&dir.join("raw").join(format!("{}.bin", scene.id)))?;
        jsonl.push_str(&serde_json::to_string(&json!({
            "id": scene.id,
            "domain": scene.domain,
            "boxes": scene.boxes.iter().map(|b| [b.x, b.y, b.w, b.h]).collect::<Vec<_>>(),
            "classes": scene.classes,
        }))?);
        jsonl.push('\n');
    }
    fs::write(dir.join("annotations.jsonl"), jsonl)?;
    Ok(())
}
