//! Experiment configuration: a strict TOML schema mirroring the library
//! config types, with environment-variable overrides.
//!
//! Any key can be overridden by an environment variable named
//! `UMT_<PATH>` where `<PATH>` is the uppercased key path with `__`
//! separating nesting levels, e.g. `UMT_TRAIN__LAMBDA=0.02` or
//! `UMT_DATA__N_SOURCE=50`. Values are parsed as TOML scalars, falling back
//! to plain strings.

use serde::{Deserialize, Serialize};
use umt_core::detector::ArchConfig;
use umt_core::engine::TrainConfig;
use umt_core::synth::{shift_preset, DomainShiftSpec, SceneSpec};
use umt_core::{Error, Result};

pub const ENV_PREFIX: &str = "UMT_";

/// Domain-shift selection: a named preset or a fully explicit spec.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ShiftConfig {
    Preset { preset: String },
    Explicit(DomainShiftSpec),
}

impl Default for ShiftConfig {
    fn default() -> Self {
        ShiftConfig::Preset {
            preset: "strong".into(),
        }
    }
}

impl ShiftConfig {
    pub fn resolve(&self) -> Result<DomainShiftSpec> {
        match self {
            ShiftConfig::Preset { preset } => shift_preset(preset),
            ShiftConfig::Explicit(spec) => {
                spec.validate()?;
                Ok(spec.clone())
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    pub n_source: usize,
    pub n_target: usize,
    pub n_eval: usize,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            n_source: 200,
            n_target: 200,
            n_eval: 100,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub iou_threshold: f64,
    pub nms_iou: f64,
    pub sweep: Vec<f64>,
    pub dump_images: bool,
    /// Which half of a checkpoint to evaluate: `teacher` or `student`.
    pub model: ModelHalf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelHalf {
    Teacher,
    Student,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            iou_threshold: 0.5,
            nms_iou: 0.3,
            sweep: vec![0.5, 0.6, 0.7, 0.8, 0.9],
            dump_images: false,
            model: ModelHalf::Teacher,
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0 < self.iou_threshold && self.iou_threshold < 1.0) {
            return Err(Error::config("eval iou_threshold must lie in (0, 1)"));
        }
        if !(0.0..=1.0).contains(&self.nms_iou) {
            return Err(Error::config("eval nms_iou must lie in [0, 1]"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub out_dir: String,
    pub seeds: Vec<u64>,
    pub scene: SceneSpec,
    pub shift: ShiftConfig,
    pub arch: ArchConfig,
    pub data: DataConfig,
    pub train: TrainConfig,
    pub eval: EvalConfig,
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.out_dir.is_empty() {
            return Err(Error::config("out_dir must be set"));
        }
        if self.seeds.is_empty() {
            return Err(Error::config("seeds must contain at least one entry"));
        }
        self.scene.validate()?;
        self.shift.resolve()?;
        self.arch.validate()?;
        self.train.validate()?;
        self.eval.validate()?;
        if self.scene.image_h != self.arch.image_h || self.scene.image_w != self.arch.image_w {
            return Err(Error::config(format!(
                "scene image size {}x{} does not match arch {}x{}",
                self.scene.image_h, self.scene.image_w, self.arch.image_h, self.arch.image_w
            )));
        }
        Ok(())
    }

    /// FNV-1a over the canonical JSON encoding.
    pub fn digest(&self) -> u64 {
        let json = serde_json::to_string(self).expect("config serializes");
        let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
        for byte in json.as_bytes() {
            hash ^= *byte as u64;
            hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
        }
        hash
    }
}

/// Loads a config file, applies `UMT_*` environment overrides, validates.
pub fn load_config(path: &std::path::Path) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path)
        .map_err(|_| Error::missing(format!("config file {}", path.display())))?;
    let mut value: toml::Value = toml::from_str(&text)
        .map_err(|e| Error::config(format!("{}: {e}", path.display())))?;
    apply_env_overrides(&mut value, std::env::vars())?;
    let config: ExperimentConfig = value
        .try_into()
        .map_err(|e| Error::config(format!("{}: {e}", path.display())))?;
    config.validate()?;
    Ok(config)
}

/// Built-in defaults with overrides applied; used when no file is given.
pub fn default_config() -> Result<ExperimentConfig> {
    let mut value = toml::Value::Table(toml::map::Map::new());
    apply_env_overrides(&mut value, std::env::vars())?;
    let mut config: ExperimentConfig = value
        .try_into()
        .map_err(|e| Error::config(format!("defaults: {e}")))?;
    if config.out_dir.is_empty() {
        config.out_dir = "runs/default".into();
    }
    if config.seeds.is_empty() {
        config.seeds = vec![1, 2, 3];
    }
    config.validate()?;
    Ok(config)
}

fn apply_env_overrides(
    value: &mut toml::Value,
    vars: impl Iterator<Item = (String, String)>,
) -> Result<()> {
    let mut overrides: Vec<(String, String)> = vars
        .filter(|(k, _)| k.starts_with(ENV_PREFIX))
        .collect();
    overrides.sort();
    for (key, raw) in overrides {
        let path: Vec<String> = key[ENV_PREFIX.len()..]
            .split("__")
            .map(|s| s.to_ascii_lowercase())
            .collect();
        if path.iter().any(|p| p.is_empty()) {
            return Err(Error::config(format!("malformed override variable {key}")));
        }
        let parsed: toml::Value = toml::from_str::<toml::Table>(&format!("v = {raw}"))
            .map(|t| t["v"].clone())
            .unwrap_or(toml::Value::String(raw));
        let mut node = &mut *value;
        for part in &path[..path.len() - 1] {
            let table = node
                .as_table_mut()
                .ok_or_else(|| Error::config(format!("override {key} crosses a non-table")))?;
            node = table
                .entry(part.clone())
                .or_insert(toml::Value::Table(toml::map::Map::new()));
        }
        let table = node
            .as_table_mut()
            .ok_or_else(|| Error::config(format!("override {key} crosses a non-table")))?;
        table.insert(path.last().unwrap().clone(), parsed);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config_parses_with_defaults() {
        let cfg: ExperimentConfig = toml::from_str(
            r#"
            out_dir = "runs/x"
            seeds = [1]
            "#,
        )
        .unwrap();
        cfg.validate().unwrap();
        assert_eq!(cfg.train.distill_weight, 0.01);
        assert_eq!(cfg.eval.iou_threshold, 0.5);
        assert_eq!(cfg.shift, ShiftConfig::default());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let err = toml::from_str::<ExperimentConfig>(
            r#"
            out_dir = "runs/x"
            seeds = [1]
            made_up_key = 3
            "#,
        )
        .unwrap_err()
        .to_string();
        assert!(err.contains("made_up_key"), "{err}");
        let nested = toml::from_str::<ExperimentConfig>(
            r#"
            out_dir = "runs/x"
            seeds = [1]
            [train]
            lambdaa = 0.1
            "#,
        )
        .unwrap_err()
        .to_string();
        assert!(nested.contains("lambdaa"), "{nested}");
    }

    #[test]
    fn negative_lambda_is_rejected_by_name() {
        let cfg: ExperimentConfig = toml::from_str(
            r#"
            out_dir = "runs/x"
            seeds = [1]
            [train]
            lambda = -1.0
            "#,
        )
        .unwrap();
        let err = cfg.validate().unwrap_err().to_string();
        assert!(err.contains("lambda"), "{err}");
    }

    #[test]
    fn env_overrides_reach_nested_keys() {
        let mut value: toml::Value = toml::from_str(
            r#"
            out_dir = "runs/x"
            seeds = [1]
            [train]
            lambda = 0.01
            "#,
        )
        .unwrap();
        let vars = vec![
            ("UMT_TRAIN__LAMBDA".to_string(), "0.5".to_string()),
            ("UMT_OUT_DIR".to_string(), "\"runs/override\"".to_string()),
            ("UMT_DATA__N_SOURCE".to_string(), "7".to_string()),
            ("OTHER_VAR".to_string(), "ignored".to_string()),
        ];
        apply_env_overrides(&mut value, vars.into_iter()).unwrap();
        let cfg: ExperimentConfig = value.try_into().unwrap();
        assert_eq!(cfg.train.distill_weight, 0.5);
        assert_eq!(cfg.out_dir, "runs/override");
        assert_eq!(cfg.data.n_source, 7);
    }

    #[test]
    fn explicit_shift_table_is_accepted() {
        let cfg: ExperimentConfig = toml::from_str(
            r#"
            out_dir = "runs/x"
            seeds = [1]
            [shift]
            color_matrix = [[0.0, 0.0, 1.0], [0.0, 1.0, 0.0], [1.0, 0.0, 0.0]]
            "#,
        )
        .unwrap();
        let spec = cfg.shift.resolve().unwrap();
        assert_eq!(spec.color_matrix[0][2], 1.0);
        // And a preset by name.
        let cfg2: ExperimentConfig = toml::from_str(
            r#"
            out_dir = "runs/x"
            seeds = [1]
            [shift]
            preset = "mild"
            "#,
        )
        .unwrap();
        assert!(matches!(cfg2.shift, ShiftConfig::Preset { .. }));
    }
}
