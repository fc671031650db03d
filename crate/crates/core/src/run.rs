//! The run configuration file: one TOML document with a table per component,
//! plus dotted-path overrides from the command line.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::config::ModelConfig;
use crate::data::{AugmentationSpec, DatasetLayout, Normalizer, SamplingConfig};
use crate::error::{Error, Result};
use crate::infer::SlidingWindowConfig;
use crate::train::TrainConfig;

pub use toml::Value as TomlValue;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub root: PathBuf,
    pub image_subdir: String,
    pub mask_subdir: String,
    pub patch_size: u32,
    pub patches_per_image: usize,
    /// Fraction of images held out by name hash; 0 disables validation.
    pub val_fraction: f64,
    pub foreground_balanced: bool,
    pub mean: [f64; 3],
    pub std: [f64; 3],
}

impl Default for DataConfig {
    fn default() -> Self {
        let n = Normalizer::default();
        Self {
            root: PathBuf::from("data"),
            image_subdir: "image".into(),
            mask_subdir: "mask".into(),
            patch_size: 224,
            patches_per_image: 8,
            val_fraction: 0.1,
            foreground_balanced: false,
            mean: n.mean.map(f64::from),
            std: n.std.map(f64::from),
        }
    }
}

impl DataConfig {
    pub fn layout(&self) -> DatasetLayout {
        DatasetLayout {
            image_subdir: self.image_subdir.clone(),
            mask_subdir: self.mask_subdir.clone(),
        }
    }

    pub fn normalizer(&self) -> Normalizer {
        Normalizer {
            mean: self.mean.map(|v| v as f32),
            std: self.std.map(|v| v as f32),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    pub overlay_alpha: f64,
    /// Also write `<name>_prob.tif` with raw probabilities.
    pub write_probability: bool,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            overlay_alpha: 0.4,
            write_probability: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub output_dir: PathBuf,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pretrained_manifest: Option<PathBuf>,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub data: DataConfig,
    pub aug: AugmentationSpec,
    pub infer: SlidingWindowConfig,
    pub output: OutputConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            output_dir: PathBuf::from("runs/default"),
            pretrained_manifest: None,
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            data: DataConfig::default(),
            aug: AugmentationSpec::default(),
            infer: SlidingWindowConfig::default(),
            output: OutputConfig::default(),
        }
    }
}

/// A `section.key=value` assignment. Values are parsed as TOML and fall
/// back to a bare string.
#[derive(Debug, Clone, PartialEq)]
pub struct Override {
    pub path: Vec<String>,
    pub value: toml::Value,
}

impl Override {
    pub fn parse(text: &str) -> Result<Self> {
        let text = text.strip_prefix("--").unwrap_or(text);
        let (key, raw) = text
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("override `{text}` is not of the form key=value")))?;
        let path: Vec<String> = key.split('.').map(str::to_string).collect();
        if path.iter().any(|p| p.is_empty()) {
            return Err(Error::Config(format!("override key `{key}` has an empty segment")));
        }
        let value = toml::from_str::<toml::Table>(&format!("v = {raw}"))
            .ok()
            .and_then(|mut t| t.remove("v"))
            .unwrap_or_else(|| toml::Value::String(raw.to_string()));
        Ok(Self { path, value })
    }

    pub fn apply(&self, doc: &mut toml::Table) -> Result<()> {
        let (last, parents) = self.path.split_last().expect("non-empty path");
        let mut table = doc;
        for seg in parents {
            let entry = table
                .entry(seg.clone())
                .or_insert_with(|| toml::Value::Table(toml::Table::new()));
            table = entry
                .as_table_mut()
                .ok_or_else(|| Error::Config(format!("`{seg}` in override `{}` is not a table", self.path.join("."))))?;
        }
        table.insert(last.clone(), self.value.clone());
        Ok(())
    }
}

/// `data.batch_size` is accepted as an alias of `train.batch_size`.
fn move_batch_size_alias(doc: &mut toml::Table) -> Result<()> {
    let Some(alias) = doc
        .get_mut("data")
        .and_then(toml::Value::as_table_mut)
        .and_then(|d| d.remove("batch_size"))
    else {
        return Ok(());
    };
    let train = doc
        .entry("train")
        .or_insert_with(|| toml::Value::Table(toml::Table::new()))
        .as_table_mut()
        .ok_or_else(|| Error::Config("`train` must be a table".into()))?;
    match train.get("batch_size") {
        Some(existing) if *existing != alias => Err(Error::Config(format!(
            "data.batch_size = {alias} conflicts with train.batch_size = {existing}; set one of them"
        ))),
        _ => {
            train.insert("batch_size".into(), alias);
            Ok(())
        }
    }
}

impl RunConfig {
    pub fn from_toml_str(text: &str, overrides: &[Override]) -> Result<Self> {
        let mut doc: toml::Table = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        for o in overrides {
            o.apply(&mut doc)?;
        }
        move_batch_size_alias(&mut doc)?;
        let cfg: RunConfig = toml::Value::Table(doc)
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads a config file; `None` means all defaults plus overrides.
    pub fn load(path: Option<&Path>, overrides: &[Override]) -> Result<Self> {
        let text = match path {
            Some(p) => std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?,
            None => String::new(),
        };
        Self::from_toml_str(&text, overrides)
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.train.validate()?;
        self.aug.validate()?;
        self.infer.validate()?;
        self.sampling().validate()?;
        if !(0.0..1.0).contains(&self.data.val_fraction) {
            return Err(Error::Config(format!(
                "data.val_fraction = {} must lie in [0, 1)",
                self.data.val_fraction
            )));
        }
        if !(0.0..=1.0).contains(&self.output.overlay_alpha) {
            return Err(Error::Config(format!(
                "output.overlay_alpha = {} must lie in [0, 1]",
                self.output.overlay_alpha
            )));
        }
        Ok(())
    }

    pub fn sampling(&self) -> SamplingConfig {
        SamplingConfig {
            patch_size: self.data.patch_size,
            patches_per_image: self.data.patches_per_image,
            batch_size: self.train.batch_size,
            foreground_balanced: self.data.foreground_balanced,
            augmentation: self.aug,
            normalizer: self.data.normalizer(),
        }
    }

    /// The resolved configuration as TOML; loading it reproduces `self`.
    pub fn echo(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Value(e.to_string()))
    }
}
