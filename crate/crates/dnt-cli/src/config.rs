//! Run configuration: a flat-sectioned TOML file merged with command-line
//! overrides, then echoed verbatim into the run directory.
//!
//! Every key carries a desk-scale default, so an empty file (or no file at
//! all) is a valid configuration. Unknown keys are rejected with the
//! offending key named, which catches typos before any work starts.

use std::fs;
use std::path::Path;

use dnt::data::{AugmentationConfig, EraseConfig};
use dnt::lbp::{Binning, LbpConfig};
use dnt::model::{BackboneConfig, ConvBlockConfig, Fusion, ModelConfig, PatchGrid};
use dnt::train::TrainConfig;
use dnt::{Error, Result};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    pub input_size: usize,
    /// Output channels per conv block, in order.
    pub backbone: Vec<usize>,
    pub batchnorm: bool,
    pub patch_side: usize,
    pub lstm_hidden: usize,
    /// "Concatenation" or "Addition".
    pub fusion: Fusion,
    pub dropout_rate: f64,
    pub num_classes: usize,
    pub use_lbp: bool,
    pub use_patch_encoder: bool,
}

impl Default for ModelSection {
    fn default() -> Self {
        ModelSection {
            input_size: 56,
            backbone: vec![16, 32, 64, 128],
            batchnorm: true,
            patch_side: 12,
            lstm_hidden: 128,
            fusion: Fusion::Concatenation,
            dropout_rate: 0.2,
            num_classes: 4,
            use_lbp: true,
            use_patch_encoder: true,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AugmentationSection {
    pub rotation_degrees: f64,
    pub scale_jitter: f64,
    pub crop_size: usize,
    pub erase_enabled: bool,
    pub erase_min: f64,
    pub erase_max: f64,
    pub erase_fill: f64,
}

impl Default for AugmentationSection {
    fn default() -> Self {
        let desk = AugmentationConfig::desk();
        AugmentationSection {
            rotation_degrees: desk.rotation_degrees,
            scale_jitter: desk.scale_jitter,
            crop_size: desk.crop_size,
            erase_enabled: desk.erase.enabled,
            erase_min: desk.erase.scale_range.0,
            erase_max: desk.erase.scale_range.1,
            erase_fill: desk.erase.fill,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainingSection {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr0: f64,
    pub lr_drop_epoch: usize,
    pub lr_drop_factor: f64,
    pub seed: u64,
    pub deterministic: bool,
    pub val_fraction: f64,
    /// Extra checkpoint every k epochs; 0 writes only the final one.
    pub checkpoint_every: usize,
}

impl Default for TrainingSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        TrainingSection {
            epochs: t.epochs,
            batch_size: t.batch_size,
            lr0: t.lr0,
            lr_drop_epoch: t.lr_drop_epoch,
            lr_drop_factor: t.lr_drop_factor,
            seed: t.seed,
            deterministic: t.deterministic,
            val_fraction: t.val_fraction,
            checkpoint_every: 0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct DataSection {
    /// Path to the dataset manifest CSV.
    pub manifest: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LbpSection {
    /// Neighborhoods as "P,R" strings; P = 8 bins raw codes, larger P uses
    /// uniform binning.
    pub configs: Vec<String>,
    pub normalize: bool,
}

impl Default for LbpSection {
    fn default() -> Self {
        LbpSection {
            configs: vec!["8,1".into(), "8,2".into(), "16,1".into(), "16,2".into()],
            normalize: true,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub model: ModelSection,
    pub augmentation: AugmentationSection,
    pub training: TrainingSection,
    pub data: DataSection,
    pub lbp: LbpSection,
}

/// Parses one "P,R" neighborhood spec.
pub fn parse_lbp_config(spec: &str) -> Result<LbpConfig> {
    let (p_raw, r_raw) = spec
        .split_once(',')
        .ok_or_else(|| Error::Config(format!("LBP config '{spec}' is not of the form P,R")))?;
    let p: usize = p_raw
        .trim()
        .parse()
        .map_err(|_| Error::Config(format!("LBP config '{spec}': bad neighbor count")))?;
    let r: f64 = r_raw
        .trim()
        .parse()
        .map_err(|_| Error::Config(format!("LBP config '{spec}': bad radius")))?;
    let binning = if p == 8 { Binning::Raw256 } else { Binning::Uniform };
    LbpConfig::new(p, r, binning)
}

impl RunConfig {
    pub fn model_config(&self) -> Result<ModelConfig> {
        let m = &self.model;
        let cfg = ModelConfig {
            input_size: m.input_size,
            backbone: BackboneConfig {
                blocks: m
                    .backbone
                    .iter()
                    .map(|&out_channels| ConvBlockConfig { out_channels, batchnorm: m.batchnorm })
                    .collect(),
            },
            grid: PatchGrid::with_side(m.patch_side)?,
            lstm_hidden: m.lstm_hidden,
            lbp_configs: self
                .lbp
                .configs
                .iter()
                .map(|s| parse_lbp_config(s))
                .collect::<Result<Vec<_>>>()?,
            fusion: m.fusion,
            dropout_rate: m.dropout_rate,
            num_classes: m.num_classes,
            use_lbp: m.use_lbp,
            use_patch_encoder: m.use_patch_encoder,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn train_config(&self) -> Result<TrainConfig> {
        let t = &self.training;
        let cfg = TrainConfig {
            epochs: t.epochs,
            batch_size: t.batch_size,
            lr0: t.lr0,
            lr_drop_epoch: t.lr_drop_epoch,
            lr_drop_factor: t.lr_drop_factor,
            seed: t.seed,
            deterministic: t.deterministic,
            val_fraction: t.val_fraction,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn augmentation_config(&self) -> Result<AugmentationConfig> {
        let a = &self.augmentation;
        let cfg = AugmentationConfig {
            rotation_degrees: a.rotation_degrees,
            scale_jitter: a.scale_jitter,
            crop_size: a.crop_size,
            erase: EraseConfig {
                enabled: a.erase_enabled,
                scale_range: (a.erase_min, a.erase_max),
                fill: a.erase_fill,
            },
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("plain fields always serialize")
    }
}

/// Reads the config file (all keys optional), applies `section.key=value`
/// overrides, and deserializes. Unknown keys fail with the key named.
pub fn load_config(path: Option<&Path>, overrides: &[String]) -> Result<RunConfig> {
    let text = match path {
        Some(p) => fs::read_to_string(p)
            .map_err(|e| Error::Io { path: p.to_path_buf(), source: e })?,
        None => String::new(),
    };
    let mut doc: toml::Value = text
        .parse()
        .map_err(|e| Error::Config(format!("config file is not valid TOML: {e}")))?;
    for spec in overrides {
        apply_override(&mut doc, spec)?;
    }
    RunConfig::deserialize(doc).map_err(|e| Error::Config(format!("config: {e}")))
}

/// Applies one `section.key=value` override onto the raw TOML document.
/// The value is parsed as TOML (so numbers and booleans keep their types);
/// anything that does not parse is taken as a bare string.
pub fn apply_override(doc: &mut toml::Value, spec: &str) -> Result<()> {
    let (key_path, raw_value) = spec
        .split_once('=')
        .ok_or_else(|| Error::Usage(format!("override '{spec}' is not section.key=value")))?;
    let (section, key) = key_path
        .trim()
        .split_once('.')
        .ok_or_else(|| Error::Usage(format!("override key '{key_path}' needs a section")))?;
    let value: toml::Value = match format!("v = {}", raw_value.trim()).parse::<toml::Value>() {
        Ok(toml::Value::Table(t)) => t["v"].clone(),
        _ => toml::Value::String(raw_value.trim().to_string()),
    };
    let table = doc
        .as_table_mut()
        .ok_or_else(|| Error::Config("config root must be a table".into()))?;
    let entry = table
        .entry(section.to_string())
        .or_insert_with(|| toml::Value::Table(toml::map::Map::new()));
    let section_table = entry
        .as_table_mut()
        .ok_or_else(|| Error::Config(format!("config section '{section}' is not a table")))?;
    section_table.insert(key.trim().to_string(), value);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_config_is_the_desk_setup() {
        let cfg = load_config(None, &[]).unwrap();
        let model = cfg.model_config().unwrap();
        assert_eq!(model, ModelConfig::desk(4));
        assert_eq!(cfg.train_config().unwrap(), TrainConfig::default());
        assert_eq!(cfg.augmentation_config().unwrap(), AugmentationConfig::desk());
    }

    #[test]
    fn overrides_change_typed_values() {
        let overrides = vec![
            "training.epochs=3".to_string(),
            "model.fusion=\"Addition\"".to_string(),
            "training.deterministic=true".to_string(),
            "data.manifest=some/path.csv".to_string(),
        ];
        let cfg = load_config(None, &overrides).unwrap();
        assert_eq!(cfg.training.epochs, 3);
        assert_eq!(cfg.model.fusion, Fusion::Addition);
        assert!(cfg.training.deterministic);
        assert_eq!(cfg.data.manifest, "some/path.csv");
    }

    #[test]
    fn unknown_key_is_rejected_by_name() {
        let err = load_config(None, &["training.epcohs=3".to_string()]).unwrap_err();
        let msg = format!("{err}");
        assert!(msg.contains("epcohs"), "message should name the key: {msg}");
        assert!(matches!(err, Error::Config(_)));
    }

    #[test]
    fn malformed_override_is_a_usage_error() {
        let err = load_config(None, &["training.epochs".to_string()]).unwrap_err();
        assert!(matches!(err, Error::Usage(_)));
        let err = load_config(None, &["epochs=3".to_string()]).unwrap_err();
        assert!(matches!(err, Error::Usage(_)));
    }

    #[test]
    fn lbp_specs_parse_with_p_dependent_binning() {
        let c = parse_lbp_config("8,1").unwrap();
        assert_eq!((c.p, c.r, c.binning), (8, 1.0, Binning::Raw256));
        let c = parse_lbp_config("16,2.5").unwrap();
        assert_eq!((c.p, c.r, c.binning), (16, 2.5, Binning::Uniform));
        assert!(parse_lbp_config("16").is_err());
        assert!(parse_lbp_config("a,b").is_err());
    }

    #[test]
    fn resolved_toml_round_trips() {
        let cfg = load_config(None, &["training.epochs=7".to_string()]).unwrap();
        let text = cfg.to_toml();
        let reparsed: RunConfig = toml::from_str(&text).unwrap();
        assert_eq!(reparsed.training.epochs, 7);
        assert_eq!(reparsed.model.backbone, cfg.model.backbone);
    }
}
