//! Model shape configuration.
//!
//! Every width in the assembled network is a pure function of these
//! values, so parameter counts and fusion widths can be checked before any
//! tensor is allocated.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lbp::{default_configs, descriptor_len, LbpConfig};

/// One backbone stage: conv3x3 (stride 1, padding 1), optional batchnorm,
/// relu, then 2x2 max pooling.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConvBlockConfig {
    pub out_channels: usize,
    pub batchnorm: bool,
}

/// The convolutional feature extractor, as an ordered list of stages.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BackboneConfig {
    pub blocks: Vec<ConvBlockConfig>,
}

impl BackboneConfig {
    /// Desk-scale default: four batchnormed blocks, 16 to 128 channels.
    pub fn desk() -> Self {
        BackboneConfig {
            blocks: [16, 32, 64, 128]
                .into_iter()
                .map(|out_channels| ConvBlockConfig { out_channels, batchnorm: true })
                .collect(),
        }
    }

    /// Channel count of the final feature map.
    pub fn out_channels(&self) -> usize {
        self.blocks.last().map_or(0, |b| b.out_channels)
    }

    /// Spatial extent of the final map for a square input: each block's
    /// conv preserves the extent and the pool halves it, truncating odd
    /// extents.
    pub fn output_extent(&self, input_size: usize) -> usize {
        self.blocks.iter().fold(input_size, |e, _| e / 2)
    }

    pub fn validate(&self, input_size: usize) -> Result<()> {
        if self.blocks.is_empty() {
            return Err(Error::Config("backbone needs at least one block".into()));
        }
        let mut extent = input_size;
        for (i, block) in self.blocks.iter().enumerate() {
            if block.out_channels == 0 {
                return Err(Error::Config(format!("backbone block {i} has zero channels")));
            }
            extent /= 2;
            if extent == 0 {
                return Err(Error::Config(format!(
                    "input extent {input_size} shrinks to zero at backbone block {i}"
                )));
            }
        }
        Ok(())
    }
}

/// Partition geometry over the upsampled feature map.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PatchGrid {
    /// Extents (height, width) the feature map is upsampled to.
    pub upsampled: (usize, usize),
    /// Side length a of each square patch.
    pub patch_side: usize,
    /// Number of patches e = height·width / a².
    pub patch_count: usize,
}

impl PatchGrid {
    pub fn new(upsampled: (usize, usize), patch_side: usize) -> Result<Self> {
        let grid = PatchGrid {
            upsampled,
            patch_side,
            patch_count: if patch_side == 0 {
                0
            } else {
                (upsampled.0 / patch_side) * (upsampled.1 / patch_side)
            },
        };
        grid.validate()?;
        Ok(grid)
    }

    /// The default 48x48 upsample with the given patch side.
    pub fn with_side(patch_side: usize) -> Result<Self> {
        Self::new((48, 48), patch_side)
    }

    pub fn validate(&self) -> Result<()> {
        let (h, w) = self.upsampled;
        if self.patch_side == 0 || h == 0 || w == 0 {
            return Err(Error::Config("patch grid extents must be positive".into()));
        }
        if h % self.patch_side != 0 || w % self.patch_side != 0 {
            return Err(Error::Config(format!(
                "patch side {} does not divide the {h}x{w} upsampled map",
                self.patch_side
            )));
        }
        let expected = (h * w) / (self.patch_side * self.patch_side);
        if self.patch_count != expected {
            return Err(Error::Config(format!(
                "patch count {} does not match the grid ({expected} expected)",
                self.patch_count
            )));
        }
        Ok(())
    }

    /// Patch rows in the grid.
    pub fn rows(&self) -> usize {
        self.upsampled.0 / self.patch_side
    }

    /// Patch columns in the grid.
    pub fn cols(&self) -> usize {
        self.upsampled.1 / self.patch_side
    }
}

/// How the texture descriptor joins the deep feature before the
/// classifier.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Fusion {
    /// F_final = F2 followed by F3; width v + |F3|.
    Concatenation,
    /// F_final = F2 + project(F3); width v, with a learned bias-free
    /// projection of the descriptor.
    Addition,
}

/// Complete shape description of a DNT classifier.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    /// Square input extent after cropping.
    pub input_size: usize,
    pub backbone: BackboneConfig,
    pub grid: PatchGrid,
    /// Hidden width v of the patch-sequence encoder.
    pub lstm_hidden: usize,
    pub lbp_configs: Vec<LbpConfig>,
    pub fusion: Fusion,
    /// Dropout rate on the fused vector, training mode only.
    pub dropout_rate: f64,
    pub num_classes: usize,
    /// Ablation switch: false drops the texture branch entirely.
    pub use_lbp: bool,
    /// Ablation switch: false replaces the patch-sequence encoder with
    /// global average pooling of the backbone map.
    pub use_patch_encoder: bool,
}

impl ModelConfig {
    /// Desk-scale default: 56x56 crops, 16 patches of side 12, v = 128,
    /// the four standard LBP neighborhoods fused by concatenation.
    pub fn desk(num_classes: usize) -> Self {
        ModelConfig {
            input_size: 56,
            backbone: BackboneConfig::desk(),
            grid: PatchGrid::with_side(12).expect("48 divisible by 12"),
            lstm_hidden: 128,
            lbp_configs: default_configs(),
            fusion: Fusion::Concatenation,
            dropout_rate: 0.2,
            num_classes,
            use_lbp: true,
            use_patch_encoder: true,
        }
    }

    /// Full-scale geometry: 224x224 crops through five blocks to a 7x7
    /// map, v = 1024, final fused width 2048.
    pub fn paper_scale(num_classes: usize) -> Self {
        ModelConfig {
            input_size: 224,
            backbone: BackboneConfig {
                blocks: [32, 64, 128, 256, 512]
                    .into_iter()
                    .map(|out_channels| ConvBlockConfig { out_channels, batchnorm: true })
                    .collect(),
            },
            lstm_hidden: 1024,
            ..Self::desk(num_classes)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_classes < 2 {
            return Err(Error::Config(format!(
                "need at least 2 classes, got {}",
                self.num_classes
            )));
        }
        self.backbone.validate(self.input_size)?;
        self.grid.validate()?;
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::Config(format!(
                "dropout rate {} must lie in [0, 1)",
                self.dropout_rate
            )));
        }
        if self.use_patch_encoder && self.lstm_hidden == 0 {
            return Err(Error::Config("LSTM hidden width must be positive".into()));
        }
        if self.use_lbp && self.lbp_configs.is_empty() {
            return Err(Error::Config(
                "texture branch enabled but no LBP configs given".into(),
            ));
        }
        for cfg in &self.lbp_configs {
            LbpConfig::new(cfg.p, cfg.r, cfg.binning)?;
        }
        Ok(())
    }

    /// Width of the deep feature: v from the patch encoder, or the
    /// backbone's channel count when the encoder is ablated away.
    pub fn deep_width(&self) -> usize {
        if self.use_patch_encoder {
            self.lstm_hidden
        } else {
            self.backbone.out_channels()
        }
    }

    /// Width of the texture descriptor F3, zero when disabled.
    pub fn texture_width(&self) -> usize {
        if self.use_lbp {
            descriptor_len(&self.lbp_configs)
        } else {
            0
        }
    }

    /// Width of the fused vector the classifier reads.
    pub fn fused_width(&self) -> usize {
        match (self.use_lbp, self.fusion) {
            (false, _) => self.deep_width(),
            (true, Fusion::Concatenation) => self.deep_width() + self.texture_width(),
            (true, Fusion::Addition) => self.deep_width(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn desk_config_widths() {
        let cfg = ModelConfig::desk(4);
        cfg.validate().unwrap();
        assert_eq!(cfg.deep_width(), 128);
        assert_eq!(cfg.texture_width(), 1024);
        assert_eq!(cfg.fused_width(), 1152);
        assert_eq!(cfg.grid.patch_count, 16);
        assert_eq!(cfg.backbone.output_extent(56), 3);
    }

    #[test]
    fn paper_scale_reaches_the_published_widths() {
        let cfg = ModelConfig::paper_scale(80);
        cfg.validate().unwrap();
        assert_eq!(cfg.backbone.output_extent(224), 7);
        assert_eq!(cfg.fused_width(), 2048);
        let two_config = ModelConfig {
            lstm_hidden: 512,
            lbp_configs: default_configs()[..2].to_vec(),
            ..ModelConfig::paper_scale(80)
        };
        assert_eq!(two_config.fused_width(), 1024);
    }

    #[test]
    fn patch_grid_counts() {
        assert_eq!(PatchGrid::with_side(12).unwrap().patch_count, 16);
        assert_eq!(PatchGrid::with_side(16).unwrap().patch_count, 9);
        assert_eq!(PatchGrid::with_side(48).unwrap().patch_count, 1);
        assert!(PatchGrid::with_side(9).is_err());
        assert!(PatchGrid::with_side(0).is_err());
    }

    #[test]
    fn stored_patch_count_must_match_the_grid() {
        let lying = PatchGrid { upsampled: (48, 48), patch_side: 12, patch_count: 9 };
        assert!(lying.validate().is_err());
    }

    #[test]
    fn degenerate_configs_are_rejected() {
        assert!(ModelConfig::desk(1).validate().is_err());

        let mut too_deep = ModelConfig::desk(4);
        too_deep.input_size = 8;
        assert!(too_deep.validate().is_err());

        let mut no_blocks = ModelConfig::desk(4);
        no_blocks.backbone.blocks.clear();
        assert!(no_blocks.validate().is_err());

        let mut bad_rate = ModelConfig::desk(4);
        bad_rate.dropout_rate = 1.0;
        assert!(bad_rate.validate().is_err());

        let mut no_lbp_configs = ModelConfig::desk(4);
        no_lbp_configs.lbp_configs.clear();
        assert!(no_lbp_configs.validate().is_err());
    }

    #[test]
    fn json_round_trip_preserves_the_config() {
        let cfg = ModelConfig::desk(4);
        let text = serde_json::to_string(&cfg).unwrap();
        let back: ModelConfig = serde_json::from_str(&text).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(serde_json::to_string(&back).unwrap(), text);
    }

    #[test]
    fn unknown_json_keys_are_rejected() {
        let mut value: serde_json::Value =
            serde_json::to_value(ModelConfig::desk(4)).unwrap();
        value["learning_rate"] = 0.5.into();
        assert!(serde_json::from_value::<ModelConfig>(value).is_err());
    }
}
