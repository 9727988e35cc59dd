//! The DNT classifier: configuration, the assembled two-stream network,
//! and checkpoint serialization.

pub mod checkpoint;
pub mod config;
pub mod net;

pub use checkpoint::{load_checkpoint, save_checkpoint};
pub use config::{BackboneConfig, ConvBlockConfig, Fusion, ModelConfig, PatchGrid};
pub use net::{
    partition_patches, patch_features, DntModel, ModelGrads, ParamBreakdown, TrainForward,
};
