//! Image decoding, deterministic augmentation, dataset manifests, and the
//! synthetic texture dataset used for desk-scale experiments.

pub mod augment;
pub mod image;
pub mod manifest;
pub mod netpbm;
pub mod synth;

pub use augment::{augment_eval, augment_train, random_erase, AugmentationConfig, EraseConfig};
pub use image::RgbImage;
pub use manifest::{build_manifest, read_manifest, resolve_path, write_manifest, DatasetManifest,
    ManifestRecord, Split};
pub use netpbm::{load_image, write_pgm};
pub use synth::{synth_texture_dataset, SynthConfig};
