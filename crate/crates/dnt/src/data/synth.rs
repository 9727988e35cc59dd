//! Synthetic texture dataset: oriented triangle-wave gratings.
//!
//! Class k is a grating at orientation k·pi/K, amplitude 100 around gray
//! 128, plus Gaussian pixel noise, clamped to [0,255]. With the default
//! four classes the orientations are 45 degrees apart, so the ±25 degree
//! rotation jitter of the training augmentation cannot move one class
//! onto another.
//!
//! The wave is triangular rather than sinusoidal for two texture-branch
//! reasons. Its ramps have constant slope 4·amplitude·frequency per pixel,
//! so neighbor comparisons are decided by the signal rather than by the
//! noise (a comparison of two noisy pixels carries sigma·sqrt(2) = 28 gray
//! levels of noise) and each class concentrates its code mass on a few
//! orientation-specific bins. And a piecewise-linear signal is reproduced
//! exactly by the bilinear interpolation used in rotation and scaling, so
//! augmented training views keep the same code statistics as the untouched
//! evaluation views.

use std::fs;
use std::path::{Path, PathBuf};

use crate::data::manifest::{build_manifest, write_manifest, DatasetManifest};
use crate::data::netpbm::write_pgm;
use crate::error::{Error, Result};
use crate::lbp::GrayImage;
use crate::rng::{self, stream};

#[derive(Debug, Clone, Copy)]
pub struct SynthConfig {
    pub classes: usize,
    pub per_class: usize,
    pub size: usize,
    pub noise_sigma: f64,
    pub split_ratio: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            classes: 4,
            per_class: 70,
            size: 64,
            noise_sigma: 20.0,
            split_ratio: 0.6,
            seed: 1,
        }
    }
}

/// Grating frequency, in cycles per pixel, shared by every class. The
/// value walks a narrow corridor. Lower frequencies flatten the ramps:
/// below roughly 0.14 the per-pixel slope of 4·amplitude·frequency gray
/// levels drops toward the 28 levels of comparison noise at sigma 20,
/// and once noise decides the comparisons the texture codes stop being
/// class evidence. Higher frequencies break augmentation fidelity: past
/// roughly 0.2 (the scale jitter compresses by up to 1/0.75) bilinear
/// rotation and scaling visibly attenuate and distort the wave, so the
/// training views stop resembling the untouched evaluation views.
pub fn class_frequency(_k: usize) -> f64 {
    0.145
}

/// Grating amplitude in gray levels, shared by every class. As large as
/// the 8-bit range allows around gray 128 while keeping clamping of the
/// noise tails rare.
pub fn class_amplitude(_k: usize) -> f64 {
    100.0
}

/// Grating orientation of class k out of K, in radians.
pub fn class_orientation(k: usize, classes: usize) -> f64 {
    k as f64 * std::f64::consts::PI / classes as f64
}

/// Triangle wave with period 1 and range [-1, 1], peaking at integer t.
pub fn triangle(t: f64) -> f64 {
    let s = t - t.floor();
    4.0 * (s - 0.5).abs() - 1.0
}

/// Renders one image of class k. The per-image substream drives the random
/// phase (one draw, a fraction of a period) followed by the pixel noise
/// (row-major draws), so with zero noise the phase is the only per-image
/// degree of freedom.
pub fn synth_image(cfg: &SynthConfig, class: usize, index: usize) -> GrayImage {
    let mut rng = stream(cfg.seed, rng::domain::SYNTH, class as u64, index as u64);
    let phase = rng.next_f64();
    render_grating(cfg, class, phase, &mut rng)
}

/// The deterministic grating for a given phase; noise draws come from `rng`.
pub fn render_grating(
    cfg: &SynthConfig,
    class: usize,
    phase: f64,
    rng: &mut rng::SplitMix64,
) -> GrayImage {
    let freq = class_frequency(class);
    let amplitude = class_amplitude(class);
    let theta = class_orientation(class, cfg.classes);
    let (sin_t, cos_t) = theta.sin_cos();
    let s = cfg.size;
    let mut pixels = Vec::with_capacity(s * s);
    for y in 0..s {
        for x in 0..s {
            let along = x as f64 * cos_t + y as f64 * sin_t;
            let wave = triangle(freq * along + phase);
            let noise = if cfg.noise_sigma > 0.0 {
                rng.normal(0.0, cfg.noise_sigma)
            } else {
                0.0
            };
            pixels.push((128.0 + amplitude * wave + noise).clamp(0.0, 255.0));
        }
    }
    GrayImage::new(s, s, pixels).expect("sized above")
}

/// Generates the dataset under `out_dir` (one `class_<k>` directory per
/// class, PGM files) and writes `manifest.csv` beside them.
pub fn synth_texture_dataset(
    out_dir: &Path,
    cfg: &SynthConfig,
) -> Result<(PathBuf, DatasetManifest)> {
    if cfg.classes < 2 {
        return Err(Error::Usage(format!("need at least 2 classes, got {}", cfg.classes)));
    }
    if cfg.per_class < 2 {
        return Err(Error::Usage(format!(
            "need at least 2 images per class, got {}",
            cfg.per_class
        )));
    }
    if cfg.size < 32 {
        return Err(Error::Usage(format!("image size must be at least 32, got {}", cfg.size)));
    }
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir.to_path_buf(), e))?;
    for k in 0..cfg.classes {
        let class_dir = out_dir.join(format!("class_{k}"));
        fs::create_dir_all(&class_dir).map_err(|e| Error::io(class_dir.clone(), e))?;
        for i in 0..cfg.per_class {
            let img = synth_image(cfg, k, i);
            write_pgm(&class_dir.join(format!("{i:04}.pgm")), &img)?;
        }
    }
    let manifest = build_manifest(out_dir, cfg.split_ratio, cfg.seed)?;
    let manifest_path = out_dir.join("manifest.csv");
    write_manifest(&manifest_path, &manifest)?;
    Ok((manifest_path, manifest))
}
