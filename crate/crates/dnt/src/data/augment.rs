//! Deterministic training augmentation: scale jitter, rotation, cropping,
//! and random region erasing.
//!
//! Training applies scale, then rotation, then a random crop, then erasing;
//! evaluation applies only a center crop. Every stochastic draw comes from
//! the caller's seeded substream, so a sample's augmented view is
//! reproducible in isolation.

use serde::{Deserialize, Serialize};

use crate::data::image::RgbImage;
use crate::error::{Error, Result};
use crate::nn::resize::bilinear_resize;
use crate::rng::SplitMix64;

/// Fill value for erased regions and out-of-frame rotation samples.
pub const NEUTRAL_FILL: f64 = 127.0;

/// Random region erasing parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EraseConfig {
    pub enabled: bool,
    /// Bounds on the height and width fractions; each side is drawn
    /// independently and floor-quantized to pixels.
    pub scale_range: (f64, f64),
    pub fill: f64,
}

impl Default for EraseConfig {
    fn default() -> Self {
        EraseConfig { enabled: true, scale_range: (0.2, 0.8), fill: NEUTRAL_FILL }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AugmentationConfig {
    /// Rotation drawn uniformly from ±this many degrees.
    pub rotation_degrees: f64,
    /// Side-length scale factor drawn uniformly from 1 ± this fraction.
    pub scale_jitter: f64,
    /// Target square crop extent.
    pub crop_size: usize,
    pub erase: EraseConfig,
}

impl AugmentationConfig {
    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.erase.scale_range;
        if !(0.0 < lo && lo <= hi && hi < 1.0) {
            return Err(Error::Config(format!(
                "erase scale range ({lo}, {hi}) must lie inside (0, 1)"
            )));
        }
        if !(0.0..1.0).contains(&self.scale_jitter) {
            return Err(Error::Config(format!(
                "scale jitter {} must lie in [0, 1)",
                self.scale_jitter
            )));
        }
        if self.crop_size == 0 {
            return Err(Error::Config("crop size must be positive".into()));
        }
        Ok(())
    }

    /// Desk-scale default: 64x64 sources cropped to 56.
    pub fn desk() -> Self {
        AugmentationConfig {
            rotation_degrees: 25.0,
            scale_jitter: 0.25,
            crop_size: 56,
            erase: EraseConfig::default(),
        }
    }

    /// The source geometry described alongside the training setup:
    /// 256x256 inputs cropped to 224.
    pub fn paper_geometry() -> Self {
        AugmentationConfig { crop_size: 224, ..Self::desk() }
    }
}

impl Default for AugmentationConfig {
    fn default() -> Self {
        Self::desk()
    }
}

fn resize_rgb(img: &RgbImage, out_h: usize, out_w: usize) -> RgbImage {
    let resized = bilinear_resize(&img.to_tensor(), out_h, out_w)
        .expect("extents are validated positive");
    let (h, w, _) = resized.dims3();
    RgbImage::new(h, w, resized.into_data()).expect("resize preserves finiteness")
}

/// Bilinear rescale of both extents by `factor` (rounded, at least 1 pixel).
pub fn scale_jitter(img: &RgbImage, factor: f64) -> RgbImage {
    if factor == 1.0 {
        return img.clone();
    }
    let out_h = ((img.height() as f64 * factor).round() as usize).max(1);
    let out_w = ((img.width() as f64 * factor).round() as usize).max(1);
    resize_rgb(img, out_h, out_w)
}

/// Rotation about the image center with bilinear sampling; samples falling
/// outside the frame read the neutral fill.
pub fn rotate(img: &RgbImage, degrees: f64) -> RgbImage {
    if degrees == 0.0 {
        return img.clone();
    }
    let (h, w) = (img.height(), img.width());
    let cy = (h - 1) as f64 / 2.0;
    let cx = (w - 1) as f64 / 2.0;
    let theta = degrees.to_radians();
    let (sin, cos) = theta.sin_cos();
    let mut out = RgbImage::filled(h, w, NEUTRAL_FILL);
    for y in 0..h {
        for x in 0..w {
            let dy = y as f64 - cy;
            let dx = x as f64 - cx;
            let sy = cy + cos * dy + sin * dx;
            let sx = cx - sin * dy + cos * dx;
            if sy < 0.0 || sy > (h - 1) as f64 || sx < 0.0 || sx > (w - 1) as f64 {
                continue;
            }
            let y0 = sy.floor();
            let x0 = sx.floor();
            let fy = sy - y0;
            let fx = sx - x0;
            let iy = y0 as usize;
            let ix = x0 as usize;
            let iy1 = (iy + 1).min(h - 1);
            let ix1 = (ix + 1).min(w - 1);
            let mut px = [0.0; 3];
            for ch in 0..3 {
                let p00 = img.at(iy, ix)[ch];
                let p01 = img.at(iy, ix1)[ch];
                let p10 = img.at(iy1, ix)[ch];
                let p11 = img.at(iy1, ix1)[ch];
                let top = p00 + fx * (p01 - p00);
                let bottom = p10 + fx * (p11 - p10);
                px[ch] = top + fy * (bottom - top);
            }
            out.set(y, x, px);
        }
    }
    out
}

/// Extracts a `size x size` window with its top-left corner at (top, left).
pub fn crop(img: &RgbImage, top: usize, left: usize, size: usize) -> Result<RgbImage> {
    if top + size > img.height() || left + size > img.width() {
        return Err(Error::Usage(format!(
            "crop {size} at ({top},{left}) exceeds {}x{} image",
            img.height(),
            img.width()
        )));
    }
    let mut data = Vec::with_capacity(size * size * 3);
    for y in top..top + size {
        let row = &img.data()[(y * img.width() + left) * 3..(y * img.width() + left + size) * 3];
        data.extend_from_slice(row);
    }
    RgbImage::new(size, size, data)
}

/// Center crop: offsets floor((extent - size)/2).
pub fn center_crop(img: &RgbImage, size: usize) -> Result<RgbImage> {
    let top = (img.height().saturating_sub(size)) / 2;
    let left = (img.width().saturating_sub(size)) / 2;
    crop(img, top, left, size)
}

/// Overwrites a random rectangle with the fill value. Sides are
/// floor(u·extent) with u drawn uniformly from the configured range (height
/// first, then width), and the top-left corner is uniform over in-bounds
/// positions (top, then left).
pub fn random_erase(img: &RgbImage, cfg: &EraseConfig, rng: &mut SplitMix64) -> RgbImage {
    if !cfg.enabled {
        return img.clone();
    }
    let (lo, hi) = cfg.scale_range;
    let eh = (rng.uniform(lo, hi) * img.height() as f64).floor() as usize;
    let ew = (rng.uniform(lo, hi) * img.width() as f64).floor() as usize;
    let top = rng.below((img.height() - eh + 1) as u64) as usize;
    let left = rng.below((img.width() - ew + 1) as u64) as usize;
    let mut out = img.clone();
    for y in top..top + eh {
        for x in left..left + ew {
            out.set(y, x, [cfg.fill; 3]);
        }
    }
    out
}

/// If either extent is below the crop size (possible after downscaling),
/// upscales uniformly so the smaller extent reaches it.
fn ensure_min_extent(img: RgbImage, size: usize) -> RgbImage {
    if img.height() >= size && img.width() >= size {
        return img;
    }
    let f = (size as f64 / img.height() as f64).max(size as f64 / img.width() as f64);
    let out_h = ((img.height() as f64 * f).ceil() as usize).max(size);
    let out_w = ((img.width() as f64 * f).ceil() as usize).max(size);
    resize_rgb(&img, out_h, out_w)
}

/// Full training pipeline: scale, rotate, random crop, erase. Draw order is
/// scale factor, rotation angle, crop top, crop left, then the erase draws.
pub fn augment_train(
    img: &RgbImage,
    cfg: &AugmentationConfig,
    rng: &mut SplitMix64,
) -> Result<RgbImage> {
    cfg.validate()?;
    let factor = rng.uniform(1.0 - cfg.scale_jitter, 1.0 + cfg.scale_jitter);
    let degrees = rng.uniform(-cfg.rotation_degrees, cfg.rotation_degrees);
    let scaled = scale_jitter(img, factor);
    let rotated = rotate(&scaled, degrees);
    let sized = ensure_min_extent(rotated, cfg.crop_size);
    let top = rng.below((sized.height() - cfg.crop_size + 1) as u64) as usize;
    let left = rng.below((sized.width() - cfg.crop_size + 1) as u64) as usize;
    let cropped = crop(&sized, top, left, cfg.crop_size)?;
    Ok(random_erase(&cropped, &cfg.erase, rng))
}

/// Evaluation pipeline: center crop only, no stochastic transform.
pub fn augment_eval(img: &RgbImage, crop_size: usize) -> Result<RgbImage> {
    let sized = ensure_min_extent(img.clone(), crop_size);
    center_crop(&sized, crop_size)
}
