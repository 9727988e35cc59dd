//! Local binary pattern code maps and multi-neighborhood histogram
//! descriptors.
//!
//! For a center pixel p_c and its P sampled neighbors p_0..p_{P-1}, the LBP
//! code is
//!
//! ```text
//! code = sum_i [p_i - p_c >= 0] * 2^i
//! ```
//!
//! Neighbor i sits at angle 2·pi·i/P on a circle of radius R, with i = 0 due
//! east and indices proceeding counter-clockwise. The (8,1) configuration is
//! the classic 3x3 square ring read at integer offsets, which makes its code
//! map invariant under any strictly increasing intensity map. All other
//! configurations sample the exact circle with bilinear interpolation, which
//! commutes with positive affine maps.
//!
//! Histograms of the code maps, one 256-wide block per (P,R) configuration,
//! concatenate into the texture descriptor: P=8 blocks are raw 256-bin
//! histograms, P=16 blocks are uniform-pattern histograms (243 bins) padded
//! with zeros to the fixed 256 stride. The default four configurations
//! (8,1), (8,2), (16,1), (16,2) therefore yield 4·256 = 1024 values.

use serde::{Deserialize, Serialize};

use crate::data::image::RgbImage;
use crate::error::{Error, Result};

/// Fixed width of one histogram block inside a descriptor.
pub const BLOCK_STRIDE: usize = 256;

// ── images ──────────────────────────────────────────────────────────────

/// Row-major floating-point intensity raster. Values live in the natural
/// [0,255] range but are not clamped.
#[derive(Debug, Clone, PartialEq)]
pub struct GrayImage {
    height: usize,
    width: usize,
    pixels: Vec<f64>,
}

impl GrayImage {
    pub fn new(height: usize, width: usize, pixels: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::Format("image extents must be positive".into()));
        }
        if pixels.len() != height * width {
            return Err(Error::Format(format!(
                "{}x{} image needs {} pixels, got {}",
                height,
                width,
                height * width,
                pixels.len()
            )));
        }
        if !pixels.iter().all(|v| v.is_finite()) {
            return Err(Error::Format("image contains non-finite values".into()));
        }
        Ok(GrayImage { height, width, pixels })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn pixels(&self) -> &[f64] {
        &self.pixels
    }

    pub fn pixels_mut(&mut self) -> &mut [f64] {
        &mut self.pixels
    }

    #[inline]
    pub fn at(&self, y: usize, x: usize) -> f64 {
        self.pixels[y * self.width + x]
    }

    #[inline]
    fn at_i(&self, y: isize, x: isize) -> f64 {
        self.pixels[y as usize * self.width + x as usize]
    }
}

/// Luma conversion: 0.299·R + 0.587·G + 0.114·B, kept in floating point.
pub fn to_grayscale(img: &RgbImage) -> GrayImage {
    let pixels = img
        .data()
        .chunks_exact(3)
        .map(|px| 0.299 * px[0] + 0.587 * px[1] + 0.114 * px[2])
        .collect();
    GrayImage { height: img.height(), width: img.width(), pixels }
}

// ── configuration ───────────────────────────────────────────────────────

/// How a code map is reduced to a histogram block.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Binning {
    /// One bin per code value; valid only for P = 8.
    Raw256,
    /// Uniform patterns (at most 2 circular transitions) get distinct bins,
    /// all other codes share one bin: P·(P-1)+3 bins total.
    Uniform,
}

/// One LBP neighborhood: P sampled neighbors on a circle of radius R.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LbpConfig {
    pub p: usize,
    pub r: f64,
    pub binning: Binning,
}

impl LbpConfig {
    pub fn new(p: usize, r: f64, binning: Binning) -> Result<Self> {
        if p < 4 {
            return Err(Error::Config(format!("LBP needs at least 4 neighbors, got {p}")));
        }
        if p > 24 {
            return Err(Error::Config(format!("LBP supports at most 24 neighbors, got {p}")));
        }
        if !(r > 0.0) {
            return Err(Error::Config(format!("LBP radius must be positive, got {r}")));
        }
        if binning == Binning::Raw256 && p != 8 {
            return Err(Error::Config(format!(
                "raw256 binning requires P = 8 (256 = 2^8 code values), got P = {p}"
            )));
        }
        if binning == Binning::Uniform && uniform_bin_count(p) > BLOCK_STRIDE {
            return Err(Error::Config(format!(
                "P = {p} needs {} uniform bins, exceeding the {BLOCK_STRIDE}-wide block",
                uniform_bin_count(p)
            )));
        }
        Ok(LbpConfig { p, r, binning })
    }

    /// Border width that produces no codes: ceil(R).
    pub fn border(&self) -> usize {
        self.r.ceil() as usize
    }

    /// Number of populated bins in this config's histogram block.
    pub fn bin_count(&self) -> usize {
        match self.binning {
            Binning::Raw256 => 256,
            Binning::Uniform => uniform_bin_count(self.p),
        }
    }

}

/// The four standard neighborhoods: (8,1) and (8,2) raw, (16,1) and (16,2)
/// uniform, 4·256 = 1024 descriptor values in total.
pub fn default_configs() -> Vec<LbpConfig> {
    vec![
        LbpConfig::new(8, 1.0, Binning::Raw256).unwrap(),
        LbpConfig::new(8, 2.0, Binning::Raw256).unwrap(),
        LbpConfig::new(16, 1.0, Binning::Uniform).unwrap(),
        LbpConfig::new(16, 2.0, Binning::Uniform).unwrap(),
    ]
}

// ── sampling ────────────────────────────────────────────────────────────

/// Offset of neighbor i relative to the center: (dy, dx) with
/// dy = -R·sin(2·pi·i/P), dx = R·cos(2·pi·i/P). The (8,1) configuration
/// instead reads the surrounding 3x3 square at integer offsets, in the same
/// counter-clockwise-from-east order.
pub fn neighbor_offset(i: usize, p: usize, r: f64) -> (f64, f64) {
    if p == 8 && r == 1.0 {
        const SQUARE_RING: [(f64, f64); 8] = [
            (0.0, 1.0),
            (-1.0, 1.0),
            (-1.0, 0.0),
            (-1.0, -1.0),
            (0.0, -1.0),
            (1.0, -1.0),
            (1.0, 0.0),
            (1.0, 1.0),
        ];
        return SQUARE_RING[i];
    }
    let angle = 2.0 * std::f64::consts::PI * i as f64 / p as f64;
    (-r * angle.sin(), r * angle.cos())
}

/// Whether an offset pair lands on integer coordinates, and the snapped
/// values. Trigonometric zero crossings carry rounding noise, so anything
/// within 1e-9 of an integer is read exactly.
#[inline]
fn snap(dy: f64, dx: f64) -> Option<(isize, isize)> {
    let (ry, rx) = (dy.round(), dx.round());
    if (dy - ry).abs() < 1e-9 && (dx - rx).abs() < 1e-9 {
        Some((ry as isize, rx as isize))
    } else {
        None
    }
}

/// Bilinear interpolation in lerp form at an offset from an integer center.
///
/// The lerp form v0 + t·(v1 - v0) reproduces constant neighborhoods exactly,
/// which is what makes tie behavior (and hence affine invariance) exact.
#[inline]
fn interpolate(img: &GrayImage, cy: isize, cx: isize, dy: f64, dx: f64) -> f64 {
    let y0 = dy.floor();
    let x0 = dx.floor();
    let fy = dy - y0;
    let fx = dx - x0;
    let iy = cy + y0 as isize;
    let ix = cx + x0 as isize;
    let p00 = img.at_i(iy, ix);
    let p01 = img.at_i(iy, ix + 1);
    let p10 = img.at_i(iy + 1, ix);
    let p11 = img.at_i(iy + 1, ix + 1);
    let top = p00 + fx * (p01 - p00);
    let bottom = p10 + fx * (p11 - p10);
    top + fy * (bottom - top)
}

/// Samples neighbor i of the center (cy, cx). The center must lie at least
/// ceil(R) from every border.
pub fn sample_neighbor(
    img: &GrayImage,
    cy: usize,
    cx: usize,
    i: usize,
    p: usize,
    r: f64,
) -> Result<f64> {
    let border = r.ceil() as usize;
    if cy < border
        || cx < border
        || cy + border >= img.height()
        || cx + border >= img.width()
    {
        return Err(Error::Usage(format!(
            "center ({cy},{cx}) closer than {border} to an image border"
        )));
    }
    let (dy, dx) = neighbor_offset(i, p, r);
    Ok(match snap(dy, dx) {
        Some((oy, ox)) => img.at_i(cy as isize + oy, cx as isize + ox),
        None => interpolate(img, cy as isize, cx as isize, dy, dx),
    })
}

// ── code maps ───────────────────────────────────────────────────────────

/// Per-pixel LBP codes over the image interior (source extents minus a
/// border of ceil(R) on every side).
#[derive(Debug, Clone, PartialEq)]
pub struct LbpCodeMap {
    pub height: usize,
    pub width: usize,
    pub codes: Vec<u32>,
}

/// Precomputed sampling plan for one neighbor: either an exact integer
/// offset or the interpolation corner plus fractional weights.
enum SamplePlan {
    Exact { oy: isize, ox: isize },
    Bilinear { oy: isize, ox: isize, fy: f64, fx: f64 },
}

/// Computes the LBP code of every interior pixel.
///
/// The per-neighbor offsets and interpolation weights depend only on the
/// configuration, so they are computed once and reused across the scan; the
/// arithmetic per sample is identical to [`sample_neighbor`].
pub fn lbp_code_map(img: &GrayImage, cfg: &LbpConfig) -> Result<LbpCodeMap> {
    let border = cfg.border();
    if img.height() < 2 * border + 1 || img.width() < 2 * border + 1 {
        return Err(Error::Usage(format!(
            "{}x{} image has an empty interior at radius {}",
            img.height(),
            img.width(),
            cfg.r
        )));
    }
    let plans: Vec<SamplePlan> = (0..cfg.p)
        .map(|i| {
            let (dy, dx) = neighbor_offset(i, cfg.p, cfg.r);
            match snap(dy, dx) {
                Some((oy, ox)) => SamplePlan::Exact { oy, ox },
                None => {
                    let y0 = dy.floor();
                    let x0 = dx.floor();
                    SamplePlan::Bilinear {
                        oy: y0 as isize,
                        ox: x0 as isize,
                        fy: dy - y0,
                        fx: dx - x0,
                    }
                }
            }
        })
        .collect();

    let height = img.height() - 2 * border;
    let width = img.width() - 2 * border;
    let mut codes = Vec::with_capacity(height * width);
    for cy in border..img.height() - border {
        for cx in border..img.width() - border {
            let center = img.at(cy, cx);
            let (cy, cx) = (cy as isize, cx as isize);
            let mut code: u32 = 0;
            for (i, plan) in plans.iter().enumerate() {
                let sample = match *plan {
                    SamplePlan::Exact { oy, ox } => img.at_i(cy + oy, cx + ox),
                    SamplePlan::Bilinear { oy, ox, fy, fx } => {
                        let p00 = img.at_i(cy + oy, cx + ox);
                        let p01 = img.at_i(cy + oy, cx + ox + 1);
                        let p10 = img.at_i(cy + oy + 1, cx + ox);
                        let p11 = img.at_i(cy + oy + 1, cx + ox + 1);
                        let top = p00 + fx * (p01 - p00);
                        let bottom = p10 + fx * (p11 - p10);
                        top + fy * (bottom - top)
                    }
                };
                if sample - center >= 0.0 {
                    code |= 1 << i;
                }
            }
            codes.push(code);
        }
    }
    Ok(LbpCodeMap { height, width, codes })
}

// ── binning ─────────────────────────────────────────────────────────────

/// Number of circular 0/1 transitions in a P-bit code.
pub fn transitions(code: u32, p: usize) -> u32 {
    let mut count = 0;
    for i in 0..p {
        let a = (code >> i) & 1;
        let b = (code >> ((i + 1) % p)) & 1;
        if a != b {
            count += 1;
        }
    }
    count
}

/// Total bins under uniform binning: P·(P-1)+3.
pub fn uniform_bin_count(p: usize) -> usize {
    p * (p - 1) + 3
}

/// Maps every code in [0, 2^P) to its bin: uniform codes (at most 2
/// transitions) get distinct bins in ascending code order, all other codes
/// share the final bin.
pub fn uniform_bin_map(p: usize) -> Result<Vec<u32>> {
    if !(4..=24).contains(&p) {
        return Err(Error::Config(format!("uniform binning supports 4 <= P <= 24, got {p}")));
    }
    let num_codes = 1usize << p;
    let non_uniform_bin = (uniform_bin_count(p) - 1) as u32;
    let mut map = vec![0u32; num_codes];
    let mut next_bin = 0u32;
    for code in 0..num_codes {
        if transitions(code as u32, p) <= 2 {
            map[code] = next_bin;
            next_bin += 1;
        } else {
            map[code] = non_uniform_bin;
        }
    }
    debug_assert_eq!(next_bin, non_uniform_bin);
    Ok(map)
}

/// Reduces a code map to one fixed-stride histogram block.
///
/// Raw256 counts each code into its own bin. Uniform accumulates counts into
/// the uniform bins and zero-pads the block to [`BLOCK_STRIDE`]. With
/// `normalize`, the block is divided by the total count (L1 mass 1).
pub fn histogram(map: &LbpCodeMap, cfg: &LbpConfig, normalize: bool) -> Result<Vec<f64>> {
    if cfg.binning == Binning::Raw256 && cfg.p != 8 {
        return Err(Error::Config(format!("raw256 binning requires P = 8, got {}", cfg.p)));
    }
    let mut block = vec![0.0; BLOCK_STRIDE];
    match cfg.binning {
        Binning::Raw256 => {
            for &code in &map.codes {
                block[code as usize] += 1.0;
            }
        }
        Binning::Uniform => {
            let bins = uniform_bin_map(cfg.p)?;
            for &code in &map.codes {
                block[bins[code as usize] as usize] += 1.0;
            }
        }
    }
    if normalize {
        let total: f64 = map.codes.len() as f64;
        if total > 0.0 {
            block.iter_mut().for_each(|v| *v /= total);
        }
    }
    Ok(block)
}

// ── descriptors ─────────────────────────────────────────────────────────

/// Placement of one configuration's block inside a descriptor.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockLayout {
    pub config: LbpConfig,
    pub offset: usize,
    pub length: usize,
}

/// The concatenated multi-neighborhood histogram descriptor F3.
#[derive(Debug, Clone, PartialEq)]
pub struct TextureDescriptor {
    pub values: Vec<f64>,
    pub layout: Vec<BlockLayout>,
}

impl TextureDescriptor {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Extracts and concatenates one histogram block per configuration, in the
/// given order.
pub fn texture_descriptor(
    img: &GrayImage,
    configs: &[LbpConfig],
    normalize: bool,
) -> Result<TextureDescriptor> {
    if configs.is_empty() {
        return Err(Error::Config("texture descriptor needs at least one LBP config".into()));
    }
    let mut values = Vec::with_capacity(configs.len() * BLOCK_STRIDE);
    let mut layout = Vec::with_capacity(configs.len());
    for cfg in configs {
        let map = lbp_code_map(img, cfg)?;
        let block = histogram(&map, cfg, normalize)?;
        layout.push(BlockLayout {
            config: *cfg,
            offset: values.len(),
            length: BLOCK_STRIDE,
        });
        values.extend_from_slice(&block);
    }
    Ok(TextureDescriptor { values, layout })
}

/// Descriptor width for a configuration list: one fixed stride per block.
pub fn descriptor_len(configs: &[LbpConfig]) -> usize {
    configs.len() * BLOCK_STRIDE
}
