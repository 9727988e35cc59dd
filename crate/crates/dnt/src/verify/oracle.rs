//! Brute-force LBP reimplementation used as the equivalence oracle.
//!
//! Everything here is recomputed from the definitions, per pixel and per
//! neighbor: no precomputed sampling plans, no shared bin tables, no code
//! borrowed from the production path in [`crate::lbp`]. Transition counting
//! and uniform-bin ranking use different algorithms on purpose, so a bug in
//! the production shortcuts cannot cancel against itself.

use crate::error::{Error, Result};
use crate::lbp::{Binning, GrayImage, LbpCodeMap, LbpConfig, BLOCK_STRIDE};

fn offset_of(i: usize, p: usize, r: f64) -> (f64, f64) {
    if p == 8 && r == 1.0 {
        // Square 3x3 ring, counter-clockwise from east.
        let square: [(f64, f64); 8] = [
            (0.0, 1.0),
            (-1.0, 1.0),
            (-1.0, 0.0),
            (-1.0, -1.0),
            (0.0, -1.0),
            (1.0, -1.0),
            (1.0, 0.0),
            (1.0, 1.0),
        ];
        return square[i];
    }
    let angle = 2.0 * std::f64::consts::PI * i as f64 / p as f64;
    (-r * angle.sin(), r * angle.cos())
}

/// One neighbor sample, recomputed from scratch: trig offset, snap of
/// near-integer coordinates (within 1e-9), bilinear interpolation in lerp
/// form otherwise.
fn sample(img: &GrayImage, cy: usize, cx: usize, i: usize, p: usize, r: f64) -> f64 {
    let (dy, dx) = offset_of(i, p, r);
    let (ry, rx) = (dy.round(), dx.round());
    if (dy - ry).abs() < 1e-9 && (dx - rx).abs() < 1e-9 {
        let y = (cy as isize + ry as isize) as usize;
        let x = (cx as isize + rx as isize) as usize;
        return img.at(y, x);
    }
    let y0 = dy.floor();
    let x0 = dx.floor();
    let fy = dy - y0;
    let fx = dx - x0;
    let iy = (cy as isize + y0 as isize) as usize;
    let ix = (cx as isize + x0 as isize) as usize;
    let p00 = img.at(iy, ix);
    let p01 = img.at(iy, ix + 1);
    let p10 = img.at(iy + 1, ix);
    let p11 = img.at(iy + 1, ix + 1);
    let top = p00 + fx * (p01 - p00);
    let bottom = p10 + fx * (p11 - p10);
    top + fy * (bottom - top)
}

/// Naive per-pixel code map over the interior.
pub fn naive_code_map(img: &GrayImage, cfg: &LbpConfig) -> Result<LbpCodeMap> {
    let border = cfg.r.ceil() as usize;
    if img.height() < 2 * border + 1 || img.width() < 2 * border + 1 {
        return Err(Error::Usage(format!(
            "{}x{} image has an empty interior at radius {}",
            img.height(),
            img.width(),
            cfg.r
        )));
    }
    let height = img.height() - 2 * border;
    let width = img.width() - 2 * border;
    let mut codes = Vec::with_capacity(height * width);
    for row in 0..height {
        for col in 0..width {
            let (cy, cx) = (row + border, col + border);
            let center = img.at(cy, cx);
            let mut code: u32 = 0;
            for i in 0..cfg.p {
                if sample(img, cy, cx, i, cfg.p, cfg.r) - center >= 0.0 {
                    code += 1 << i;
                }
            }
            codes.push(code);
        }
    }
    Ok(LbpCodeMap { height, width, codes })
}

/// Circular transitions counted by XOR against the 1-bit rotation.
fn rot_transitions(code: u32, p: usize) -> u32 {
    let mask = ((1u64 << p) - 1) as u32;
    let rotated = ((code << 1) | (code >> (p - 1))) & mask;
    (code ^ rotated).count_ones()
}

/// Bin of one code under uniform binning: the rank of the code among all
/// uniform codes below it, or the shared final bin. Recomputed per code by
/// direct counting; the tests cross-check [`uniform_rank_table`] against it.
#[cfg(test)]
fn uniform_bin_of(code: u32, p: usize) -> usize {
    if rot_transitions(code, p) > 2 {
        return p * (p - 1) + 2;
    }
    (0..code).filter(|&c| rot_transitions(c, p) <= 2).count()
}

/// Uniform ranks for every code at once; agrees with [`uniform_bin_of`]
/// but avoids its quadratic scan when binning whole maps.
fn uniform_rank_table(p: usize) -> Vec<usize> {
    let shared = p * (p - 1) + 2;
    let mut next = 0;
    (0..1u32 << p)
        .map(|code| {
            if rot_transitions(code, p) <= 2 {
                next += 1;
                next - 1
            } else {
                shared
            }
        })
        .collect()
}

/// Histogram block built code by code from the naive bin assignment.
pub fn naive_histogram(map: &LbpCodeMap, cfg: &LbpConfig, normalize: bool) -> Vec<f64> {
    let table = match cfg.binning {
        Binning::Raw256 => Vec::new(),
        Binning::Uniform => uniform_rank_table(cfg.p),
    };
    let mut block = vec![0.0; BLOCK_STRIDE];
    for &code in &map.codes {
        let bin = match cfg.binning {
            Binning::Raw256 => code as usize,
            Binning::Uniform => table[code as usize],
        };
        block[bin] += 1.0;
    }
    if normalize {
        let total = map.codes.len() as f64;
        if total > 0.0 {
            for v in &mut block {
                *v /= total;
            }
        }
    }
    block
}

/// Full descriptor assembled from the naive pieces.
pub fn naive_descriptor(
    img: &GrayImage,
    configs: &[LbpConfig],
    normalize: bool,
) -> Result<Vec<f64>> {
    let mut values = Vec::with_capacity(configs.len() * BLOCK_STRIDE);
    for cfg in configs {
        let map = naive_code_map(img, cfg)?;
        values.extend(naive_histogram(&map, cfg, normalize));
    }
    Ok(values)
}
