//! Align-corners bilinear resampling of feature maps.

use crate::error::{Error, Result};
use crate::nn::tensor::Tensor;

/// Source coordinate of output index `i` under align-corners mapping.
#[inline]
fn src_coord(i: usize, in_extent: usize, out_extent: usize) -> f64 {
    if out_extent <= 1 {
        0.0
    } else {
        i as f64 * (in_extent - 1) as f64 / (out_extent - 1) as f64
    }
}

#[inline]
fn split(src: f64, in_extent: usize) -> (usize, usize, f64) {
    let lo = src.floor() as usize;
    let hi = (lo + 1).min(in_extent - 1);
    (lo, hi, src - lo as f64)
}

/// Align-corners bilinear interpolation of an `h x w x c` map.
///
/// Interpolation uses the lerp form v0 + t·(v1 - v0), so constant inputs are
/// reproduced exactly and resizing to the input's own size is the identity.
pub fn bilinear_resize(input: &Tensor, out_h: usize, out_w: usize) -> Result<Tensor> {
    let (h, w, c) = input.dims3();
    if h == 0 || w == 0 || out_h == 0 || out_w == 0 {
        return Err(Error::Config("resize extents must be positive".into()));
    }
    let x = input.data();
    let mut out = vec![0.0; out_h * out_w * c];
    for oy in 0..out_h {
        let (y0, y1, dy) = split(src_coord(oy, h, out_h), h);
        for ox in 0..out_w {
            let (x0, x1, dx) = split(src_coord(ox, w, out_w), w);
            let base00 = (y0 * w + x0) * c;
            let base01 = (y0 * w + x1) * c;
            let base10 = (y1 * w + x0) * c;
            let base11 = (y1 * w + x1) * c;
            let o_base = (oy * out_w + ox) * c;
            for ch in 0..c {
                let top = x[base00 + ch] + dx * (x[base01 + ch] - x[base00 + ch]);
                let bottom = x[base10 + ch] + dx * (x[base11 + ch] - x[base10 + ch]);
                out[o_base + ch] = top + dy * (bottom - top);
            }
        }
    }
    Tensor::new(vec![out_h, out_w, c], out)
}

/// Scatters each upstream gradient onto the four source corners with the
/// interpolation weights (1-dy)(1-dx), (1-dy)dx, dy(1-dx), dy·dx.
pub fn bilinear_resize_backward(
    input_shape: &[usize],
    grad_out: &Tensor,
) -> Tensor {
    let (h, w, c) = (input_shape[0], input_shape[1], input_shape[2]);
    let (out_h, out_w, _) = grad_out.dims3();
    let go = grad_out.data();
    let mut gx = vec![0.0; h * w * c];
    for oy in 0..out_h {
        let (y0, y1, dy) = split(src_coord(oy, h, out_h), h);
        for ox in 0..out_w {
            let (x0, x1, dx) = split(src_coord(ox, w, out_w), w);
            let w00 = (1.0 - dy) * (1.0 - dx);
            let w01 = (1.0 - dy) * dx;
            let w10 = dy * (1.0 - dx);
            let w11 = dy * dx;
            let base00 = (y0 * w + x0) * c;
            let base01 = (y0 * w + x1) * c;
            let base10 = (y1 * w + x0) * c;
            let base11 = (y1 * w + x1) * c;
            let o_base = (oy * out_w + ox) * c;
            for ch in 0..c {
                let g = go[o_base + ch];
                gx[base00 + ch] += w00 * g;
                gx[base01 + ch] += w01 * g;
                gx[base10 + ch] += w10 * g;
                gx[base11 + ch] += w11 * g;
            }
        }
    }
    Tensor::new(input_shape.to_vec(), gx).expect("sized above")
}
