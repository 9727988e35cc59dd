//! In-memory raster types.

use crate::error::{Error, Result};
use crate::nn::tensor::Tensor;

/// Row-major (R,G,B) floating-point raster with values in [0,255].
#[derive(Debug, Clone, PartialEq)]
pub struct RgbImage {
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl RgbImage {
    pub fn new(height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::Format("image extents must be positive".into()));
        }
        if data.len() != height * width * 3 {
            return Err(Error::Format(format!(
                "{}x{} RGB image needs {} values, got {}",
                height,
                width,
                height * width * 3,
                data.len()
            )));
        }
        if !data.iter().all(|v| v.is_finite()) {
            return Err(Error::Format("image contains non-finite values".into()));
        }
        Ok(RgbImage { height, width, data })
    }

    pub fn filled(height: usize, width: usize, value: f64) -> Self {
        RgbImage { height, width, data: vec![value; height * width * 3] }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    #[inline]
    pub fn at(&self, y: usize, x: usize) -> [f64; 3] {
        let base = (y * self.width + x) * 3;
        [self.data[base], self.data[base + 1], self.data[base + 2]]
    }

    #[inline]
    pub fn set(&mut self, y: usize, x: usize, px: [f64; 3]) {
        let base = (y * self.width + x) * 3;
        self.data[base..base + 3].copy_from_slice(&px);
    }

    /// `h x w x 3` tensor view for the network input.
    pub fn to_tensor(&self) -> Tensor {
        Tensor::new(vec![self.height, self.width, 3], self.data.clone())
            .expect("raster invariant guarantees the shape")
    }
}
