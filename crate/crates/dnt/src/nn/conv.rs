//! 2-d convolution (cross-correlation) with zero padding.

use crate::error::{Error, Result};
use crate::nn::tensor::{Parameter, Tensor};
use crate::rng::SplitMix64;

/// Gradients produced by one backward call, to be accumulated into the
/// layer's [`Parameter`] grads by the caller.
#[derive(Debug, Clone)]
pub struct ConvGrads {
    pub kernels: Tensor,
    pub bias: Tensor,
}

/// A convolution layer over `h x w x cin` maps.
///
/// Kernels are stored `k x k x cin x cout` row-major; each output value is
/// the cross-correlation of the kernel with the zero-padded input window
/// plus bias.
#[derive(Debug, Clone)]
pub struct Conv2d {
    pub kernels: Parameter,
    pub bias: Parameter,
    pub k: usize,
    pub cin: usize,
    pub cout: usize,
    pub stride: usize,
    pub padding: usize,
}

impl Conv2d {
    /// Builds a layer with He-style fan-in initialization:
    /// kernel values ~ N(0, sqrt(2 / (k*k*cin))), bias zero.
    pub fn new(
        name: &str,
        k: usize,
        cin: usize,
        cout: usize,
        stride: usize,
        padding: usize,
        rng: &mut SplitMix64,
    ) -> Result<Self> {
        Self::build(name, k, cin, cout, stride, padding, true, rng)
    }

    /// A bias-free variant for convs feeding a batchnorm, which subtracts
    /// the per-channel mean and would make a bias a dead parameter.
    pub fn new_no_bias(
        name: &str,
        k: usize,
        cin: usize,
        cout: usize,
        stride: usize,
        padding: usize,
        rng: &mut SplitMix64,
    ) -> Result<Self> {
        Self::build(name, k, cin, cout, stride, padding, false, rng)
    }

    #[allow(clippy::too_many_arguments)]
    fn build(
        name: &str,
        k: usize,
        cin: usize,
        cout: usize,
        stride: usize,
        padding: usize,
        has_bias: bool,
        rng: &mut SplitMix64,
    ) -> Result<Self> {
        if stride == 0 {
            return Err(Error::Config("conv stride must be >= 1".into()));
        }
        if k == 0 || cin == 0 || cout == 0 {
            return Err(Error::Config("conv extents must be positive".into()));
        }
        let std = (2.0 / (k * k * cin) as f64).sqrt();
        let data: Vec<f64> = (0..k * k * cin * cout).map(|_| rng.normal(0.0, std)).collect();
        let kernels = Tensor::new(vec![k, k, cin, cout], data)?;
        let bias_len = if has_bias { cout } else { 0 };
        Ok(Conv2d {
            kernels: Parameter::new(format!("{name}.kernels"), kernels),
            bias: Parameter::new(format!("{name}.bias"), Tensor::zeros(vec![bias_len])),
            k,
            cin,
            cout,
            stride,
            padding,
        })
    }

    /// Output spatial extent for one axis: floor((n + 2p - k)/stride) + 1.
    fn out_extent(&self, n: usize) -> Result<usize> {
        let padded = n + 2 * self.padding;
        if self.k > padded {
            return Err(Error::Config(format!(
                "kernel {} exceeds padded extent {}",
                self.k, padded
            )));
        }
        Ok((padded - self.k) / self.stride + 1)
    }

    pub fn forward(&self, input: &Tensor) -> Result<Tensor> {
        let (h, w, cin) = input.dims3();
        if cin != self.cin {
            return Err(Error::Config(format!(
                "conv expects {} input channels, got {}",
                self.cin, cin
            )));
        }
        let oh = self.out_extent(h)?;
        let ow = self.out_extent(w)?;
        let (k, cout, pad, stride) = (self.k, self.cout, self.padding, self.stride);
        let kern = self.kernels.value.data();
        let bias = self.bias.value.data();
        let x = input.data();

        let mut out = vec![0.0; oh * ow * cout];
        for oy in 0..oh {
            for ox in 0..ow {
                let o_base = (oy * ow + ox) * cout;
                if !bias.is_empty() {
                    out[o_base..o_base + cout].copy_from_slice(bias);
                }
                for ky in 0..k {
                    let iy = (oy * stride + ky) as isize - pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    for kx in 0..k {
                        let ix = (ox * stride + kx) as isize - pad as isize;
                        if ix < 0 || ix >= w as isize {
                            continue;
                        }
                        let i_base = (iy as usize * w + ix as usize) * cin;
                        let k_base = (ky * k + kx) * cin * cout;
                        for ci in 0..cin {
                            let xv = x[i_base + ci];
                            let kk = k_base + ci * cout;
                            for co in 0..cout {
                                out[o_base + co] += xv * kern[kk + co];
                            }
                        }
                    }
                }
            }
        }
        Tensor::new(vec![oh, ow, cout], out)
    }

    /// Returns the gradient with respect to the input along with kernel and
    /// bias gradients. `input` must be the tensor passed to `forward`.
    pub fn backward(&self, input: &Tensor, grad_out: &Tensor) -> (Tensor, ConvGrads) {
        let (h, w, cin) = input.dims3();
        let (oh, ow, cout) = grad_out.dims3();
        let (k, pad, stride) = (self.k, self.padding, self.stride);
        let kern = self.kernels.value.data();
        let x = input.data();
        let go = grad_out.data();

        let mut gx = vec![0.0; h * w * cin];
        let mut gk = vec![0.0; k * k * cin * cout];
        let mut gb = vec![0.0; self.bias.value.numel()];
        for oy in 0..oh {
            for ox in 0..ow {
                let o_base = (oy * ow + ox) * cout;
                if !gb.is_empty() {
                    for co in 0..cout {
                        gb[co] += go[o_base + co];
                    }
                }
                for ky in 0..k {
                    let iy = (oy * stride + ky) as isize - pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    for kx in 0..k {
                        let ix = (ox * stride + kx) as isize - pad as isize;
                        if ix < 0 || ix >= w as isize {
                            continue;
                        }
                        let i_base = (iy as usize * w + ix as usize) * cin;
                        let k_base = (ky * k + kx) * cin * cout;
                        for ci in 0..cin {
                            let xv = x[i_base + ci];
                            let kk = k_base + ci * cout;
                            let mut acc = 0.0;
                            for co in 0..cout {
                                let g = go[o_base + co];
                                gk[kk + co] += xv * g;
                                acc += kern[kk + co] * g;
                            }
                            gx[i_base + ci] += acc;
                        }
                    }
                }
            }
        }
        let grad_input = Tensor::new(vec![h, w, cin], gx).expect("shape fixed above");
        let grads = ConvGrads {
            kernels: Tensor::new(vec![k, k, cin, cout], gk).expect("shape fixed above"),
            bias: Tensor::vector(gb),
        };
        (grad_input, grads)
    }

    pub fn param_count(&self) -> usize {
        self.kernels.value.numel() + self.bias.value.numel()
    }

    pub fn params(&self) -> Vec<&Parameter> {
        vec![&self.kernels, &self.bias]
    }

    pub fn params_mut(&mut self) -> Vec<&mut Parameter> {
        vec![&mut self.kernels, &mut self.bias]
    }
}
