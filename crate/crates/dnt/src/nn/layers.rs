//! Pointwise and affine layers: relu, dense, dropout, batchnorm.

use crate::error::{Error, Result};
use crate::nn::tensor::{Parameter, Tensor};
use crate::rng::SplitMix64;

// ── relu ────────────────────────────────────────────────────────────────

/// Elementwise max(x, 0).
pub fn relu(x: &Tensor) -> Tensor {
    let data = x.data().iter().map(|&v| v.max(0.0)).collect();
    Tensor::new(x.shape().to_vec(), data).expect("shape preserved")
}

/// Passes gradient where the forward input was strictly positive.
/// The subgradient at exactly 0 is taken as 0.
pub fn relu_backward(input: &Tensor, grad_out: &Tensor) -> Tensor {
    let data = input
        .data()
        .iter()
        .zip(grad_out.data())
        .map(|(&x, &g)| if x > 0.0 { g } else { 0.0 })
        .collect();
    Tensor::new(input.shape().to_vec(), data).expect("shape preserved")
}

// ── dense ───────────────────────────────────────────────────────────────

#[derive(Debug, Clone)]
pub struct DenseGrads {
    pub weight: Tensor,
    pub bias: Tensor,
}

/// Fully connected layer over vectors: y[o] = sum_i x[i]·W[i,o] + b[o].
///
/// Weight is stored `in x out` row-major.
#[derive(Debug, Clone)]
pub struct Dense {
    pub weight: Parameter,
    pub bias: Parameter,
    pub input_size: usize,
    pub output_size: usize,
    has_bias: bool,
}

impl Dense {
    /// Fan-in-scaled normal initialization: W ~ N(0, sqrt(2/in)), b = 0.
    pub fn new(name: &str, input_size: usize, output_size: usize, rng: &mut SplitMix64) -> Self {
        Self::build(name, input_size, output_size, true, rng)
    }

    /// A bias-free variant, used for the texture projection in addition
    /// fusion mode.
    pub fn new_no_bias(
        name: &str,
        input_size: usize,
        output_size: usize,
        rng: &mut SplitMix64,
    ) -> Self {
        Self::build(name, input_size, output_size, false, rng)
    }

    fn build(
        name: &str,
        input_size: usize,
        output_size: usize,
        has_bias: bool,
        rng: &mut SplitMix64,
    ) -> Self {
        let std = (2.0 / input_size as f64).sqrt();
        let data: Vec<f64> =
            (0..input_size * output_size).map(|_| rng.normal(0.0, std)).collect();
        let weight = Tensor::new(vec![input_size, output_size], data).expect("sized above");
        let bias_len = if has_bias { output_size } else { 0 };
        Dense {
            weight: Parameter::new(format!("{name}.weight"), weight),
            bias: Parameter::new(format!("{name}.bias"), Tensor::zeros(vec![bias_len])),
            input_size,
            output_size,
            has_bias,
        }
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        if x.numel() != self.input_size {
            return Err(Error::Config(format!(
                "dense expects input extent {}, got {}",
                self.input_size,
                x.numel()
            )));
        }
        let w = self.weight.value.data();
        let mut out = if self.has_bias {
            self.bias.value.data().to_vec()
        } else {
            vec![0.0; self.output_size]
        };
        for (i, &xv) in x.data().iter().enumerate() {
            let row = &w[i * self.output_size..(i + 1) * self.output_size];
            for (o, &wv) in row.iter().enumerate() {
                out[o] += xv * wv;
            }
        }
        Ok(Tensor::vector(out))
    }

    pub fn backward(&self, x: &Tensor, grad_out: &Tensor) -> (Tensor, DenseGrads) {
        let w = self.weight.value.data();
        let go = grad_out.data();
        let mut gx = vec![0.0; self.input_size];
        let mut gw = vec![0.0; self.input_size * self.output_size];
        for (i, &xv) in x.data().iter().enumerate() {
            let row = &w[i * self.output_size..(i + 1) * self.output_size];
            let grow = &mut gw[i * self.output_size..(i + 1) * self.output_size];
            let mut acc = 0.0;
            for o in 0..self.output_size {
                grow[o] = xv * go[o];
                acc += row[o] * go[o];
            }
            gx[i] = acc;
        }
        let gb = if self.has_bias { go.to_vec() } else { Vec::new() };
        (
            Tensor::vector(gx),
            DenseGrads {
                weight: Tensor::new(vec![self.input_size, self.output_size], gw)
                    .expect("sized above"),
                bias: Tensor::vector(gb),
            },
        )
    }

    pub fn param_count(&self) -> usize {
        self.weight.value.numel() + self.bias.value.numel()
    }

    pub fn params(&self) -> Vec<&Parameter> {
        vec![&self.weight, &self.bias]
    }

    pub fn params_mut(&mut self) -> Vec<&mut Parameter> {
        vec![&mut self.weight, &mut self.bias]
    }
}

// ── dropout ─────────────────────────────────────────────────────────────

/// Per-activation keep mask holding the survivor scale 1/(1-rate) or 0.
#[derive(Debug, Clone)]
pub struct DropoutMask {
    scales: Vec<f64>,
}

/// Inverted dropout, training mode: zeroes each activation independently
/// with probability `rate` and scales survivors by 1/(1-rate), so inference
/// is the identity and needs no op at all.
pub fn dropout_forward(
    x: &Tensor,
    rate: f64,
    rng: &mut SplitMix64,
) -> Result<(Tensor, DropoutMask)> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::Config(format!("dropout rate must lie in [0,1), got {rate}")));
    }
    let keep_scale = 1.0 / (1.0 - rate);
    let scales: Vec<f64> = x
        .data()
        .iter()
        .map(|_| if rng.next_f64() < rate { 0.0 } else { keep_scale })
        .collect();
    let data = x.data().iter().zip(&scales).map(|(&v, &s)| v * s).collect();
    let out = Tensor::new(x.shape().to_vec(), data).expect("shape preserved");
    Ok((out, DropoutMask { scales }))
}

/// Applies the forward mask to the upstream gradient.
pub fn dropout_backward(mask: &DropoutMask, grad_out: &Tensor) -> Tensor {
    let data = grad_out.data().iter().zip(&mask.scales).map(|(&g, &s)| g * s).collect();
    Tensor::new(grad_out.shape().to_vec(), data).expect("shape preserved")
}

// ── batchnorm ───────────────────────────────────────────────────────────

/// Per-channel statistics gathered during one training forward, applied to
/// the running estimates afterward in sample order.
#[derive(Debug, Clone)]
pub struct BnStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

/// Cache for the batchnorm backward pass.
#[derive(Debug, Clone)]
pub struct BnCache {
    xhat: Vec<f64>,
    inv_std: Vec<f64>,
    shape: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct BnGrads {
    pub gamma: Tensor,
    pub beta: Tensor,
}

/// Channel-wise batch normalization over `h x w x c` maps.
///
/// A forward call sees exactly one sample, so the normalizing statistics
/// are that sample's spatial mean and variance per channel. This keeps
/// every op pure per sample: mini-batch members can run in parallel and the
/// running-stat updates are applied afterward in sample order, giving
/// results independent of the schedule.
#[derive(Debug, Clone)]
pub struct BatchNorm {
    pub gamma: Parameter,
    pub beta: Parameter,
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
    pub momentum: f64,
    pub eps: f64,
    pub channels: usize,
}

impl BatchNorm {
    pub fn new(name: &str, channels: usize) -> Self {
        BatchNorm {
            gamma: Parameter::new(format!("{name}.gamma"), Tensor::filled(vec![channels], 1.0)),
            beta: Parameter::new(format!("{name}.beta"), Tensor::zeros(vec![channels])),
            running_mean: vec![0.0; channels],
            running_var: vec![1.0; channels],
            momentum: 0.9,
            eps: 1e-5,
            channels,
        }
    }

    /// Training-mode forward. Returns the output, the backward cache, and
    /// the sample statistics for the caller to fold into the running
    /// estimates via [`BatchNorm::apply_stats`].
    pub fn forward_train(&self, x: &Tensor) -> Result<(Tensor, BnCache, BnStats)> {
        let (h, w, c) = x.dims3();
        if c != self.channels {
            return Err(Error::Config(format!(
                "batchnorm expects {} channels, got {}",
                self.channels, c
            )));
        }
        let n = (h * w) as f64;
        let data = x.data();
        let mut mean = vec![0.0; c];
        let mut var = vec![0.0; c];
        for pos in 0..h * w {
            for ch in 0..c {
                mean[ch] += data[pos * c + ch];
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        for pos in 0..h * w {
            for ch in 0..c {
                let d = data[pos * c + ch] - mean[ch];
                var[ch] += d * d;
            }
        }
        var.iter_mut().for_each(|v| *v /= n);

        let inv_std: Vec<f64> = var.iter().map(|&v| 1.0 / (v + self.eps).sqrt()).collect();
        let gamma = self.gamma.value.data();
        let beta = self.beta.value.data();
        let mut xhat = vec![0.0; data.len()];
        let mut out = vec![0.0; data.len()];
        for pos in 0..h * w {
            for ch in 0..c {
                let idx = pos * c + ch;
                let xh = (data[idx] - mean[ch]) * inv_std[ch];
                xhat[idx] = xh;
                out[idx] = gamma[ch] * xh + beta[ch];
            }
        }
        let out = Tensor::new(x.shape().to_vec(), out)?;
        let cache = BnCache { xhat, inv_std, shape: x.shape().to_vec() };
        Ok((out, cache, BnStats { mean, var }))
    }

    /// Inference-mode forward using the running statistics.
    pub fn forward_infer(&self, x: &Tensor) -> Result<Tensor> {
        let (_, _, c) = x.dims3();
        if c != self.channels {
            return Err(Error::Config(format!(
                "batchnorm expects {} channels, got {}",
                self.channels, c
            )));
        }
        let gamma = self.gamma.value.data();
        let beta = self.beta.value.data();
        let inv_std: Vec<f64> =
            self.running_var.iter().map(|&v| 1.0 / (v + self.eps).sqrt()).collect();
        let data = x
            .data()
            .iter()
            .enumerate()
            .map(|(i, &v)| {
                let ch = i % c;
                gamma[ch] * (v - self.running_mean[ch]) * inv_std[ch] + beta[ch]
            })
            .collect();
        Tensor::new(x.shape().to_vec(), data)
    }

    /// Folds one sample's statistics into the running estimates:
    /// running = momentum·running + (1 - momentum)·sample.
    pub fn apply_stats(&mut self, stats: &BnStats) {
        for ch in 0..self.channels {
            self.running_mean[ch] =
                self.momentum * self.running_mean[ch] + (1.0 - self.momentum) * stats.mean[ch];
            self.running_var[ch] =
                self.momentum * self.running_var[ch] + (1.0 - self.momentum) * stats.var[ch];
        }
    }

    /// Backward through the training-mode normalization.
    pub fn backward(&self, cache: &BnCache, grad_out: &Tensor) -> (Tensor, BnGrads) {
        let c = self.channels;
        let total = grad_out.numel();
        let n = (total / c) as f64;
        let gamma = self.gamma.value.data();
        let go = grad_out.data();
        let xhat = &cache.xhat;

        // Per-channel reductions: sum of dxhat and sum of dxhat·xhat.
        let mut sum_dxhat = vec![0.0; c];
        let mut sum_dxhat_xhat = vec![0.0; c];
        let mut dgamma = vec![0.0; c];
        let mut dbeta = vec![0.0; c];
        for idx in 0..total {
            let ch = idx % c;
            let dxhat = go[idx] * gamma[ch];
            sum_dxhat[ch] += dxhat;
            sum_dxhat_xhat[ch] += dxhat * xhat[idx];
            dgamma[ch] += go[idx] * xhat[idx];
            dbeta[ch] += go[idx];
        }
        let mut gx = vec![0.0; total];
        for idx in 0..total {
            let ch = idx % c;
            let dxhat = go[idx] * gamma[ch];
            gx[idx] = cache.inv_std[ch] / n
                * (n * dxhat - sum_dxhat[ch] - xhat[idx] * sum_dxhat_xhat[ch]);
        }
        let grad_input = Tensor::new(cache.shape.clone(), gx).expect("shape preserved");
        let grads = BnGrads { gamma: Tensor::vector(dgamma), beta: Tensor::vector(dbeta) };
        (grad_input, grads)
    }

    pub fn param_count(&self) -> usize {
        2 * self.channels
    }

    pub fn params(&self) -> Vec<&Parameter> {
        vec![&self.gamma, &self.beta]
    }

    pub fn params_mut(&mut self) -> Vec<&mut Parameter> {
        vec![&mut self.gamma, &mut self.beta]
    }
}
