//! Finite-difference gradient checks for every differentiable op and for
//! the assembled model.
//!
//! Each case builds a fresh op from a seeded generator, takes a random
//! weighted sum of its output as the scalar loss, and compares the
//! hand-written backward pass against central differences.

use crate::data::image::RgbImage;
use crate::model::{
    BackboneConfig, ConvBlockConfig, DntModel, Fusion, ModelConfig, PatchGrid,
};
use crate::nn::{
    bilinear_resize, bilinear_resize_backward, check_gradient, dropout_backward,
    dropout_forward, global_average_pool, global_average_pool_backward, maxpool2,
    maxpool2_backward, relu, relu_backward, softmax_cross_entropy,
    softmax_cross_entropy_backward, BatchNorm, Conv2d, Dense, GradCheckReport, LstmCell, Tensor,
    DEFAULT_STEP,
};
use crate::rng::SplitMix64;
use crate::verify::CheckReport;

/// Per-op tolerance on the max relative error.
pub const OP_TOLERANCE: f64 = 1e-5;
/// Tolerance for the assembled model, where error compounds across layers.
pub const MODEL_TOLERANCE: f64 = 1e-4;

fn weighted(t: &Tensor, w: &[f64]) -> f64 {
    t.data().iter().zip(w).map(|(a, b)| a * b).sum()
}

fn random_tensor(shape: Vec<usize>, rng: &mut SplitMix64) -> Tensor {
    let n: usize = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.uniform(-1.0, 1.0)).collect()).unwrap()
}

fn merge(name: &str, tolerance: f64, parts: Vec<(&str, GradCheckReport)>) -> CheckReport {
    let mut worst = 0.0f64;
    let mut worst_part = parts[0].0;
    let mut checked = 0;
    for (label, r) in &parts {
        checked += r.checked;
        if r.max_rel_error > worst {
            worst = r.max_rel_error;
            worst_part = label;
        }
    }
    CheckReport {
        name: name.into(),
        passed: worst < tolerance,
        worst,
        tolerance,
        detail: format!("{checked} coordinates, worst in {worst_part}"),
    }
}

fn conv_case(seed: u64) -> CheckReport {
    let mut rng = SplitMix64::new(seed);
    let conv = Conv2d::new("c", 3, 3, 4, 1, 1, &mut rng).unwrap();
    let input = random_tensor(vec![6, 6, 3], &mut rng);
    let out = conv.forward(&input).unwrap();
    let w: Vec<f64> = (0..out.numel()).map(|_| rng.uniform(-1.0, 1.0)).collect();
    let grad_out = Tensor::new(out.shape().to_vec(), w.clone()).unwrap();
    let (gx, gp) = conv.backward(&input, &grad_out);

    let mut x = input.data().to_vec();
    let rx = check_gradient(
        |v| {
            let t = Tensor::new(vec![6, 6, 3], v.to_vec()).unwrap();
            weighted(&conv.forward(&t).unwrap(), &w)
        },
        &mut x,
        gx.data(),
        DEFAULT_STEP,
    );
    let mut kv = conv.kernels.value.data().to_vec();
    let rk = check_gradient(
        |v| {
            let mut c = conv.clone();
            c.kernels.value.data_mut().copy_from_slice(v);
            weighted(&c.forward(&input).unwrap(), &w)
        },
        &mut kv,
        gp.kernels.data(),
        DEFAULT_STEP,
    );
    let mut bv = conv.bias.value.data().to_vec();
    let rb = check_gradient(
        |v| {
            let mut c = conv.clone();
            c.bias.value.data_mut().copy_from_slice(v);
            weighted(&c.forward(&input).unwrap(), &w)
        },
        &mut bv,
        gp.bias.data(),
        DEFAULT_STEP,
    );
    merge("conv2d", OP_TOLERANCE, vec![("input", rx), ("kernels", rk), ("bias", rb)])
}

fn dense_case(seed: u64) -> CheckReport {
    let mut rng = SplitMix64::new(seed);
    let dense = Dense::new("d", 12, 5, &mut rng);
    let input = random_tensor(vec![12], &mut rng);
    let w: Vec<f64> = (0..5).map(|_| rng.uniform(-1.0, 1.0)).collect();
    let grad_out = Tensor::vector(w.clone());
    let (gx, gp) = dense.backward(&input, &grad_out);

    let mut x = input.data().to_vec();
    let rx = check_gradient(
        |v| weighted(&dense.forward(&Tensor::vector(v.to_vec())).unwrap(), &w),
        &mut x,
        gx.data(),
        DEFAULT_STEP,
    );
    let mut wv = dense.weight.value.data().to_vec();
    let rw = check_gradient(
        |v| {
            let mut d = dense.clone();
            d.weight.value.data_mut().copy_from_slice(v);
            weighted(&d.forward(&input).unwrap(), &w)
        },
        &mut wv,
        gp.weight.data(),
        DEFAULT_STEP,
    );
    let mut bv = dense.bias.value.data().to_vec();
    let rb = check_gradient(
        |v| {
            let mut d = dense.clone();
            d.bias.value.data_mut().copy_from_slice(v);
            weighted(&d.forward(&input).unwrap(), &w)
        },
        &mut bv,
        gp.bias.data(),
        DEFAULT_STEP,
    );
    merge("dense", OP_TOLERANCE, vec![("input", rx), ("weight", rw), ("bias", rb)])
}

fn batchnorm_case(seed: u64) -> CheckReport {
    let mut rng = SplitMix64::new(seed);
    let mut bn = BatchNorm::new("bn", 3);
    for (i, v) in bn.gamma.value.data_mut().iter_mut().enumerate() {
        *v = 0.5 + 0.3 * i as f64;
    }
    for (i, v) in bn.beta.value.data_mut().iter_mut().enumerate() {
        *v = -0.2 + 0.1 * i as f64;
    }
    let input = random_tensor(vec![5, 5, 3], &mut rng);
    let (out, cache, _) = bn.forward_train(&input).unwrap();
    let w: Vec<f64> = (0..out.numel()).map(|_| rng.uniform(-1.0, 1.0)).collect();
    let grad_out = Tensor::new(out.shape().to_vec(), w.clone()).unwrap();
    let (gx, gp) = bn.backward(&cache, &grad_out);

    let mut x = input.data().to_vec();
    let rx = check_gradient(
        |v| {
            let t = Tensor::new(vec![5, 5, 3], v.to_vec()).unwrap();
            weighted(&bn.forward_train(&t).unwrap().0, &w)
        },
        &mut x,
        gx.data(),
        DEFAULT_STEP,
    );
    let mut gv = bn.gamma.value.data().to_vec();
    let rg = check_gradient(
        |v| {
            let mut b = bn.clone();
            b.gamma.value.data_mut().copy_from_slice(v);
            weighted(&b.forward_train(&input).unwrap().0, &w)
        },
        &mut gv,
        gp.gamma.data(),
        DEFAULT_STEP,
    );
    let mut bv = bn.beta.value.data().to_vec();
    let rb = check_gradient(
        |v| {
            let mut b = bn.clone();
            b.beta.value.data_mut().copy_from_slice(v);
            weighted(&b.forward_train(&input).unwrap().0, &w)
        },
        &mut bv,
        gp.beta.data(),
        DEFAULT_STEP,
    );
    merge("batchnorm", OP_TOLERANCE, vec![("input", rx), ("gamma", rg), ("beta", rb)])
}

// ReLU inputs are kept away from the kink at zero, where the derivative
// is undefined and finite differences straddle it.
fn relu_case(seed: u64) -> CheckReport {
    let mut rng = SplitMix64::new(seed);
    let data: Vec<f64> = (0..32)
        .map(|_| {
            let sign = if rng.next_f64() < 0.5 { -1.0 } else { 1.0 };
            sign * rng.uniform(0.2, 1.0)
        })
        .collect();
    let input = Tensor::new(vec![4, 4, 2], data).unwrap();
    let out = relu(&input);
    let w: Vec<f64> = (0..out.numel()).map(|_| rng.uniform(-1.0, 1.0)).collect();
    let grad_out = Tensor::new(out.shape().to_vec(), w.clone()).unwrap();
    let gx = relu_backward(&input, &grad_out);

    let mut x = input.data().to_vec();
    let rx = check_gradient(
        |v| weighted(&relu(&Tensor::new(vec![4, 4, 2], v.to_vec()).unwrap()), &w),
        &mut x,
        gx.data(),
        DEFAULT_STEP,
    );
    merge("relu", OP_TOLERANCE, vec![("input", rx)])
}

fn maxpool_case(seed: u64) -> CheckReport {
    let mut rng = SplitMix64::new(seed);
    let input = random_tensor(vec![6, 6, 2], &mut rng);
    let (out, cache) = maxpool2(&input);
    let w: Vec<f64> = (0..out.numel()).map(|_| rng.uniform(-1.0, 1.0)).collect();
    let grad_out = Tensor::new(out.shape().to_vec(), w.clone()).unwrap();
    let gx = maxpool2_backward(&cache, &grad_out);

    let mut x = input.data().to_vec();
    let rx = check_gradient(
        |v| {
            let t = Tensor::new(vec![6, 6, 2], v.to_vec()).unwrap();
            weighted(&maxpool2(&t).0, &w)
        },
        &mut x,
        gx.data(),
        DEFAULT_STEP,
    );
    merge("maxpool2", OP_TOLERANCE, vec![("input", rx)])
}

fn gap_case(seed: u64) -> CheckReport {
    let mut rng = SplitMix64::new(seed);
    let input = random_tensor(vec![5, 7, 3], &mut rng);
    let out = global_average_pool(&input);
    let w: Vec<f64> = (0..out.numel()).map(|_| rng.uniform(-1.0, 1.0)).collect();
    let grad_out = Tensor::new(out.shape().to_vec(), w.clone()).unwrap();
    let gx = global_average_pool_backward(input.shape(), &grad_out);

    let mut x = input.data().to_vec();
    let rx = check_gradient(
        |v| {
            let t = Tensor::new(vec![5, 7, 3], v.to_vec()).unwrap();
            weighted(&global_average_pool(&t), &w)
        },
        &mut x,
        gx.data(),
        DEFAULT_STEP,
    );
    merge("global_average_pool", OP_TOLERANCE, vec![("input", rx)])
}

fn resize_case(seed: u64) -> CheckReport {
    let mut rng = SplitMix64::new(seed);
    let input = random_tensor(vec![5, 7, 2], &mut rng);
    let out = bilinear_resize(&input, 12, 9).unwrap();
    let w: Vec<f64> = (0..out.numel()).map(|_| rng.uniform(-1.0, 1.0)).collect();
    let grad_out = Tensor::new(out.shape().to_vec(), w.clone()).unwrap();
    let gx = bilinear_resize_backward(input.shape(), &grad_out);

    let mut x = input.data().to_vec();
    let rx = check_gradient(
        |v| {
            let t = Tensor::new(vec![5, 7, 2], v.to_vec()).unwrap();
            weighted(&bilinear_resize(&t, 12, 9).unwrap(), &w)
        },
        &mut x,
        gx.data(),
        DEFAULT_STEP,
    );
    merge("bilinear_resize", OP_TOLERANCE, vec![("input", rx)])
}

fn lstm_case(seed: u64) -> CheckReport {
    let mut rng = SplitMix64::new(seed);
    let cell = LstmCell::new("lstm", 6, 5, &mut rng);
    let inputs: Vec<Vec<f64>> =
        (0..16).map(|_| (0..6).map(|_| rng.uniform(-1.0, 1.0)).collect()).collect();
    let (h, cache) = cell.forward(&inputs).unwrap();
    let w: Vec<f64> = (0..h.len()).map(|_| rng.uniform(-1.0, 1.0)).collect();
    let (dx, grads) = cell.backward(&cache, &w);

    let analytic_params: Vec<f64> = [
        &grads.input_gate,
        &grads.forget_gate,
        &grads.output_gate,
        &grads.candidate,
    ]
    .iter()
    .flat_map(|g| {
        g.wx.data().iter().chain(g.wh.data()).chain(g.b.data()).copied().collect::<Vec<_>>()
    })
    .collect();
    let mut pv: Vec<f64> =
        cell.params().iter().flat_map(|p| p.value.data().to_vec()).collect();
    let rp = check_gradient(
        |v| {
            let mut c = cell.clone();
            let mut offset = 0;
            for p in c.params_mut() {
                let n = p.value.numel();
                p.value.data_mut().copy_from_slice(&v[offset..offset + n]);
                offset += n;
            }
            let (h, _) = c.forward(&inputs).unwrap();
            h.iter().zip(&w).map(|(a, b)| a * b).sum()
        },
        &mut pv,
        &analytic_params,
        DEFAULT_STEP,
    );

    let analytic_inputs: Vec<f64> = dx.iter().flatten().copied().collect();
    let mut xv: Vec<f64> = inputs.iter().flatten().copied().collect();
    let rx = check_gradient(
        |v| {
            let seq: Vec<Vec<f64>> = v.chunks(6).map(|c| c.to_vec()).collect();
            let (h, _) = cell.forward(&seq).unwrap();
            h.iter().zip(&w).map(|(a, b)| a * b).sum()
        },
        &mut xv,
        &analytic_inputs,
        DEFAULT_STEP,
    );
    merge("lstm", OP_TOLERANCE, vec![("parameters", rp), ("inputs", rx)])
}

fn softmax_ce_case(seed: u64) -> CheckReport {
    let mut rng = SplitMix64::new(seed);
    let mut logits: Vec<f64> = (0..5).map(|_| rng.uniform(-2.0, 2.0)).collect();
    let (_, probs) = softmax_cross_entropy(&logits, 2).unwrap();
    let dlogits = softmax_cross_entropy_backward(&probs, 2);
    let rx = check_gradient(
        |v| softmax_cross_entropy(v, 2).unwrap().0,
        &mut logits,
        &dlogits,
        DEFAULT_STEP,
    );
    merge("softmax_cross_entropy", OP_TOLERANCE, vec![("logits", rx)])
}

// The mask is a function of the seed alone, so rebuilding the generator
// inside the closure replays the identical mask for every probe.
fn dropout_case(seed: u64) -> CheckReport {
    let mut rng = SplitMix64::new(seed);
    let input = random_tensor(vec![6, 6, 2], &mut rng);
    let w: Vec<f64> = (0..input.numel()).map(|_| rng.uniform(-1.0, 1.0)).collect();
    let mask_seed = seed ^ 0x9e37;
    let (_, mask) =
        dropout_forward(&input, 0.3, &mut SplitMix64::new(mask_seed)).unwrap();
    let grad_out = Tensor::new(input.shape().to_vec(), w.clone()).unwrap();
    let gx = dropout_backward(&mask, &grad_out);

    let mut x = input.data().to_vec();
    let rx = check_gradient(
        |v| {
            let t = Tensor::new(vec![6, 6, 2], v.to_vec()).unwrap();
            let (out, _) = dropout_forward(&t, 0.3, &mut SplitMix64::new(mask_seed)).unwrap();
            weighted(&out, &w)
        },
        &mut x,
        gx.data(),
        DEFAULT_STEP,
    );
    merge("dropout", OP_TOLERANCE, vec![("input", rx)])
}

fn mini_model() -> ModelConfig {
    ModelConfig {
        input_size: 32,
        backbone: BackboneConfig {
            blocks: vec![
                ConvBlockConfig { out_channels: 4, batchnorm: true },
                ConvBlockConfig { out_channels: 8, batchnorm: true },
            ],
        },
        grid: PatchGrid::with_side(12).unwrap(),
        lstm_hidden: 8,
        fusion: Fusion::Concatenation,
        dropout_rate: 0.0,
        num_classes: 3,
        ..ModelConfig::desk(3)
    }
}

fn full_model_case(seed: u64) -> CheckReport {
    let model = DntModel::new(mini_model(), seed).unwrap();
    let mut img_rng = SplitMix64::new(seed.wrapping_add(17));
    let mut img = RgbImage::filled(32, 32, 0.0);
    for v in img.data_mut() {
        *v = img_rng.below(256) as f64;
    }
    let label = 1;

    let fwd = model.train_forward(&img, label, &mut SplitMix64::new(0)).unwrap();
    let analytic = model.backward(&fwd).flat();
    let mut flat = model.flat_params();
    let r = check_gradient(
        |v| {
            let mut m = model.clone();
            m.set_flat_params(v).unwrap();
            m.train_forward(&img, label, &mut SplitMix64::new(0)).unwrap().loss
        },
        &mut flat,
        &analytic,
        DEFAULT_STEP,
    );
    merge("full_model", MODEL_TOLERANCE, vec![("parameters", r)])
}

/// Every per-op check followed by the assembled-model check.
pub fn all_cases(seed: u64) -> Vec<CheckReport> {
    vec![
        conv_case(seed),
        dense_case(seed.wrapping_add(1)),
        batchnorm_case(seed.wrapping_add(2)),
        relu_case(seed.wrapping_add(3)),
        maxpool_case(seed.wrapping_add(4)),
        gap_case(seed.wrapping_add(5)),
        resize_case(seed.wrapping_add(6)),
        lstm_case(seed.wrapping_add(7)),
        softmax_ce_case(seed.wrapping_add(8)),
        dropout_case(seed.wrapping_add(9)),
        full_model_case(seed.wrapping_add(10)),
    ]
}
