//! Self-check suites behind the `verify` command: brute-force LBP oracle
//! equivalence, finite-difference gradient checks, and runtime invariants.
//!
//! Suites return structured reports instead of printing, so tests and the
//! CLI consume the same results. Every suite is deterministic in its seed
//! and touches no files.

pub mod grad;
pub mod oracle;

use crate::data::{random_erase, EraseConfig, RgbImage};
use crate::lbp::{
    default_configs, descriptor_len, histogram, lbp_code_map, texture_descriptor, GrayImage,
    LbpConfig,
};
use crate::model::{BackboneConfig, ConvBlockConfig, DntModel, ModelConfig, PatchGrid};
use crate::nn::{dropout_forward, sgd_step, Tensor};
use crate::rng::{self, stream, SplitMix64};
use crate::train::MetricsReport;

pub use oracle::{naive_code_map, naive_descriptor, naive_histogram};

/// Outcome of one check. `worst` is the largest observed deviation: a
/// relative error for gradient checks, a count of differing values for
/// exact-match checks.
#[derive(Debug, Clone)]
pub struct CheckReport {
    pub name: String,
    pub passed: bool,
    pub worst: f64,
    /// Largest `worst` still accepted; 0 means the check demands exactness.
    pub tolerance: f64,
    pub detail: String,
}

impl CheckReport {
    fn exact(name: &str, mismatches: usize, detail: String) -> Self {
        CheckReport {
            name: name.into(),
            passed: mismatches == 0,
            worst: mismatches as f64,
            tolerance: 0.0,
            detail,
        }
    }
}

/// All checks of one suite.
#[derive(Debug, Clone)]
pub struct SuiteReport {
    pub suite: String,
    pub checks: Vec<CheckReport>,
}

impl SuiteReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }
}

fn random_gray(rng: &mut SplitMix64, h: usize, w: usize) -> GrayImage {
    GrayImage::new(h, w, (0..h * w).map(|_| rng.below(256) as f64).collect()).unwrap()
}

/// Oracle equivalence over random images: code maps, histogram blocks and
/// assembled descriptors must match the naive reimplementation exactly,
/// and the code maps must survive monotone and affine intensity maps.
pub fn run_lbp_suite(seed: u64) -> SuiteReport {
    let configs = default_configs();
    let mut rng = stream(seed, rng::domain::VERIFY, 0, 0);
    let images: Vec<GrayImage> = (0..50)
        .map(|_| {
            let h = 16 + rng.below(49) as usize;
            let w = 16 + rng.below(49) as usize;
            random_gray(&mut rng, h, w)
        })
        .collect();

    let mut checks = Vec::new();

    let mut code_mismatches = 0;
    let mut histogram_mismatches = 0;
    let mut descriptor_mismatches = 0;
    for img in &images {
        for cfg in &configs {
            let fast = lbp_code_map(img, cfg).unwrap();
            let naive = naive_code_map(img, cfg).unwrap();
            code_mismatches +=
                fast.codes.iter().zip(&naive.codes).filter(|(a, b)| a != b).count();
            code_mismatches += fast.codes.len().abs_diff(naive.codes.len());

            for normalize in [false, true] {
                let fast_block = histogram(&fast, cfg, normalize).unwrap();
                let naive_block = naive_histogram(&naive, cfg, normalize);
                histogram_mismatches +=
                    fast_block.iter().zip(&naive_block).filter(|(a, b)| a != b).count();
            }
        }
        let fast = texture_descriptor(img, &configs, true).unwrap();
        let naive = naive_descriptor(img, &configs, true).unwrap();
        descriptor_mismatches +=
            fast.values.iter().zip(&naive).filter(|(a, b)| a != b).count();
        descriptor_mismatches += (fast.len() != descriptor_len(&configs)) as usize;
    }
    checks.push(CheckReport::exact(
        "code maps equal the naive oracle",
        code_mismatches,
        format!("{} images x {} configs", images.len(), configs.len()),
    ));
    checks.push(CheckReport::exact(
        "histogram blocks equal code-by-code binning",
        histogram_mismatches,
        format!("{} images, raw and normalized", images.len()),
    ));
    checks.push(CheckReport::exact(
        "descriptors assemble at the fixed stride",
        descriptor_mismatches,
        format!("{} images, width {}", images.len(), descriptor_len(&configs)),
    ));

    // Integer-offset reads keep the (8,1) code map invariant under any
    // strictly increasing intensity map.
    let square = LbpConfig::new(8, 1.0, crate::lbp::Binning::Raw256).unwrap();
    let mut rng = stream(seed, rng::domain::VERIFY, 1, 0);
    let mut monotone_mismatches = 0;
    for _ in 0..20 {
        let img = random_gray(&mut rng, 24, 24);
        let mapped = GrayImage::new(
            24,
            24,
            img.pixels().iter().map(|&v| (v / 32.0).exp() + 3.0 * v).collect(),
        )
        .unwrap();
        let before = lbp_code_map(&img, &square).unwrap();
        let after = lbp_code_map(&mapped, &square).unwrap();
        monotone_mismatches +=
            before.codes.iter().zip(&after.codes).filter(|(a, b)| a != b).count();
    }
    checks.push(CheckReport::exact(
        "monotone maps preserve square-ring codes",
        monotone_mismatches,
        "20 draws, exp-plus-linear map".into(),
    ));

    let mut rng = stream(seed, rng::domain::VERIFY, 2, 0);
    let mut affine_mismatches = 0;
    for cfg in &configs {
        for _ in 0..20 {
            let img = random_gray(&mut rng, 20, 20);
            let a = rng.uniform(0.5, 2.0);
            let b = rng.uniform(-50.0, 50.0);
            let mapped =
                GrayImage::new(20, 20, img.pixels().iter().map(|&v| a * v + b).collect())
                    .unwrap();
            let before = lbp_code_map(&img, cfg).unwrap();
            let after = lbp_code_map(&mapped, cfg).unwrap();
            affine_mismatches +=
                before.codes.iter().zip(&after.codes).filter(|(x, y)| x != y).count();
        }
    }
    checks.push(CheckReport::exact(
        "affine maps preserve all code maps",
        affine_mismatches,
        "20 draws per config".into(),
    ));

    SuiteReport { suite: "lbp".into(), checks }
}

/// Finite-difference checks for every op and the assembled model.
pub fn run_grad_suite(seed: u64) -> SuiteReport {
    SuiteReport { suite: "grad".into(), checks: grad::all_cases(seed) }
}

fn prng_check() -> CheckReport {
    // First outputs of the reference splitmix64 sequence for seed 0.
    let mut r = SplitMix64::new(0);
    let pinned =
        [0xE220_A839_7B1D_CDAFu64, 0x6E78_9E6A_A1B9_65F4, 0x06C4_5D18_8009_454F];
    let mut mismatches = pinned.iter().filter(|&&v| r.next_u64() != v).count();
    let a = stream(7, rng::domain::SHUFFLE, 0, 0).next_u64();
    let b = stream(7, rng::domain::AUGMENT, 0, 0).next_u64();
    let c = stream(7, rng::domain::SHUFFLE, 1, 0).next_u64();
    mismatches += (a == b) as usize + (a == c) as usize;
    CheckReport::exact(
        "splitmix64 sequence and substreams are pinned",
        mismatches,
        "3 reference outputs, 2 substream separations".into(),
    )
}

fn erase_check(seed: u64) -> CheckReport {
    let cfg = EraseConfig { enabled: true, scale_range: (0.2, 0.8), fill: 127.0 };
    let mut rng = stream(seed, rng::domain::VERIFY, 3, 0);
    let side = 64usize;
    let base = RgbImage::filled(side, side, 10.0);
    let (min_side, max_side) = ((0.2 * side as f64) as usize, (0.8 * side as f64) as usize);
    let mut violations = 0;
    for _ in 0..500 {
        let erased = random_erase(&base, &cfg, &mut rng);
        let mut top = side;
        let mut bottom = 0;
        let mut left = side;
        let mut right = 0;
        let mut changed = 0;
        for y in 0..side {
            for x in 0..side {
                let px = erased.at(y, x);
                if px == [10.0, 10.0, 10.0] {
                    continue;
                }
                if px != [127.0, 127.0, 127.0] {
                    violations += 1;
                }
                changed += 1;
                top = top.min(y);
                bottom = bottom.max(y);
                left = left.min(x);
                right = right.max(x);
            }
        }
        if changed == 0 {
            violations += 1;
            continue;
        }
        let (eh, ew) = (bottom - top + 1, right - left + 1);
        // The erased region must be one solid rectangle with both sides
        // floor-quantized from fractions in [0.2, 0.8].
        violations += (changed != eh * ew) as usize;
        violations += (eh < min_side || eh > max_side) as usize;
        violations += (ew < min_side || ew > max_side) as usize;
    }
    CheckReport::exact(
        "random erasing writes one in-bounds rectangle",
        violations,
        "500 draws on a 64x64 sentinel image".into(),
    )
}

fn dropout_check(seed: u64) -> CheckReport {
    let mut rng = stream(seed, rng::domain::VERIFY, 4, 0);
    let rate = 0.3;
    let keep_scale = 1.0 / (1.0 - rate);
    let data: Vec<f64> = (0..256).map(|_| rng.uniform(0.5, 2.0)).collect();
    let input = Tensor::new(vec![256], data.clone()).unwrap();
    let (out, _) = dropout_forward(&input, rate, &mut rng).unwrap();
    let mut violations = 0;
    let mut kept = 0;
    for (o, x) in out.data().iter().zip(&data) {
        if *o == 0.0 {
            continue;
        }
        kept += 1;
        if *o != x * keep_scale {
            violations += 1;
        }
    }
    // All-kept or all-dropped would make the scaling vacuous.
    violations += (kept == 0 || kept == 256) as usize;
    CheckReport::exact(
        "dropout zeroes or rescales by the keep rate exactly",
        violations,
        format!("{kept} of 256 coordinates kept at rate {rate}"),
    )
}

fn metrics_check(seed: u64) -> CheckReport {
    let mut rng = stream(seed, rng::domain::VERIFY, 5, 0);
    let mut violations = 0;
    for _ in 0..20 {
        let k = 2 + rng.below(4) as usize;
        let confusion: Vec<Vec<usize>> =
            (0..k).map(|_| (0..k).map(|_| rng.below(9) as usize).collect()).collect();
        let names = (0..k).map(|i| format!("c{i}")).collect();
        let report = MetricsReport::from_confusion(confusion, 1.0, names);
        violations += report.validate().is_err() as usize;
        violations += !(0.0..=100.0).contains(&report.top1_accuracy) as usize;
        violations += !(0.0..=100.0).contains(&report.macro_precision) as usize;
        violations += !(0.0..=100.0).contains(&report.macro_recall) as usize;
    }

    // A constant predictor on a balanced 4-class split has closed-form
    // scores: top-1 25%, macro recall 25%, macro precision 6.25%.
    let constant = MetricsReport::from_confusion(
        vec![vec![5, 0, 0, 0]; 4],
        1.0,
        (0..4).map(|i| format!("c{i}")).collect(),
    );
    violations += (constant.top1_accuracy != 25.0) as usize;
    violations += (constant.macro_recall != 25.0) as usize;
    violations += (constant.macro_precision != 6.25) as usize;
    CheckReport::exact(
        "metric identities hold",
        violations,
        "20 random confusions plus the constant-predictor closed form".into(),
    )
}

fn replay_check(seed: u64) -> CheckReport {
    let cfg = ModelConfig {
        input_size: 32,
        backbone: BackboneConfig {
            blocks: vec![
                ConvBlockConfig { out_channels: 4, batchnorm: true },
                ConvBlockConfig { out_channels: 8, batchnorm: true },
            ],
        },
        grid: PatchGrid::with_side(16).unwrap(),
        lstm_hidden: 8,
        dropout_rate: 0.2,
        num_classes: 3,
        ..ModelConfig::desk(3)
    };
    let mut img_rng = stream(seed, rng::domain::VERIFY, 6, 0);
    let mut img = RgbImage::filled(32, 32, 0.0);
    for v in img.data_mut() {
        *v = img_rng.below(256) as f64;
    }

    let run = || {
        let mut model = DntModel::new(cfg.clone(), seed).unwrap();
        let fwd = model
            .train_forward(&img, 1, &mut stream(seed, rng::domain::DROPOUT, 0, 0))
            .unwrap();
        let grads = model.backward(&fwd);
        model.accumulate(&grads);
        sgd_step(model.params_mut(), 1e-3).unwrap();
        model.apply_bn_stats(&fwd.bn_stats).unwrap();
        (fwd.loss, model.flat_params())
    };
    let (loss_a, params_a) = run();
    let (loss_b, params_b) = run();
    let mut mismatches = (loss_a.to_bits() != loss_b.to_bits()) as usize;
    mismatches += params_a
        .iter()
        .zip(&params_b)
        .filter(|(a, b)| a.to_bits() != b.to_bits())
        .count();
    CheckReport::exact(
        "forward, backward and update replay bitwise",
        mismatches,
        format!("{} parameters after one step", params_a.len()),
    )
}

/// Runtime invariants: pinned PRNG, erasing and dropout semantics, metric
/// identities, bitwise replay of a training step.
pub fn run_invariant_suite(seed: u64) -> SuiteReport {
    SuiteReport {
        suite: "invariants".into(),
        checks: vec![
            prng_check(),
            erase_check(seed),
            dropout_check(seed),
            metrics_check(seed),
            replay_check(seed),
        ],
    }
}

/// Every suite in order: lbp, grad, invariants.
pub fn run_all(seed: u64) -> Vec<SuiteReport> {
    vec![run_lbp_suite(seed), run_grad_suite(seed), run_invariant_suite(seed)]
}
