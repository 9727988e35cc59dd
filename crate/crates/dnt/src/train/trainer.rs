//! SGD training loop with the single-drop learning-rate schedule.
//!
//! Determinism contract: every random draw comes from a substream keyed by
//! (seed, purpose, epoch, sample), and mini-batch gradients are reduced in
//! batch order, so the trajectory is bit-identical whether batch members
//! run sequentially or in parallel.

use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{augment_eval, augment_train, load_image, resolve_path, AugmentationConfig,
    DatasetManifest, RgbImage, Split};
use crate::error::{Error, Result};
use crate::model::{DntModel, ModelGrads};
use crate::nn::layers::BnStats;
use crate::nn::sgd_step;
use crate::rng::{self, stream};

/// Schedule and budget of one training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    /// Initial learning rate.
    pub lr0: f64,
    /// First epoch trained at the dropped rate.
    pub lr_drop_epoch: usize,
    pub lr_drop_factor: f64,
    pub seed: u64,
    /// Serializes all per-sample work onto one thread. Results are
    /// bit-identical either way; the flag only removes scheduling noise
    /// from timings.
    pub deterministic: bool,
    /// Fraction of the train split held out for per-epoch validation.
    /// Zero (the default) trains on everything and skips validation.
    #[serde(default)]
    pub val_fraction: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 200,
            batch_size: 8,
            lr0: 1e-3,
            lr_drop_epoch: 100,
            lr_drop_factor: 10.0,
            seed: 1,
            deterministic: false,
            val_fraction: 0.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::Config("training needs at least one epoch".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be positive".into()));
        }
        if !(self.lr0 > 0.0) {
            return Err(Error::Config(format!("learning rate {} must be positive", self.lr0)));
        }
        if !(self.lr_drop_factor > 1.0) {
            return Err(Error::Config(format!(
                "learning-rate drop factor {} must exceed 1",
                self.lr_drop_factor
            )));
        }
        if !(0.0..1.0).contains(&self.val_fraction) {
            return Err(Error::Config(format!(
                "validation fraction {} must lie in [0, 1)",
                self.val_fraction
            )));
        }
        Ok(())
    }
}

/// lr0 before the drop epoch, lr0 / factor from it onward: exactly two
/// distinct values, non-increasing in the epoch.
pub fn lr_schedule(cfg: &TrainConfig, epoch: usize) -> f64 {
    if epoch < cfg.lr_drop_epoch {
        cfg.lr0
    } else {
        cfg.lr0 / cfg.lr_drop_factor
    }
}

/// One row of the per-epoch log. Epochs count from zero, matching the
/// schedule's convention.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    /// Mean training loss over the epoch's samples.
    pub train_loss: f64,
    /// Training accuracy in percent.
    pub train_acc: f64,
    pub seconds: f64,
    /// Optimizer steps taken this epoch (not part of the CSV log).
    pub steps: usize,
    /// Holdout metrics, present only when a validation fraction is set.
    /// Not part of the CSV log, whose column set is pinned.
    pub val_loss: Option<f64>,
    pub val_acc: Option<f64>,
}

struct SampleResult {
    loss: f64,
    correct: bool,
    grads: ModelGrads,
    bn_stats: Vec<BnStats>,
}

fn process_sample(
    model: &DntModel,
    img: &RgbImage,
    label: usize,
    aug_cfg: &AugmentationConfig,
    seed: u64,
    epoch: usize,
    sample_index: usize,
) -> Result<SampleResult> {
    let mut aug_rng = stream(seed, rng::domain::AUGMENT, epoch as u64, sample_index as u64);
    let view = augment_train(img, aug_cfg, &mut aug_rng)?;
    let mut dropout_rng = stream(seed, rng::domain::DROPOUT, epoch as u64, sample_index as u64);
    let fwd = model.train_forward(&view, label, &mut dropout_rng)?;
    let grads = model.backward(&fwd);
    let correct = argmax(&fwd.probs) == label;
    Ok(SampleResult { loss: fwd.loss, correct, grads, bn_stats: fwd.bn_stats })
}

/// Index of the largest value, first one on ties.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Trains the model in place over the manifest's train split and returns
/// the per-epoch log. `epoch_hook` runs after every epoch with the model
/// in its end-of-epoch state; checkpointing and log writing live there.
pub fn train(
    model: &mut DntModel,
    manifest: &DatasetManifest,
    manifest_path: &Path,
    train_cfg: &TrainConfig,
    aug_cfg: &AugmentationConfig,
    mut epoch_hook: impl FnMut(&DntModel, &EpochRecord) -> Result<()>,
) -> Result<Vec<EpochRecord>> {
    train_cfg.validate()?;
    aug_cfg.validate()?;
    manifest.validate()?;
    if model.config().num_classes != manifest.num_classes() {
        return Err(Error::Config(format!(
            "model has {} classes but the manifest has {}",
            model.config().num_classes,
            manifest.num_classes()
        )));
    }
    if aug_cfg.crop_size != model.config().input_size {
        return Err(Error::Config(format!(
            "augmentation crops to {} but the model expects {}",
            aug_cfg.crop_size,
            model.config().input_size
        )));
    }
    if manifest.count(Split::Train) == 0 {
        return Err(Error::Usage("manifest has an empty train split".into()));
    }

    // The whole train split stays decoded in memory; desk-scale datasets
    // are a few tens of megabytes.
    let samples: Vec<(RgbImage, usize)> = manifest
        .split(Split::Train)
        .map(|rec| Ok((load_image(&resolve_path(manifest_path, rec))?, rec.class_index)))
        .collect::<Result<_>>()?;
    let n = samples.len();

    let holdout = (train_cfg.val_fraction * n as f64).round() as usize;
    if holdout >= n && holdout > 0 {
        return Err(Error::Usage(format!(
            "validation fraction {} leaves no training samples out of {n}",
            train_cfg.val_fraction
        )));
    }
    // The holdout is carved out once, under a substream distinct from the
    // per-epoch shuffles, so it stays fixed for the whole run.
    let (train_idx, val_idx): (Vec<usize>, Vec<usize>) = if holdout == 0 {
        ((0..n).collect(), Vec::new())
    } else {
        let mut order: Vec<usize> = (0..n).collect();
        stream(train_cfg.seed, rng::domain::SHUFFLE, 0, 2).shuffle(&mut order);
        let val = order.split_off(n - holdout);
        (order, val)
    };
    let n_train = train_idx.len();

    let mut log = Vec::with_capacity(train_cfg.epochs);
    for epoch in 0..train_cfg.epochs {
        let started = Instant::now();
        let lr = lr_schedule(train_cfg, epoch);
        // b = 1 keeps this stream distinct from the manifest splitter,
        // which shuffles under (SHUFFLE, class_index, 0).
        let mut order = train_idx.clone();
        stream(train_cfg.seed, rng::domain::SHUFFLE, epoch as u64, 1).shuffle(&mut order);

        let mut loss_sum = 0.0;
        let mut correct = 0usize;
        let mut steps = 0usize;
        for batch in order.chunks(train_cfg.batch_size) {
            let results: Vec<SampleResult> = if train_cfg.deterministic {
                batch
                    .iter()
                    .map(|&i| {
                        let (img, label) = &samples[i];
                        process_sample(model, img, *label, aug_cfg, train_cfg.seed, epoch, i)
                    })
                    .collect::<Result<_>>()?
            } else {
                batch
                    .par_iter()
                    .map(|&i| {
                        let (img, label) = &samples[i];
                        process_sample(model, img, *label, aug_cfg, train_cfg.seed, epoch, i)
                    })
                    .collect::<Result<_>>()?
            };

            // Reduction happens in batch order regardless of which thread
            // finished first.
            let mut summed: Option<ModelGrads> = None;
            for r in &results {
                loss_sum += r.loss;
                correct += r.correct as usize;
                match &mut summed {
                    Some(s) => s.add_assign(&r.grads),
                    None => summed = Some(r.grads.clone()),
                }
            }
            let mut summed = summed.expect("chunks are non-empty");
            summed.scale(1.0 / results.len() as f64);
            model.accumulate(&summed);
            sgd_step(model.params_mut(), lr)?;
            for r in &results {
                model.apply_bn_stats(&r.bn_stats)?;
            }
            steps += 1;
        }

        let (val_loss, val_acc) = if val_idx.is_empty() {
            (None, None)
        } else {
            let crop = model.config().input_size;
            let mut vloss = 0.0;
            let mut vcorrect = 0usize;
            for &i in &val_idx {
                let (img, label) = &samples[i];
                let view = augment_eval(img, crop)?;
                let (loss, probs) = model.infer_with_loss(&view, *label)?;
                vloss += loss;
                vcorrect += (argmax(&probs) == *label) as usize;
            }
            let count = val_idx.len() as f64;
            (Some(vloss / count), Some(100.0 * vcorrect as f64 / count))
        };

        let record = EpochRecord {
            epoch,
            lr,
            train_loss: loss_sum / n_train as f64,
            train_acc: 100.0 * correct as f64 / n_train as f64,
            seconds: started.elapsed().as_secs_f64(),
            steps,
            val_loss,
            val_acc,
        };
        epoch_hook(model, &record)?;
        log.push(record);
    }
    Ok(log)
}

/// Writes the per-epoch log as CSV: `epoch,lr,train_loss,train_acc,seconds`.
pub fn write_epoch_log(path: &Path, log: &[EpochRecord]) -> Result<()> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_path(path)
        .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    w.write_record(["epoch", "lr", "train_loss", "train_acc", "seconds"])
        .map_err(|e| Error::Format(e.to_string()))?;
    for r in log {
        w.write_record([
            r.epoch.to_string(),
            format!("{:e}", r.lr),
            format!("{:.17}", r.train_loss),
            format!("{:.4}", r.train_acc),
            format!("{:.3}", r.seconds),
        ])
        .map_err(|e| Error::Format(e.to_string()))?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{synth_texture_dataset, SynthConfig};
    use crate::model::{BackboneConfig, ConvBlockConfig, ModelConfig, PatchGrid};

    fn schedule_default() -> TrainConfig {
        TrainConfig::default()
    }

    #[test]
    fn schedule_drops_once_by_the_factor() {
        let cfg = schedule_default();
        assert_eq!(lr_schedule(&cfg, 0), 1e-3);
        assert_eq!(lr_schedule(&cfg, 99), 1e-3);
        assert_eq!(lr_schedule(&cfg, 100), 1e-4);
        assert_eq!(lr_schedule(&cfg, 199), 1e-4);

        let mut values: Vec<f64> = (0..cfg.epochs).map(|e| lr_schedule(&cfg, e)).collect();
        assert!(values.windows(2).all(|w| w[0] >= w[1]));
        values.dedup();
        assert_eq!(values, vec![1e-3, 1e-4]);
    }

    #[test]
    fn degenerate_configs_are_rejected() {
        for broken in [
            TrainConfig { epochs: 0, ..schedule_default() },
            TrainConfig { batch_size: 0, ..schedule_default() },
            TrainConfig { lr0: 0.0, ..schedule_default() },
            TrainConfig { lr_drop_factor: 1.0, ..schedule_default() },
            TrainConfig { val_fraction: 1.0, ..schedule_default() },
        ] {
            assert!(broken.validate().is_err());
        }
    }

    fn tiny_model_config(num_classes: usize) -> ModelConfig {
        ModelConfig {
            input_size: 28,
            backbone: BackboneConfig {
                blocks: vec![
                    ConvBlockConfig { out_channels: 4, batchnorm: true },
                    ConvBlockConfig { out_channels: 8, batchnorm: true },
                ],
            },
            grid: PatchGrid::with_side(16).unwrap(),
            lstm_hidden: 8,
            dropout_rate: 0.2,
            num_classes,
            ..ModelConfig::desk(num_classes)
        }
    }

    fn tiny_aug() -> AugmentationConfig {
        AugmentationConfig { crop_size: 28, ..AugmentationConfig::desk() }
    }

    fn quick_train_config(epochs: usize) -> TrainConfig {
        TrainConfig { epochs, lr_drop_epoch: 1000, ..TrainConfig::default() }
    }

    #[test]
    fn sixteen_samples_at_batch_eight_take_two_steps() {
        let dir = tempfile::tempdir().unwrap();
        let synth = SynthConfig { classes: 2, per_class: 13, size: 32, ..SynthConfig::default() };
        let (manifest_path, manifest) = synth_texture_dataset(dir.path(), &synth).unwrap();
        assert_eq!(manifest.count(Split::Train), 16);

        let mut model = DntModel::new(tiny_model_config(2), 3).unwrap();
        let log = train(
            &mut model,
            &manifest,
            &manifest_path,
            &quick_train_config(1),
            &tiny_aug(),
            |_, _| Ok(()),
        )
        .unwrap();
        assert_eq!(log.len(), 1);
        assert_eq!(log[0].steps, 2);
        assert!(log[0].train_loss.is_finite());
    }

    #[test]
    fn first_epoch_beats_uniform_guessing() {
        let dir = tempfile::tempdir().unwrap();
        let synth = SynthConfig { classes: 2, per_class: 8, size: 32, ..SynthConfig::default() };
        let (manifest_path, manifest) = synth_texture_dataset(dir.path(), &synth).unwrap();

        let mut model = DntModel::new(tiny_model_config(2), 3).unwrap();
        let log = train(
            &mut model,
            &manifest,
            &manifest_path,
            &quick_train_config(2),
            &tiny_aug(),
            |_, _| Ok(()),
        )
        .unwrap();
        let uniform = (2.0f64).ln();
        assert!(
            log.last().unwrap().train_loss < uniform,
            "loss {} never dropped below ln K = {uniform}",
            log.last().unwrap().train_loss
        );
    }

    #[test]
    fn fixed_seed_runs_are_bitwise_identical() {
        let dir = tempfile::tempdir().unwrap();
        let synth = SynthConfig { classes: 2, per_class: 5, size: 32, ..SynthConfig::default() };
        let (manifest_path, manifest) = synth_texture_dataset(dir.path(), &synth).unwrap();

        let run = |deterministic: bool| {
            let mut model = DntModel::new(tiny_model_config(2), 3).unwrap();
            let cfg = TrainConfig { deterministic, ..quick_train_config(2) };
            let log = train(&mut model, &manifest, &manifest_path, &cfg, &tiny_aug(), |_, _| {
                Ok(())
            })
            .unwrap();
            (log.iter().map(|r| r.train_loss).collect::<Vec<_>>(), model.flat_params())
        };
        let (losses_a, params_a) = run(true);
        let (losses_b, params_b) = run(true);
        assert_eq!(losses_a, losses_b);
        assert_eq!(params_a, params_b);

        // Parallel batches reduce in batch order, so threading must not
        // change the trajectory either.
        let (losses_c, params_c) = run(false);
        assert_eq!(losses_a, losses_c);
        assert_eq!(params_a, params_c);
    }

    #[test]
    fn class_count_mismatch_fails_before_any_step() {
        let dir = tempfile::tempdir().unwrap();
        let synth = SynthConfig { classes: 2, per_class: 3, size: 32, ..SynthConfig::default() };
        let (manifest_path, manifest) = synth_texture_dataset(dir.path(), &synth).unwrap();

        let mut model = DntModel::new(tiny_model_config(3), 3).unwrap();
        let err = train(
            &mut model,
            &manifest,
            &manifest_path,
            &quick_train_config(1),
            &tiny_aug(),
            |_, _| Ok(()),
        );
        assert!(matches!(err, Err(Error::Config(_))));
    }

    #[test]
    fn epoch_log_csv_has_the_pinned_header() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("log.csv");
        let log = vec![EpochRecord {
            epoch: 0,
            lr: 1e-3,
            train_loss: 1.5,
            train_acc: 50.0,
            seconds: 0.25,
            steps: 2,
            val_loss: None,
            val_acc: None,
        }];
        write_epoch_log(&path, &log).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("epoch,lr,train_loss,train_acc,seconds\n"));
        assert_eq!(text.lines().count(), 2);
    }

    #[test]
    fn argmax_takes_the_first_maximum() {
        assert_eq!(argmax(&[0.1, 0.5, 0.4]), 1);
        assert_eq!(argmax(&[0.5, 0.5]), 0);
    }

    #[test]
    fn a_validation_holdout_shrinks_the_epoch_and_reports_metrics() {
        let dir = tempfile::tempdir().unwrap();
        let synth = SynthConfig { classes: 2, per_class: 13, size: 32, ..SynthConfig::default() };
        let (manifest_path, manifest) = synth_texture_dataset(dir.path(), &synth).unwrap();
        assert_eq!(manifest.count(Split::Train), 16);

        let mut model = DntModel::new(tiny_model_config(2), 3).unwrap();
        let cfg = TrainConfig { val_fraction: 0.5, ..quick_train_config(1) };
        let log = train(&mut model, &manifest, &manifest_path, &cfg, &tiny_aug(), |_, _| Ok(()))
            .unwrap();
        // 8 of 16 samples held out leaves one batch of 8.
        assert_eq!(log[0].steps, 1);
        let vl = log[0].val_loss.expect("holdout set");
        let va = log[0].val_acc.expect("holdout set");
        assert!(vl.is_finite() && (0.0..=100.0).contains(&va));

        // Without a holdout the same run reports no validation numbers.
        let mut model = DntModel::new(tiny_model_config(2), 3).unwrap();
        let log = train(
            &mut model,
            &manifest,
            &manifest_path,
            &quick_train_config(1),
            &tiny_aug(),
            |_, _| Ok(()),
        )
        .unwrap();
        assert_eq!(log[0].steps, 2);
        assert_eq!(log[0].val_loss, None);
    }
}
