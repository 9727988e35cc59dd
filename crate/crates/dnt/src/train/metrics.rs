//! Test-split evaluation: confusion matrix, top-1, macro precision and
//! recall.

use std::path::Path;

use serde::Serialize;

use crate::data::{augment_eval, load_image, resolve_path, DatasetManifest, Split};
use crate::error::{Error, Result};
use crate::model::DntModel;
use crate::train::trainer::argmax;

/// Everything `evaluate` measures. Confusion rows index the true class,
/// columns the predicted one. Accuracy, precision and recall are percentages.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsReport {
    pub top1_accuracy: f64,
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub per_class_precision: Vec<f64>,
    pub per_class_recall: Vec<f64>,
    pub confusion: Vec<Vec<usize>>,
    /// Mean cross-entropy over the evaluated samples.
    pub loss: f64,
    pub total: usize,
    pub class_names: Vec<String>,
}

impl MetricsReport {
    /// Builds the derived numbers from a finished confusion matrix.
    /// A class with no predictions (or no true samples) scores zero
    /// rather than poisoning the macro average with a 0/0.
    pub fn from_confusion(
        confusion: Vec<Vec<usize>>,
        loss: f64,
        class_names: Vec<String>,
    ) -> Self {
        let k = confusion.len();
        let total: usize = confusion.iter().map(|row| row.iter().sum::<usize>()).sum();
        let diagonal: usize = (0..k).map(|i| confusion[i][i]).sum();

        let mut per_class_precision = Vec::with_capacity(k);
        let mut per_class_recall = Vec::with_capacity(k);
        for c in 0..k {
            let predicted: usize = (0..k).map(|t| confusion[t][c]).sum();
            let actual: usize = confusion[c].iter().sum();
            let hit = confusion[c][c];
            per_class_precision
                .push(if predicted == 0 { 0.0 } else { 100.0 * hit as f64 / predicted as f64 });
            per_class_recall
                .push(if actual == 0 { 0.0 } else { 100.0 * hit as f64 / actual as f64 });
        }
        MetricsReport {
            top1_accuracy: if total == 0 { 0.0 } else { 100.0 * diagonal as f64 / total as f64 },
            macro_precision: mean(&per_class_precision),
            macro_recall: mean(&per_class_recall),
            per_class_precision,
            per_class_recall,
            confusion,
            loss,
            total,
            class_names,
        }
    }

    /// Re-derives every aggregate from the confusion matrix and confirms
    /// the stored numbers match. Guards serialized reports against edits.
    pub fn validate(&self) -> Result<()> {
        let rebuilt = MetricsReport::from_confusion(
            self.confusion.clone(),
            self.loss,
            self.class_names.clone(),
        );
        let close = |a: f64, b: f64| (a - b).abs() <= 1e-9;
        let ok = close(self.top1_accuracy, rebuilt.top1_accuracy)
            && close(self.macro_precision, rebuilt.macro_precision)
            && close(self.macro_recall, rebuilt.macro_recall)
            && self.total == rebuilt.total
            && self.per_class_precision.len() == self.confusion.len()
            && self.per_class_recall.len() == self.confusion.len()
            && self
                .per_class_precision
                .iter()
                .zip(&rebuilt.per_class_precision)
                .all(|(a, b)| close(*a, *b))
            && self
                .per_class_recall
                .iter()
                .zip(&rebuilt.per_class_recall)
                .all(|(a, b)| close(*a, *b));
        if ok {
            Ok(())
        } else {
            Err(Error::Format("metrics report disagrees with its confusion matrix".into()))
        }
    }
}

fn mean(values: &[f64]) -> f64 {
    if values.is_empty() {
        0.0
    } else {
        values.iter().sum::<f64>() / values.len() as f64
    }
}

/// Runs the model over the manifest's test split with the deterministic
/// eval view (center crop, no jitter) and tallies a [`MetricsReport`].
pub fn evaluate(
    model: &DntModel,
    manifest: &DatasetManifest,
    manifest_path: &Path,
) -> Result<MetricsReport> {
    manifest.validate()?;
    let k = manifest.num_classes();
    if model.config().num_classes != k {
        return Err(Error::Config(format!(
            "model has {} classes but the manifest has {k}",
            model.config().num_classes
        )));
    }
    if manifest.count(Split::Test) == 0 {
        return Err(Error::Usage("manifest has an empty test split".into()));
    }

    let crop = model.config().input_size;
    let mut confusion = vec![vec![0usize; k]; k];
    let mut loss_sum = 0.0;
    let mut total = 0usize;
    for rec in manifest.split(Split::Test) {
        let img = load_image(&resolve_path(manifest_path, rec))?;
        let view = augment_eval(&img, crop)?;
        let (loss, probs) = model.infer_with_loss(&view, rec.class_index)?;
        confusion[rec.class_index][argmax(&probs)] += 1;
        loss_sum += loss;
        total += 1;
    }
    Ok(MetricsReport::from_confusion(confusion, loss_sum / total as f64, manifest.classes.clone()))
}

/// Writes the report as pretty-printed JSON.
pub fn write_metrics_json(path: &Path, report: &MetricsReport) -> Result<()> {
    let json = serde_json::to_string_pretty(report).map_err(|e| Error::Format(e.to_string()))?;
    std::fs::write(path, json + "\n").map_err(|e| Error::io(path, e))
}

/// Writes the confusion matrix as CSV with class names on both axes.
/// Rows are true classes, columns predictions.
pub fn write_confusion_csv(path: &Path, report: &MetricsReport) -> Result<()> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_path(path)
        .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    let mut header = vec!["true\\predicted".to_string()];
    header.extend(report.class_names.iter().cloned());
    w.write_record(&header).map_err(|e| Error::Format(e.to_string()))?;
    for (name, row) in report.class_names.iter().zip(&report.confusion) {
        let mut record = vec![name.clone()];
        record.extend(row.iter().map(|v| v.to_string()));
        w.write_record(&record).map_err(|e| Error::Format(e.to_string()))?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{synth_texture_dataset, DatasetManifest, ManifestRecord, SynthConfig};
    use crate::model::{BackboneConfig, ConvBlockConfig, DntModel, ModelConfig, PatchGrid};

    #[test]
    fn perfect_and_broken_matrices_score_as_expected() {
        let perfect = MetricsReport::from_confusion(
            vec![vec![3, 0], vec![0, 5]],
            0.1,
            vec!["a".into(), "b".into()],
        );
        assert_eq!(perfect.top1_accuracy, 100.0);
        assert_eq!(perfect.macro_precision, 100.0);
        assert_eq!(perfect.macro_recall, 100.0);
        perfect.validate().unwrap();

        let inverted = MetricsReport::from_confusion(
            vec![vec![0, 3], vec![5, 0]],
            2.0,
            vec!["a".into(), "b".into()],
        );
        assert_eq!(inverted.top1_accuracy, 0.0);
        assert_eq!(inverted.macro_precision, 0.0);
        assert_eq!(inverted.macro_recall, 0.0);
    }

    #[test]
    fn unpredicted_class_contributes_zero_not_nan() {
        // Everything lands on class 0: class 1 has no predictions
        // (precision 0/0) and its recall is 0/4.
        let report = MetricsReport::from_confusion(
            vec![vec![4, 0], vec![4, 0]],
            1.0,
            vec!["a".into(), "b".into()],
        );
        assert_eq!(report.per_class_precision, vec![50.0, 0.0]);
        assert_eq!(report.per_class_recall, vec![100.0, 0.0]);
        assert_eq!(report.macro_precision, 25.0);
        assert_eq!(report.macro_recall, 50.0);
        assert!(report.top1_accuracy == 50.0);
        report.validate().unwrap();
    }

    #[test]
    fn validate_rejects_a_tampered_report() {
        let mut report = MetricsReport::from_confusion(
            vec![vec![1, 1], vec![1, 1]],
            1.0,
            vec!["a".into(), "b".into()],
        );
        report.top1_accuracy = 99.0;
        assert!(report.validate().is_err());
    }

    fn tiny_model(num_classes: usize) -> DntModel {
        let cfg = ModelConfig {
            input_size: 28,
            backbone: BackboneConfig {
                blocks: vec![
                    ConvBlockConfig { out_channels: 4, batchnorm: true },
                    ConvBlockConfig { out_channels: 8, batchnorm: true },
                ],
            },
            grid: PatchGrid::with_side(16).unwrap(),
            lstm_hidden: 8,
            dropout_rate: 0.0,
            num_classes,
            ..ModelConfig::desk(num_classes)
        };
        DntModel::new(cfg, 3).unwrap()
    }

    #[test]
    fn constant_predictor_scores_the_closed_form() {
        // Zero classifier weights and a bias peaked on class 0 make the
        // model predict class 0 for every image. On a balanced 4-class
        // test split: top-1 25%, macro recall 25%, macro precision 6.25%.
        let dir = tempfile::tempdir().unwrap();
        let synth = SynthConfig { classes: 4, per_class: 5, size: 32, ..SynthConfig::default() };
        let (manifest_path, manifest) = synth_texture_dataset(dir.path(), &synth).unwrap();

        let mut model = tiny_model(4);
        let mut flat = vec![0.0; model.flat_params().len()];
        let bias_len = 4;
        let start = flat.len() - bias_len;
        flat[start] = 1.0;
        model.set_flat_params(&flat).unwrap();

        let report = evaluate(&model, &manifest, &manifest_path).unwrap();
        assert_eq!(report.top1_accuracy, 25.0);
        assert_eq!(report.macro_recall, 25.0);
        assert_eq!(report.macro_precision, 6.25);
        assert_eq!(report.total, manifest.count(Split::Test));
        report.validate().unwrap();
    }

    #[test]
    fn evaluation_is_deterministic() {
        let dir = tempfile::tempdir().unwrap();
        let synth = SynthConfig { classes: 2, per_class: 4, size: 32, ..SynthConfig::default() };
        let (manifest_path, manifest) = synth_texture_dataset(dir.path(), &synth).unwrap();
        let model = tiny_model(2);
        let a = evaluate(&model, &manifest, &manifest_path).unwrap();
        let b = evaluate(&model, &manifest, &manifest_path).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn empty_test_split_is_a_usage_error() {
        let manifest = DatasetManifest {
            records: vec![ManifestRecord {
                path: "a/im.pgm".into(),
                class_name: "a".into(),
                class_index: 0,
                split: Split::Train,
            }],
            classes: vec!["a".into(), "b".into()],
        };
        let model = tiny_model(2);
        let err = evaluate(&model, &manifest, Path::new("manifest.csv"));
        assert!(matches!(err, Err(Error::Usage(_))));
    }

    #[test]
    fn confusion_csv_carries_class_names() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("confusion.csv");
        let report = MetricsReport::from_confusion(
            vec![vec![2, 1], vec![0, 3]],
            0.5,
            vec!["checks".into(), "waves".into()],
        );
        write_confusion_csv(&path, &report).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "true\\predicted,checks,waves");
        assert_eq!(lines[1], "checks,2,1");
        assert_eq!(lines[2], "waves,0,3");
    }

    #[test]
    fn metrics_json_round_trips_through_validate() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("metrics.json");
        let report = MetricsReport::from_confusion(
            vec![vec![2, 1], vec![0, 3]],
            0.5,
            vec!["a".into(), "b".into()],
        );
        write_metrics_json(&path, &report).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let parsed: serde_json::Value = serde_json::from_str(&text).unwrap();
        assert_eq!(parsed["total"], 6);
        assert_eq!(parsed["top1_accuracy"].as_f64().unwrap(), report.top1_accuracy);
    }
}
