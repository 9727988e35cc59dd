//! Ablation grid: trains one model variant per row under an identical
//! seed and budget, then scores each on the test split.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::{AugmentationConfig, DatasetManifest};
use crate::error::Result;
use crate::model::{DntModel, Fusion, ModelConfig, PatchGrid};
use crate::train::metrics::evaluate;
use crate::train::trainer::{train, TrainConfig};

/// One row of the grid: which branches are active and how they fuse.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationVariant {
    pub label: String,
    /// When false the deep feature is a plain global average pool of the
    /// backbone map; the patch sequence and LSTM are skipped.
    pub use_patch_encoder: bool,
    pub use_lbp: bool,
    pub fusion: Fusion,
    pub patch_side: usize,
    pub use_erase: bool,
}

impl AblationVariant {
    /// Applies this row to a base configuration. The base fixes the
    /// dataset-dependent pieces (input size, class count, backbone);
    /// the variant overrides the branch toggles.
    pub fn materialize(&self, base: &ModelConfig) -> Result<ModelConfig> {
        let mut cfg = base.clone();
        cfg.use_patch_encoder = self.use_patch_encoder;
        cfg.use_lbp = self.use_lbp;
        cfg.fusion = self.fusion;
        cfg.grid = PatchGrid::with_side(self.patch_side)?;
        cfg.validate()?;
        Ok(cfg)
    }
}

/// The five-row grid from the reference experiments: two backbone-only
/// rows isolating random erasing, then the patch encoder with each LBP
/// fusion choice and without LBP.
pub fn abln_paper() -> Vec<AblationVariant> {
    let row = |label: &str, encoder: bool, lbp: bool, fusion: Fusion, side: usize, erase: bool| {
        AblationVariant {
            label: label.into(),
            use_patch_encoder: encoder,
            use_lbp: lbp,
            fusion,
            patch_side: side,
            use_erase: erase,
        }
    };
    vec![
        row("common augmentation, backbone only", false, false, Fusion::Concatenation, 12, false),
        row("+ random erasing", false, false, Fusion::Concatenation, 12, true),
        row("9 patches, LBP (addition)", true, true, Fusion::Addition, 16, true),
        row("16 patches, without LBP", true, false, Fusion::Concatenation, 12, true),
        row("16 patches, LBP (concatenation)", true, true, Fusion::Concatenation, 12, true),
    ]
}

/// Outcome of one trained row.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AblationRow {
    pub label: String,
    pub top1: f64,
    pub params: usize,
}

/// Trains and evaluates every variant with the same seed, schedule and
/// data. `row_hook` fires after each finished row for progress output.
pub fn run_ablation(
    base: &ModelConfig,
    variants: &[AblationVariant],
    manifest: &DatasetManifest,
    manifest_path: &Path,
    train_cfg: &TrainConfig,
    aug_base: &AugmentationConfig,
    mut row_hook: impl FnMut(&AblationRow),
) -> Result<Vec<AblationRow>> {
    let mut rows = Vec::with_capacity(variants.len());
    for variant in variants {
        let cfg = variant.materialize(base)?;
        let mut aug = aug_base.clone();
        aug.erase.enabled = variant.use_erase;
        let mut model = DntModel::new(cfg, train_cfg.seed)?;
        let params = model.param_count();
        train(&mut model, manifest, manifest_path, train_cfg, &aug, |_, _| Ok(()))?;
        let report = evaluate(&model, manifest, manifest_path)?;
        let row =
            AblationRow { label: variant.label.clone(), top1: report.top1_accuracy, params };
        row_hook(&row);
        rows.push(row);
    }
    Ok(rows)
}

/// Writes the grid as CSV: `label,top1,params`.
pub fn write_ablation_csv(path: &Path, rows: &[AblationRow]) -> Result<()> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_path(path)
        .map_err(|e| crate::error::Error::Format(format!("{}: {e}", path.display())))?;
    w.write_record(["label", "top1", "params"])
        .map_err(|e| crate::error::Error::Format(e.to_string()))?;
    for row in rows {
        w.write_record([row.label.clone(), format!("{:.2}", row.top1), row.params.to_string()])
            .map_err(|e| crate::error::Error::Format(e.to_string()))?;
    }
    w.flush().map_err(|e| crate::error::Error::io(path, e))?;
    Ok(())
}
