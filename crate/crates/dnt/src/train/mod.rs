//! Training, evaluation and the ablation grid.

pub mod ablation;
pub mod metrics;
pub mod trainer;

pub use ablation::{abln_paper, run_ablation, write_ablation_csv, AblationRow, AblationVariant};
pub use metrics::{evaluate, write_confusion_csv, write_metrics_json, MetricsReport};
pub use trainer::{argmax, lr_schedule, train, write_epoch_log, EpochRecord, TrainConfig};
