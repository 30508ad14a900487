//! Dataset splitting, augmentation, the optimization loop, cross-validation
//! and ROC/AUC evaluation.

pub mod augment;
pub mod experiment;
pub mod metrics;
pub mod split;
pub mod trainer;

pub use augment::{augment, eval_input, AugmentationConfig, ModelInput};
pub use experiment::{
    filter_to_tissue, run_crossval, run_train, scan_refs, CrossvalReport, FoldReport,
    ScanScoreRow, TrainRunReport,
};
pub use metrics::{auc_from_curve, roc_auc, roc_curve, RocPoint};
pub use split::{assert_subject_exclusive, kfold_grouped, split_grouped, DatasetSplit, ScanRef};
pub use trainer::{
    score_scans, train_model, validation_auc, ScanScore, TrainConfig, TrainHistory, TrainSample,
};
