//! Cross-validation orchestration, per-tissue experiments, and report
//! files.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::TissueLabel;
use crate::io::{config_hash, write_checkpoint};
use crate::model::ModelFamily;
use crate::synth::mix_seed;
use crate::train::metrics::{roc_auc, RocPoint};
use crate::train::split::{assert_subject_exclusive, kfold_grouped, split_grouped, ScanRef};
use crate::train::trainer::{
    score_scans, train_model, TrainConfig, TrainHistory, TrainSample,
};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FoldReport {
    pub fold: usize,
    pub test_auc: f64,
    pub best_epoch: usize,
    pub best_val_auc: f64,
    pub test_scans: Vec<String>,
    pub roc: Vec<RocPoint>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScanScoreRow {
    pub scan_id: String,
    pub subject_id: String,
    pub fold: usize,
    pub label: usize,
    pub score: f64,
}

/// Cross-validation evaluation report: per-fold ROC/AUC plus the
/// mean +- standard deviation aggregate and per-scan scores.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CrossvalReport {
    pub model: ModelFamily,
    pub seed: u64,
    pub config_hash: String,
    pub tissue: Option<String>,
    pub auc_mean: f64,
    pub auc_std: f64,
    pub folds: Vec<FoldReport>,
    pub per_scan: Vec<ScanScoreRow>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainRunReport {
    pub model: ModelFamily,
    pub seed: u64,
    pub config_hash: String,
    pub validation_auc: f64,
    pub test_auc: Option<f64>,
    pub test_scans: Vec<String>,
    pub history: TrainHistory,
}

pub fn scan_refs(samples: &[TrainSample]) -> Vec<ScanRef> {
    samples
        .iter()
        .map(|s| ScanRef {
            scan_id: s.cloud.scan_id.clone(),
            subject_id: s.cloud.subject_id.clone(),
        })
        .collect()
}

fn subset<'a>(samples: &'a [TrainSample], ids: &[String]) -> Vec<TrainSample> {
    let by_id: BTreeMap<&str, &TrainSample> = samples
        .iter()
        .map(|s| (s.cloud.scan_id.as_str(), s))
        .collect();
    ids.iter()
        .map(|id| (*by_id.get(id.as_str()).expect("split ids come from samples")).clone())
        .collect()
}

/// Restrict every cloud to a single tissue layer; errors list the scans
/// left with fewer points than the model input size.
pub fn filter_to_tissue(
    samples: &[TrainSample],
    tissue: Option<TissueLabel>,
    min_points: usize,
) -> Result<Vec<TrainSample>> {
    let Some(tissue) = tissue else {
        return Ok(samples.to_vec());
    };
    let filtered: Vec<TrainSample> = samples
        .iter()
        .map(|s| TrainSample {
            cloud: s.cloud.filter_tissue(tissue),
            label: s.label,
        })
        .collect();
    let offending: Vec<String> = filtered
        .iter()
        .filter(|s| s.cloud.len() < min_points)
        .map(|s| s.cloud.scan_id.clone())
        .collect();
    if !offending.is_empty() {
        return Err(Error::Experiment(format!(
            "tissue {} leaves {} scans below {min_points} points: {}",
            tissue.name(),
            offending.len(),
            offending.join(", ")
        )));
    }
    Ok(filtered)
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Train with a single subject-exclusive 70/15/15 split.
pub fn run_train(
    samples: &[TrainSample],
    family: ModelFamily,
    cfg: &TrainConfig,
    seed: u64,
    out_dir: Option<&Path>,
) -> Result<TrainRunReport> {
    let refs = scan_refs(samples);
    let split = split_grouped(&refs, cfg.fractions, mix_seed(seed, 40))?;
    assert_subject_exclusive(&split, &refs)?;
    let train = subset(samples, &split.train);
    let validation = subset(samples, &split.validation);
    let test = subset(samples, &split.test);
    let (model, history) = train_model(family, &train, &validation, cfg, seed)?;

    let test_auc = if test.is_empty() {
        None
    } else {
        let scores = score_scans(&model, &test, cfg.augment.points_per_cloud)?;
        let s: Vec<f64> = scores.iter().map(|r| r.score).collect();
        let l: Vec<usize> = scores.iter().map(|r| r.label).collect();
        Some(roc_auc(&s, &l)?.1)
    };
    let report = TrainRunReport {
        model: family,
        seed,
        config_hash: config_hash(cfg)?,
        validation_auc: history.best_val_auc,
        test_auc,
        test_scans: split.test.clone(),
        history,
    };
    if let Some(dir) = out_dir {
        fs::create_dir_all(dir)?;
        write_checkpoint(&dir.join("checkpoint.onhw"), &model)?;
        fs::write(
            dir.join("history.json"),
            serde_json::to_string_pretty(&report)
                .map_err(|e| Error::Format(e.to_string()))?,
        )?;
        fs::write(dir.join("test_scans.txt"), split.test.join("\n") + "\n")?;
    }
    Ok(report)
}

/// Grouped k-fold cross-validation; optionally restricted to one tissue
/// layer. Writes per-fold checkpoints and `report.json` when an output
/// directory is given.
pub fn run_crossval(
    samples: &[TrainSample],
    family: ModelFamily,
    cfg: &TrainConfig,
    seed: u64,
    tissue: Option<TissueLabel>,
    out_dir: Option<&Path>,
) -> Result<CrossvalReport> {
    cfg.validate()?;
    let samples = filter_to_tissue(samples, tissue, cfg.augment.points_per_cloud)?;
    let refs = scan_refs(&samples);
    let splits = kfold_grouped(&refs, cfg.folds, mix_seed(seed, 77))?;

    let mut folds = Vec::with_capacity(splits.len());
    let mut per_scan = Vec::new();
    let mut aucs = Vec::new();
    for split in &splits {
        assert_subject_exclusive(split, &refs)?;
        let train = subset(&samples, &split.train);
        let validation = subset(&samples, &split.validation);
        let test = subset(&samples, &split.test);
        let fold_seed = mix_seed(seed, 500 + split.fold_id as u64);
        let (model, history) = train_model(family, &train, &validation, cfg, fold_seed)?;
        let scores = score_scans(&model, &test, cfg.augment.points_per_cloud)?;
        let s: Vec<f64> = scores.iter().map(|r| r.score).collect();
        let l: Vec<usize> = scores.iter().map(|r| r.label).collect();
        let (roc, auc) = roc_auc(&s, &l)?;
        aucs.push(auc);
        for r in &scores {
            per_scan.push(ScanScoreRow {
                scan_id: r.scan_id.clone(),
                subject_id: r.subject_id.clone(),
                fold: split.fold_id,
                label: r.label,
                score: r.score,
            });
        }
        if let Some(dir) = out_dir {
            let fold_dir = dir.join(format!("fold_{}", split.fold_id));
            fs::create_dir_all(&fold_dir)?;
            write_checkpoint(&fold_dir.join("checkpoint.onhw"), &model)?;
            fs::write(
                fold_dir.join("test_scans.txt"),
                split.test.join("\n") + "\n",
            )?;
        }
        folds.push(FoldReport {
            fold: split.fold_id,
            test_auc: auc,
            best_epoch: history.best_epoch,
            best_val_auc: history.best_val_auc,
            test_scans: split.test.clone(),
            roc,
        });
    }
    let (auc_mean, auc_std) = mean_std(&aucs);
    let report = CrossvalReport {
        model: family,
        seed,
        config_hash: config_hash(cfg)?,
        tissue: tissue.map(|t| t.name().to_string()),
        auc_mean,
        auc_std,
        folds,
        per_scan,
    };
    if let Some(dir) = out_dir {
        fs::create_dir_all(dir)?;
        write_report_files(dir, &report)?;
    }
    Ok(report)
}

pub fn write_report_files(dir: &Path, report: &CrossvalReport) -> Result<()> {
    fs::write(
        dir.join("report.json"),
        serde_json::to_string_pretty(report).map_err(|e| Error::Format(e.to_string()))?,
    )?;
    let mut csv = String::from("scan_id,subject_id,fold,label,score\n");
    for row in &report.per_scan {
        csv.push_str(&format!(
            "{},{},{},{},{}\n",
            row.scan_id, row.subject_id, row.fold, row.label, row.score
        ));
    }
    fs::write(dir.join("per_scan_scores.csv"), csv)?;
    Ok(())
}
