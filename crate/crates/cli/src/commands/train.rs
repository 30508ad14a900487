use std::path::{Path, PathBuf};

use onhgdl_core::geometry::TissueLabel;
use onhgdl_core::io::{config_hash, read_onhpc, RunManifest};
use onhgdl_core::model::ModelFamily;
use onhgdl_core::train::{self, TrainConfig, TrainSample};

use crate::commands::synth::load_json_config;
use crate::util::{files_with_extension, with_output_dir, CliError, CliResult};

pub fn load_samples(dir: &Path) -> Result<Vec<TrainSample>, CliError> {
    let files = files_with_extension(dir, "onhpc")?;
    if files.is_empty() {
        return Err(CliError::usage(format!(
            "no inputs: {} holds no .onhpc files",
            dir.display()
        )));
    }
    let mut samples = Vec::with_capacity(files.len());
    for f in &files {
        let cloud = read_onhpc(f).map_err(CliError::from)?;
        samples.push(TrainSample::from_cloud(cloud).map_err(CliError::from)?);
    }
    Ok(samples)
}

fn effective_config(
    config: Option<&PathBuf>,
    seed: Option<u64>,
) -> Result<(TrainConfig, u64), CliError> {
    let mut cfg: TrainConfig = load_json_config(config)?;
    if let Some(seed) = seed {
        cfg.seed = seed;
    }
    cfg.validate().map_err(CliError::from)?;
    let seed = cfg.seed;
    Ok((cfg, seed))
}

pub fn run_train(
    model: String,
    data: PathBuf,
    config: Option<PathBuf>,
    out: PathBuf,
    seed: Option<u64>,
) -> CliResult {
    let family = ModelFamily::parse(&model).map_err(CliError::from)?;
    let (cfg, seed) = effective_config(config.as_ref(), seed)?;
    let samples = load_samples(&data)?;
    let hash = config_hash(&cfg).map_err(CliError::from)?;
    with_output_dir(&out, |dir| {
        let report =
            train::run_train(&samples, family, &cfg, seed, Some(dir)).map_err(CliError::from)?;
        println!(
            "{family}: best validation AUC {:.4} (epoch {}), test AUC {}",
            report.validation_auc,
            report.history.best_epoch,
            report
                .test_auc
                .map(|a| format!("{a:.4}"))
                .unwrap_or_else(|| "n/a".into())
        );
        let mut manifest = RunManifest::new("train", &hash, seed);
        manifest.inputs = vec![data.display().to_string()];
        manifest.outputs = vec![
            "checkpoint.onhw".into(),
            "history.json".into(),
            "test_scans.txt".into(),
        ];
        manifest.write(dir).map_err(CliError::from)?;
        Ok(())
    })
}

pub fn run_crossval(
    model: String,
    data: PathBuf,
    config: Option<PathBuf>,
    out: PathBuf,
    seed: Option<u64>,
    tissue: Option<String>,
) -> CliResult {
    let family = ModelFamily::parse(&model).map_err(CliError::from)?;
    let tissue = tissue
        .map(|t| TissueLabel::parse(&t))
        .transpose()
        .map_err(CliError::from)?;
    let (cfg, seed) = effective_config(config.as_ref(), seed)?;
    let samples = load_samples(&data)?;
    let hash = config_hash(&cfg).map_err(CliError::from)?;
    with_output_dir(&out, |dir| {
        let report = train::run_crossval(&samples, family, &cfg, seed, tissue, Some(dir))
            .map_err(CliError::from)?;
        println!(
            "{family} {}-fold AUC: {:.4} +- {:.4}{}",
            cfg.folds,
            report.auc_mean,
            report.auc_std,
            report
                .tissue
                .as_ref()
                .map(|t| format!(" (tissue {t})"))
                .unwrap_or_default()
        );
        for f in &report.folds {
            println!("  fold {}: test AUC {:.4} ({} scans)", f.fold, f.test_auc, f.test_scans.len());
        }
        let mut manifest = RunManifest::new("crossval", &hash, seed);
        manifest.inputs = vec![data.display().to_string()];
        manifest.outputs = vec!["report.json".into(), "per_scan_scores.csv".into()];
        manifest.write(dir).map_err(CliError::from)?;
        Ok(())
    })
}
