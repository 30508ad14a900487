use std::fs;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use onhgdl_core::geometry::ClassLabel;
use onhgdl_core::io::{config_hash, write_onhseg, DatasetEntry, DatasetManifest, RunManifest};
use onhgdl_core::synth::{generate_dataset, SynthConfig};

use crate::util::{with_output_dir, CliError, CliResult};

/// One-file job description: generator parameters plus dataset shape.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthJobConfig {
    pub synth: SynthConfig,
    pub n_subjects: usize,
    pub scans_per_subject: usize,
    pub class_balance: f64,
}

impl Default for SynthJobConfig {
    fn default() -> Self {
        Self {
            synth: SynthConfig::default(),
            n_subjects: 120,
            scans_per_subject: 1,
            class_balance: 0.5,
        }
    }
}

pub fn load_json_config<T: serde::de::DeserializeOwned + Default>(
    path: Option<&PathBuf>,
) -> Result<T, CliError> {
    match path {
        None => Ok(T::default()),
        Some(p) => {
            let text = fs::read_to_string(p)
                .map_err(|e| CliError::io(format!("cannot read {}: {e}", p.display())))?;
            serde_json::from_str(&text)
                .map_err(|e| CliError::usage(format!("bad config {}: {e}", p.display())))
        }
    }
}

pub fn run(config: Option<PathBuf>, out: PathBuf, seed: u64) -> CliResult {
    let cfg: SynthJobConfig = load_json_config(config.as_ref())?;
    cfg.synth.validate().map_err(CliError::from)?;
    let hash = config_hash(&cfg).map_err(CliError::from)?;
    let samples = generate_dataset(
        &cfg.synth,
        cfg.n_subjects,
        cfg.scans_per_subject,
        cfg.class_balance,
        seed,
    )
    .map_err(CliError::from)?;

    with_output_dir(&out, |dir| {
        let mut entries = Vec::with_capacity(samples.len());
        for s in &samples {
            let file = format!("{}.onhseg", s.volume.scan_id);
            write_onhseg(&dir.join(&file), &s.volume).map_err(CliError::from)?;
            entries.push(DatasetEntry {
                file,
                subject_id: s.volume.subject_id.clone(),
                scan_id: s.volume.scan_id.clone(),
                class_label: s.volume.class_label,
            });
        }
        let dataset = DatasetManifest {
            seed,
            config_hash: hash.clone(),
            samples: entries,
        };
        fs::write(
            dir.join("dataset.json"),
            serde_json::to_string_pretty(&dataset)
                .map_err(|e| CliError::usage(e.to_string()))?,
        )
        .map_err(|e| CliError::io(e.to_string()))?;
        let mut manifest = RunManifest::new("synth", &hash, seed);
        manifest.outputs = dataset.samples.iter().map(|e| e.file.clone()).collect();
        manifest.write(dir).map_err(CliError::from)?;
        println!(
            "wrote {} volumes ({} glaucoma) to {}",
            samples.len(),
            samples
                .iter()
                .filter(|s| s.class_label == ClassLabel::Glaucoma)
                .count(),
            out.display()
        );
        Ok(())
    })
}
