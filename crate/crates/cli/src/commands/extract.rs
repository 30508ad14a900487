use std::path::PathBuf;

use onhgdl_core::geometry::{build_point_cloud, ExtractOptions};
use onhgdl_core::io::{config_hash, read_onhseg, write_onhpc, RunManifest};
use rayon::prelude::*;

use crate::util::{files_with_extension, with_output_dir, CliError, CliResult};

pub fn run(input: PathBuf, out: PathBuf, keep_going: bool, crop_radius_um: f64) -> CliResult {
    let files = files_with_extension(&input, "onhseg")?;
    if files.is_empty() {
        return Err(CliError::usage(format!(
            "no inputs: {} holds no .onhseg files",
            input.display()
        )));
    }
    let opts = ExtractOptions { crop_radius_um };
    let hash = config_hash(&crop_radius_um).map_err(CliError::from)?;

    with_output_dir(&out, |dir| {
        let results: Vec<(String, Result<String, String>)> = files
            .par_iter()
            .map(|path| {
                let name = path.file_name().unwrap().to_string_lossy().to_string();
                let outcome = read_onhseg(path)
                    .and_then(|vol| build_point_cloud(&vol, &opts))
                    .and_then(|cloud| {
                        let file = format!("{}.onhpc", cloud.scan_id);
                        write_onhpc(&dir.join(&file), &cloud)?;
                        Ok(file)
                    })
                    .map_err(|e| e.to_string());
                (name, outcome)
            })
            .collect();

        let mut outputs = Vec::new();
        let mut failures = Vec::new();
        for (name, outcome) in &results {
            match outcome {
                Ok(file) => {
                    println!("ok   {name} -> {file}");
                    outputs.push(file.clone());
                }
                Err(msg) => {
                    println!("fail {name}: {msg}");
                    failures.push(name.clone());
                }
            }
        }
        if !failures.is_empty() && !keep_going {
            return Err(CliError::usage(format!(
                "{} of {} volumes failed: {}",
                failures.len(),
                results.len(),
                failures.join(", ")
            )));
        }
        let mut manifest = RunManifest::new("extract", &hash, 0);
        manifest.inputs = files
            .iter()
            .map(|p| p.file_name().unwrap().to_string_lossy().to_string())
            .collect();
        manifest.outputs = outputs;
        manifest.write(dir).map_err(CliError::from)?;
        Ok(())
    })
}
