use std::collections::BTreeSet;
use std::fs;
use std::path::PathBuf;

use onhgdl_core::interpret::{
    critical_points_csv, density, density_csv, export_projections, extract_critical_points,
    pool_critical_points, quadrant_stats,
};
use onhgdl_core::io::{config_hash, read_checkpoint, read_onhpc, RunManifest};

use crate::util::{files_with_extension, with_output_dir, CliError, CliResult};

#[allow(clippy::too_many_arguments)]
pub fn run(
    checkpoint: PathBuf,
    data: PathBuf,
    scans: Option<PathBuf>,
    out: PathBuf,
    radius_um: f64,
    points_per_cloud: usize,
    bin_um: f64,
) -> CliResult {
    if radius_um <= 0.0 || bin_um <= 0.0 {
        return Err(CliError::usage("radius and bin size must be positive"));
    }
    let model = read_checkpoint(&checkpoint).map_err(CliError::from)?;
    if points_per_cloud < model.min_points() {
        return Err(CliError::usage(format!(
            "points-per-cloud {} below the model minimum {}",
            points_per_cloud,
            model.min_points()
        )));
    }
    let wanted: Option<BTreeSet<String>> = match &scans {
        None => None,
        Some(path) => {
            let text = fs::read_to_string(path)
                .map_err(|e| CliError::io(format!("cannot read {}: {e}", path.display())))?;
            Some(
                text.lines()
                    .map(str::trim)
                    .filter(|l| !l.is_empty())
                    .map(String::from)
                    .collect(),
            )
        }
    };

    let files = files_with_extension(&data, "onhpc")?;
    let mut clouds = Vec::new();
    for f in &files {
        let cloud = read_onhpc(f).map_err(CliError::from)?;
        if wanted
            .as_ref()
            .map(|w| w.contains(&cloud.scan_id))
            .unwrap_or(true)
        {
            clouds.push(cloud);
        }
    }
    if clouds.is_empty() {
        return Err(CliError::usage("no scans selected for interpretation"));
    }
    if let Some(w) = &wanted {
        let found: BTreeSet<String> = clouds.iter().map(|c| c.scan_id.clone()).collect();
        let missing: Vec<&String> = w.difference(&found).collect();
        if !missing.is_empty() {
            return Err(CliError::usage(format!(
                "scan list names {} missing scans, e.g. {}",
                missing.len(),
                missing[0]
            )));
        }
    }

    let params = (radius_um, points_per_cloud, bin_um);
    let hash = config_hash(&params).map_err(CliError::from)?;
    with_output_dir(&out, |dir| {
        let mut sets = Vec::with_capacity(clouds.len());
        for cloud in &clouds {
            sets.push(extract_critical_points(&model, cloud, points_per_cloud)
                .map_err(CliError::from)?);
        }
        let pooled = pool_critical_points(&sets);
        let map = density(&pooled, radius_um).map_err(CliError::from)?;
        let stats = quadrant_stats(&map);

        fs::write(dir.join("critical_points.csv"), critical_points_csv(&sets))
            .map_err(|e| CliError::io(e.to_string()))?;
        fs::write(dir.join("density.csv"), density_csv(&map))
            .map_err(|e| CliError::io(e.to_string()))?;
        fs::write(
            dir.join("quadrant_stats.json"),
            serde_json::to_string_pretty(&stats).map_err(|e| CliError::usage(e.to_string()))?,
        )
        .map_err(|e| CliError::io(e.to_string()))?;
        export_projections(&map, dir, bin_um).map_err(CliError::from)?;

        println!(
            "{} scans, {} pooled critical points; quadrants S {} / I {} / N {} / T {}",
            sets.len(),
            pooled.len(),
            stats.superior.count,
            stats.inferior.count,
            stats.nasal.count,
            stats.temporal.count
        );
        let mut manifest = RunManifest::new("interpret", &hash, 0);
        manifest.inputs = vec![checkpoint.display().to_string(), data.display().to_string()];
        manifest.outputs = vec![
            "critical_points.csv".into(),
            "density.csv".into(),
            "quadrant_stats.json".into(),
            "enface.csv".into(),
            "enface.png".into(),
            "enface.json".into(),
            "sagittal.csv".into(),
            "sagittal.png".into(),
            "sagittal.json".into(),
        ];
        manifest.write(dir).map_err(CliError::from)?;
        Ok(())
    })
}
