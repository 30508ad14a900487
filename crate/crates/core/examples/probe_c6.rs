// Scratch probe: criterion-6-scale cross-validation, both families.
use std::time::Instant;

use onhgdl_core::dgcnn::DgcnnConfig;
use onhgdl_core::geometry::{build_point_cloud, ExtractOptions};
use onhgdl_core::model::ModelFamily;
use onhgdl_core::pointnet::PointNetConfig;
use onhgdl_core::synth::{generate_dataset, SynthConfig};
use onhgdl_core::train::{run_crossval, AugmentationConfig, TrainConfig, TrainSample};

fn main() {
    let t0 = Instant::now();
    let synth_cfg = SynthConfig::default();
    let samples = generate_dataset(&synth_cfg, 120, 1, 0.5, 42).unwrap();
    let opts = ExtractOptions::default();
    let clouds: Vec<TrainSample> = samples
        .iter()
        .map(|s| TrainSample::from_cloud(build_point_cloud(&s.volume, &opts).unwrap()).unwrap())
        .collect();
    println!("data ready in {:?} ({} clouds)", t0.elapsed(), clouds.len());

    let cfg = TrainConfig {
        max_epochs: 90,
        min_epochs: 50,
        patience: 25,
        batch_size: 4,
        augment: AugmentationConfig {
            points_per_cloud: 192,
            ..Default::default()
        },
        dgcnn: DgcnnConfig {
            edge_widths: vec![32, 32, 64],
            ..Default::default()
        },
        pointnet: PointNetConfig::default(),
        folds: 5,
        ..Default::default()
    };
    for family in [ModelFamily::Dgcnn, ModelFamily::PointNet] {
        let t = Instant::now();
        let report = run_crossval(&clouds, family, &cfg, 7, None, None).unwrap();
        println!(
            "{family} 5-fold: AUC {:.4} +- {:.4} in {:?}",
            report.auc_mean,
            report.auc_std,
            t.elapsed()
        );
        for f in &report.folds {
            println!(
                "  fold {}: test {:.3} (n={}), best epoch {}, val {:.3}",
                f.fold,
                f.test_auc,
                f.test_scans.len(),
                f.best_epoch,
                f.best_val_auc
            );
        }
    }
}
