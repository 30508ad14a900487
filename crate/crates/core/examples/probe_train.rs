// Scratch probe: learning-curve visibility on synthetic data.
use std::time::Instant;

use onhgdl_core::dgcnn::DgcnnConfig;
use onhgdl_core::geometry::{build_point_cloud, ExtractOptions};
use onhgdl_core::model::ModelFamily;
use onhgdl_core::optim::AdamConfig;
use onhgdl_core::pointnet::PointNetConfig;
use onhgdl_core::synth::{generate_dataset, SynthConfig};
use onhgdl_core::train::{train_model, AugmentationConfig, TrainConfig, TrainSample};

fn main() {
    let t0 = Instant::now();
    let synth_cfg = SynthConfig::default();
    let n_subj: usize = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(40);
    let family = match std::env::args().nth(2).as_deref() {
        Some("pointnet") => ModelFamily::PointNet,
        _ => ModelFamily::Dgcnn,
    };
    let bn: bool = std::env::args().nth(3).as_deref() == Some("bn");
    let lr: f64 = std::env::args().nth(4).and_then(|s| s.parse().ok()).unwrap_or(1e-3);
    let epochs: usize = std::env::args().nth(5).and_then(|s| s.parse().ok()).unwrap_or(25);
    let samples = generate_dataset(&synth_cfg, n_subj, 1, 0.5, 42).unwrap();
    let opts = ExtractOptions::default();
    let clouds: Vec<TrainSample> = samples
        .iter()
        .map(|s| TrainSample::from_cloud(build_point_cloud(&s.volume, &opts).unwrap()).unwrap())
        .collect();
    println!("data ready in {:?} ({} clouds)", t0.elapsed(), clouds.len());

    // Class-balanced split: last quarter to validation.
    let mut train = Vec::new();
    let mut val = Vec::new();
    for (i, c) in clouds.iter().enumerate() {
        if i >= clouds.len() * 3 / 4 {
            val.push(c.clone());
        } else {
            train.push(c.clone());
        }
    }
    let cfg = TrainConfig {
        max_epochs: epochs,
        patience: epochs,
        batch_size: std::env::var("BATCH").ok().and_then(|v| v.parse().ok()).unwrap_or(8),
        optimizer: AdamConfig {
            learning_rate: lr,
            ..Default::default()
        },
        augment: AugmentationConfig {
            points_per_cloud: std::env::var("NPTS").ok().and_then(|v| v.parse().ok()).unwrap_or(256),
            enable_sector_crop: std::env::var("AUG").is_ok(),
            enable_rotation: std::env::var("AUG").is_ok(),
            enable_noise: std::env::var("AUG").is_ok(),
            ..Default::default()
        },
        dgcnn: DgcnnConfig {
            edge_widths: vec![32, 32, 64],
            batch_norm: bn,
            ..Default::default()
        },
        pointnet: PointNetConfig {
            batch_norm: bn,
            ..Default::default()
        },
        ..Default::default()
    };
    println!("family={family} bn={bn} lr={lr}");
    let t2 = Instant::now();
    let (_, history) = train_model(family, &train, &val, &cfg, 7).unwrap();
    println!("trained in {:?}", t2.elapsed());
    for e in &history.epochs {
        println!(
            "epoch {:2}: loss {:.4} val_auc {:.3} skipped {}",
            e.epoch, e.train_loss, e.val_auc, e.skipped_samples
        );
    }
}
