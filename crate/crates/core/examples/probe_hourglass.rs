// Scratch probe: does a trained DGCNN's critical-point mass land in the
// superior+inferior quadrants?
use onhgdl_core::dgcnn::DgcnnConfig;
use onhgdl_core::geometry::{build_point_cloud, ExtractOptions};
use onhgdl_core::interpret::{
    density, extract_critical_points, pool_critical_points, quadrant_stats,
};
use onhgdl_core::model::ModelFamily;
use onhgdl_core::synth::{generate_dataset, mix_seed, SynthConfig};
use onhgdl_core::train::{
    kfold_grouped, scan_refs, train_model, AugmentationConfig, TrainConfig, TrainSample,
};
use std::collections::BTreeMap;

fn main() {
    let seed_arg: u64 = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(0);
    let samples = generate_dataset(&SynthConfig::default(), 120, 1, 0.5, 42).unwrap();
    let opts = ExtractOptions::default();
    let data: Vec<TrainSample> = samples
        .iter()
        .map(|s| TrainSample::from_cloud(build_point_cloud(&s.volume, &opts).unwrap()).unwrap())
        .collect();
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
        ..Default::default()
    };
    let refs = scan_refs(&data);
    let splits = kfold_grouped(&refs, 5, mix_seed(7, 77)).unwrap();
    let split = &splits[1]; // a fold that converged in the validation run
    let by_id: BTreeMap<&str, &TrainSample> =
        data.iter().map(|s| (s.cloud.scan_id.as_str(), s)).collect();
    let pick = |ids: &Vec<String>| -> Vec<TrainSample> {
        ids.iter().map(|id| (*by_id[id.as_str()]).clone()).collect()
    };
    let (model, hist) = train_model(
        ModelFamily::Dgcnn,
        &pick(&split.train),
        &pick(&split.validation),
        &cfg,
        mix_seed(9000, seed_arg),
    )
    .unwrap();
    println!("trained: best epoch {} val {:.3}", hist.best_epoch, hist.best_val_auc);
    let mut sets = Vec::new();
    for id in &split.test {
        sets.push(extract_critical_points(&model, &by_id[id.as_str()].cloud, 192).unwrap());
    }
    let pooled = pool_critical_points(&sets);
    let map = density(&pooled, 75.0).unwrap();
    let st = quadrant_stats(&map);
    println!(
        "quadrants: S {} I {} N {} T {} -> polar {} vs lateral {}",
        st.superior.count,
        st.inferior.count,
        st.nasal.count,
        st.temporal.count,
        st.superior.count + st.inferior.count,
        st.nasal.count + st.temporal.count
    );
}
