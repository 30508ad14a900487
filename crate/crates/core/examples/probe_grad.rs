// Scratch probe: logit spread and gradient norms at init.
use onhgdl_core::autodiff::Tape;
use onhgdl_core::dgcnn::DgcnnConfig;
use onhgdl_core::geometry::{build_point_cloud, ExtractOptions};
use onhgdl_core::model::{AnyModel, ModelFamily};
use onhgdl_core::nn::Mode;
use onhgdl_core::pointnet::PointNetConfig;
use onhgdl_core::synth::{generate_dataset, SynthConfig};
use onhgdl_core::train::{eval_input, TrainSample};

fn main() {
    let bn = std::env::args().nth(1).as_deref() == Some("bn");
    let samples = generate_dataset(&SynthConfig::default(), 12, 1, 0.5, 42).unwrap();
    let opts = ExtractOptions::default();
    let clouds: Vec<TrainSample> = samples
        .iter()
        .map(|s| TrainSample::from_cloud(build_point_cloud(&s.volume, &opts).unwrap()).unwrap())
        .collect();
    let dg = DgcnnConfig {
        edge_widths: vec![32, 32, 64],
        batch_norm: bn,
        ..Default::default()
    };
    let pn = PointNetConfig {
        batch_norm: bn,
        ..Default::default()
    };
    for family in [ModelFamily::Dgcnn, ModelFamily::PointNet] {
        let model = AnyModel::init(family, &pn, &dg, 9).unwrap();
        println!("== {family} bn={bn}");
        let mut pooled_spread: Vec<Vec<f64>> = Vec::new();
        for s in &clouds {
            let input = eval_input(&s.cloud, 256, model.scales_um());
            let tape = Tape::new();
            let pass = model
                .forward(&tape, &input.features, Mode::Train { dropout_seed: 1 })
                .unwrap();
            let logits = pass.logits.value();
            let loss = pass
                .logits
                .softmax_cross_entropy(&[s.label], &[1.0, 1.0])
                .unwrap();
            let grads = tape.backward(loss).unwrap();
            let gnorm: f64 = pass
                .param_vars
                .iter()
                .map(|v| {
                    grads
                        .get_or_zeros(*v)
                        .data()
                        .iter()
                        .map(|g| g * g)
                        .sum::<f64>()
                })
                .sum::<f64>()
                .sqrt();
            println!(
                "  label {} logits [{:+.4} {:+.4}] |grad| {:.4}",
                s.label,
                logits.data()[0],
                logits.data()[1],
                gnorm
            );
            pooled_spread.push(pass.pool_values.clone());
        }
        // Across-cloud standard deviation of the pooled features.
        let n = pooled_spread.len() as f64;
        let dim = pooled_spread[0].len();
        let mut spread = 0.0;
        let mut scale = 0.0;
        for c in 0..dim {
            let vals: Vec<f64> = pooled_spread.iter().map(|p| p[c]).collect();
            let mean = vals.iter().sum::<f64>() / n;
            spread += vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
            scale += mean * mean;
        }
        println!(
            "  pooled across-cloud rms spread {:.4} vs rms magnitude {:.4}",
            (spread / dim as f64).sqrt(),
            (scale / dim as f64).sqrt()
        );
    }
}
