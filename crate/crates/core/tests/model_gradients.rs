//! Full-model analytic gradients vs central finite differences.

use onhgdl_core::autodiff::Tape;
use onhgdl_core::dgcnn::{dgcnn_forward, DgcnnConfig, DgcnnParams};
use onhgdl_core::model::AnyModel;
use onhgdl_core::nn::Mode;
use onhgdl_core::pointnet::{pointnet_forward, transform_regularizer, PointNetConfig, PointNetParams};
use onhgdl_core::tensor::Tensor;
use onhgdl_core::testutil::{grad_close, random_tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

fn check_model(mut model: AnyModel, features: &Tensor, label: usize, what: &str) {
    let loss_of = |m: &AnyModel| -> f64 {
        let tape = Tape::new();
        let pass = m
            .forward(&tape, features, Mode::Train { dropout_seed: 3 })
            .unwrap();
        let mut loss = pass
            .logits
            .softmax_cross_entropy(&[label], &[1.0, 1.3])
            .unwrap();
        if let Some(t) = pass.transform {
            loss = loss.add(transform_regularizer(t).unwrap().scale(1e-3)).unwrap();
        }
        loss.value().scalar_value()
    };

    // Analytic gradients.
    let tape = Tape::new();
    let pass = model
        .forward(&tape, features, Mode::Train { dropout_seed: 3 })
        .unwrap();
    let mut loss = pass
        .logits
        .softmax_cross_entropy(&[label], &[1.0, 1.3])
        .unwrap();
    if let Some(t) = pass.transform {
        loss = loss.add(transform_regularizer(t).unwrap().scale(1e-3)).unwrap();
    }
    let grads = tape.backward(loss).unwrap();
    let analytic: Vec<Tensor> = pass
        .param_vars
        .iter()
        .map(|v| grads.get_or_zeros(*v))
        .collect();

    // Central finite differences over every parameter element.
    let h = 1e-5;
    let mut param_idx = 0usize;
    let mut worst: (f64, f64, f64) = (0.0, 0.0, 0.0);
    let mut checked = 0usize;
    let n_params = analytic.len();
    for pi in 0..n_params {
        let numel = analytic[pi].numel();
        for e in 0..numel {
            let mut poke = |delta: f64, m: &mut AnyModel| {
                let mut k = 0usize;
                m.visit_trainable_mut(&mut |t| {
                    if k == pi {
                        t.data_mut()[e] += delta;
                    }
                    k += 1;
                });
            };
            poke(h, &mut model);
            let plus = loss_of(&model);
            poke(-2.0 * h, &mut model);
            let minus = loss_of(&model);
            poke(h, &mut model);
            let numeric = (plus - minus) / (2.0 * h);
            let a = analytic[pi].data()[e];
            assert!(
                grad_close(a, numeric, 1e-4),
                "{what}: param {pi} elem {e}: analytic {a} vs numeric {numeric}"
            );
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-12);
            if rel > worst.0 {
                worst = (rel, a, numeric);
            }
            checked += 1;
        }
        param_idx += 1;
    }
    let _ = param_idx;
    println!("{what}: {checked} parameter gradients OK (worst rel {:.2e})", worst.0);
}

#[test]
fn pointnet_gradients_match_finite_differences() {
    let mut rng = ChaCha12Rng::seed_from_u64(5);
    let features = random_tensor(&[16, 4], &mut rng);
    for bn in [true, false] {
        let cfg = PointNetConfig {
            tnet_mlp_widths: vec![5],
            tnet_fc_widths: vec![4],
            mlp_widths: vec![6, 256],
            fc_widths: vec![5],
            batch_norm: bn,
            dropout: 0.0,
            min_points: 1,
            ..Default::default()
        };
        let params = PointNetParams::init(cfg, if bn { 7 } else { 17 }).unwrap();
        check_model(
            AnyModel::PointNet(params),
            &features,
            1,
            &format!("pointnet bn={bn}"),
        );
    }
}

#[test]
fn dgcnn_gradients_match_finite_differences() {
    let mut rng = ChaCha12Rng::seed_from_u64(6);
    let features = random_tensor(&[16, 4], &mut rng);
    for bn in [true, false] {
        let cfg = DgcnnConfig {
            k: 3,
            edge_widths: vec![5, 6],
            fc_widths: vec![5],
            batch_norm: bn,
            dropout: 0.0,
            ..Default::default()
        };
        let params = DgcnnParams::init(cfg, 8).unwrap();
        check_model(
            AnyModel::Dgcnn(params),
            &features,
            0,
            &format!("dgcnn bn={bn}"),
        );
    }
}
