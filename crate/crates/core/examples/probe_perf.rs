// Scratch probe: where does one DGCNN step spend time?
use std::time::Instant;

use onhgdl_core::autodiff::Tape;
use onhgdl_core::dgcnn::{dgcnn_forward, knn_graph, DgcnnConfig, DgcnnParams};
use onhgdl_core::nn::Mode;
use onhgdl_core::tensor::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;

fn main() {
    let n = 384usize;
    let cfg = DgcnnConfig {
        edge_widths: vec![32, 32, 64],
        ..Default::default()
    };
    let params = DgcnnParams::init(cfg, 1).unwrap();
    let mut rng = ChaCha12Rng::seed_from_u64(2);
    let feats = Tensor::new(
        vec![n, 4],
        (0..n * 4).map(|_| rng.random_range(-1.0..1.0)).collect(),
    )
    .unwrap();

    let t = Instant::now();
    for _ in 0..5 {
        let _ = knn_graph(&feats, 20).unwrap();
    }
    println!("knn on raw input x5: {:?}", t.elapsed());

    let t = Instant::now();
    let mut passes = 0;
    for _ in 0..5 {
        let tape = Tape::new();
        let pass = dgcnn_forward(&tape, &params, &feats, Mode::Eval).unwrap();
        passes += pass.pool_argmax.len();
    }
    println!("forward eval x5: {:?} ({passes})", t.elapsed());

    let t = Instant::now();
    for _ in 0..5 {
        let tape = Tape::new();
        let pass = dgcnn_forward(&tape, &params, &feats, Mode::Train { dropout_seed: 1 }).unwrap();
        let loss = pass.logits.softmax_cross_entropy(&[1], &[1.0, 1.0]).unwrap();
        let _ = tape.backward(loss).unwrap();
    }
    println!("forward+backward train x5: {:?}", t.elapsed());
}
