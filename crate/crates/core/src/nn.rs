//! Shared-MLP layers, batch normalization bookkeeping, and parameter
//! mounting for the autodiff tape.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;

use crate::autodiff::{BatchStats, Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.9;

/// Batch-norm parameters plus running statistics (biased variance).
#[derive(Debug, Clone)]
pub struct BatchNormParams {
    pub scale: Tensor,
    pub shift: Tensor,
    pub running_mean: Tensor,
    pub running_var: Tensor,
}

impl BatchNormParams {
    pub fn new(width: usize) -> Self {
        Self {
            scale: Tensor::filled(&[1, width], 1.0),
            shift: Tensor::zeros(&[1, width]),
            running_mean: Tensor::zeros(&[1, width]),
            running_var: Tensor::filled(&[1, width], 1.0),
        }
    }

    /// Fold one batch statistic into the running estimates.
    pub fn update_running(&mut self, stats: &BatchStats) {
        for (r, &m) in self.running_mean.data_mut().iter_mut().zip(&stats.mean) {
            *r = BN_MOMENTUM * *r + (1.0 - BN_MOMENTUM) * m;
        }
        for (r, &v) in self.running_var.data_mut().iter_mut().zip(&stats.var) {
            *r = BN_MOMENTUM * *r + (1.0 - BN_MOMENTUM) * v;
        }
    }
}

/// One linear layer with optional batch norm: `x W + b`, weights `Cin x Cout`.
#[derive(Debug, Clone)]
pub struct LayerParams {
    pub weight: Tensor,
    pub bias: Tensor,
    pub bn: Option<BatchNormParams>,
}

impl LayerParams {
    /// He initialization for ReLU stacks.
    pub fn he_init(cin: usize, cout: usize, bn: bool, rng: &mut ChaCha12Rng) -> Self {
        let std = (2.0 / cin as f64).sqrt();
        let data = (0..cin * cout).map(|_| normal(rng) * std).collect();
        Self {
            weight: Tensor::new(vec![cin, cout], data).expect("init shape"),
            bias: Tensor::zeros(&[1, cout]),
            bn: if bn {
                Some(BatchNormParams::new(cout))
            } else {
                None
            },
        }
    }

    /// All-zero layer; used for identity-at-init transform heads.
    pub fn zero_init(cin: usize, cout: usize) -> Self {
        Self {
            weight: Tensor::zeros(&[cin, cout]),
            bias: Tensor::zeros(&[1, cout]),
            bn: None,
        }
    }

    pub fn in_width(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn out_width(&self) -> usize {
        self.weight.shape()[1]
    }
}

/// Standard normal via Box-Muller; keeps the dependency set minimal and the
/// byte stream deterministic.
pub fn normal(rng: &mut ChaCha12Rng) -> f64 {
    loop {
        let u1: f64 = rng.random::<f64>();
        if u1 <= f64::MIN_POSITIVE {
            continue;
        }
        let u2: f64 = rng.random::<f64>();
        return (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos();
    }
}

/// Forward mode. Training mode differentiates through batch statistics and
/// applies dropout with the given seed; eval mode uses running statistics
/// and no dropout.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Mode {
    Train { dropout_seed: u64 },
    Eval,
}

impl Mode {
    pub fn is_train(&self) -> bool {
        matches!(self, Mode::Train { .. })
    }
}

/// A layer's tensors mounted as tape leaves, so gradients can be collected.
pub struct MountedLayer<'t> {
    pub weight: Var<'t>,
    pub bias: Var<'t>,
    pub bn: Option<MountedBn<'t>>,
}

pub struct MountedBn<'t> {
    pub scale: Var<'t>,
    pub shift: Var<'t>,
    /// Eval-mode affine precomputed from running stats (constants).
    pub eval_scale: Tensor,
    pub eval_shift: Tensor,
}

/// Tracks mounted trainable leaves in declaration order.
pub struct ParamBinder<'t> {
    tape: &'t Tape,
    vars: Vec<Var<'t>>,
}

impl<'t> ParamBinder<'t> {
    pub fn new(tape: &'t Tape) -> Self {
        Self {
            tape,
            vars: Vec::new(),
        }
    }

    pub fn bind(&mut self, t: &Tensor) -> Var<'t> {
        let v = self.tape.leaf(t.clone());
        self.vars.push(v);
        v
    }

    pub fn mount_layer(&mut self, layer: &LayerParams) -> MountedLayer<'t> {
        let weight = self.bind(&layer.weight);
        let bias = self.bind(&layer.bias);
        let bn = layer.bn.as_ref().map(|bn| {
            let scale = self.bind(&bn.scale);
            let shift = self.bind(&bn.shift);
            // gamma / sqrt(var + eps) and beta - mean * that, as constants.
            let w = bn.scale.numel();
            let mut eval_scale = Tensor::zeros(&[1, w]);
            let mut eval_shift = Tensor::zeros(&[1, w]);
            for j in 0..w {
                let inv = 1.0 / (bn.running_var.data()[j] + BN_EPS).sqrt();
                let a = bn.scale.data()[j] * inv;
                eval_scale.data_mut()[j] = a;
                eval_shift.data_mut()[j] = bn.shift.data()[j] - bn.running_mean.data()[j] * a;
            }
            MountedBn {
                scale,
                shift,
                eval_scale,
                eval_shift,
            }
        });
        MountedLayer { weight, bias, bn }
    }

    pub fn trainable_vars(&self) -> &[Var<'t>] {
        &self.vars
    }

    pub fn tape(&self) -> &'t Tape {
        self.tape
    }
}

/// Apply one linear (+ batch norm) (+ ReLU) layer to every row.
pub fn apply_layer<'t>(
    x: Var<'t>,
    layer: &MountedLayer<'t>,
    mode: Mode,
    relu: bool,
    bn_stats: &mut Vec<BatchStats>,
) -> Result<Var<'t>> {
    let mut y = x.matmul(layer.weight)?.add_row(layer.bias)?;
    if let Some(bn) = &layer.bn {
        match mode {
            Mode::Train { .. } => {
                let (out, stats) = y.batch_norm_train(bn.scale, bn.shift, BN_EPS)?;
                bn_stats.push(stats);
                y = out;
            }
            Mode::Eval => {
                let scale = y.tape_leaf(bn.eval_scale.clone());
                let shift = y.tape_leaf(bn.eval_shift.clone());
                y = y.mul_row(scale)?.add_row(shift)?;
            }
        }
    }
    Ok(if relu { y.relu() } else { y })
}

/// Shared per-point MLP: each layer applied identically to every row.
pub fn shared_mlp<'t>(
    x: Var<'t>,
    layers: &[MountedLayer<'t>],
    mode: Mode,
    bn_stats: &mut Vec<BatchStats>,
) -> Result<Var<'t>> {
    let mut h = x;
    for layer in layers {
        h = apply_layer(h, layer, mode, true, bn_stats)?;
    }
    Ok(h)
}

/// Inverted-scaling dropout mask as a constant leaf; identity in eval mode
/// or at rate 0.
pub fn dropout<'t>(x: Var<'t>, rate: f64, mode: Mode) -> Result<Var<'t>> {
    let seed = match mode {
        Mode::Train { dropout_seed } if rate > 0.0 => dropout_seed,
        _ => return Ok(x),
    };
    let shape = x.shape();
    let numel: usize = shape.iter().product();
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let keep = 1.0 - rate;
    let mask: Vec<f64> = (0..numel)
        .map(|_| {
            if rng.random::<f64>() < keep {
                1.0 / keep
            } else {
                0.0
            }
        })
        .collect();
    let mask = Tensor::new(shape, mask)?;
    let m = x.tape_leaf(mask);
    x.mul(m)
}

/// Validate that consecutive layer widths chain together.
pub fn check_layer_chain(layers: &[LayerParams], input_width: usize) -> Result<()> {
    let mut w = input_width;
    for (i, layer) in layers.iter().enumerate() {
        if layer.in_width() != w {
            return Err(Error::Dimension(format!(
                "layer {i} expects input width {}, got {w}",
                layer.in_width()
            )));
        }
        w = layer.out_width();
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testutil::random_tensor;
    use rand::SeedableRng;

    fn mk_rng(seed: u64) -> ChaCha12Rng {
        ChaCha12Rng::seed_from_u64(seed)
    }

    fn run_shared_mlp(input: &Tensor, layers: &[LayerParams], mode: Mode) -> Tensor {
        let tape = Tape::new();
        let mut binder = ParamBinder::new(&tape);
        let mounted: Vec<_> = layers.iter().map(|l| binder.mount_layer(l)).collect();
        let x = tape.leaf(input.clone());
        let mut stats = Vec::new();
        shared_mlp(x, &mounted, mode, &mut stats).unwrap().value()
    }

    #[test]
    fn duplicate_rows_give_duplicate_outputs() {
        let mut rng = mk_rng(1);
        let layers = vec![
            LayerParams::he_init(4, 8, true, &mut rng),
            LayerParams::he_init(8, 6, true, &mut rng),
        ];
        let row: Vec<f64> = (0..4).map(|i| 0.3 * i as f64 - 0.4).collect();
        let input = Tensor::from_rows(&[row.clone(), row.clone(), row]).unwrap();
        let out = run_shared_mlp(&input, &layers, Mode::Eval);
        assert_eq!(out.row(0), out.row(1));
        assert_eq!(out.row(0), out.row(2));
    }

    #[test]
    fn permuted_rows_permute_outputs_exactly() {
        let mut rng = mk_rng(2);
        let layers = vec![
            LayerParams::he_init(3, 5, true, &mut rng),
            LayerParams::he_init(5, 4, true, &mut rng),
        ];
        let input = random_tensor(&[6, 3], &mut rng);
        let perm = [4usize, 0, 5, 2, 1, 3];
        let permuted_rows: Vec<Vec<f64>> = perm.iter().map(|&i| input.row(i).to_vec()).collect();
        let permuted = Tensor::from_rows(&permuted_rows).unwrap();

        // Both modes: batch statistics over points are permutation invariant.
        for mode in [Mode::Eval, Mode::Train { dropout_seed: 0 }] {
            let a = run_shared_mlp(&input, &layers, mode);
            let b = run_shared_mlp(&permuted, &layers, mode);
            for (r, &i) in perm.iter().enumerate() {
                assert_eq!(b.row(r), a.row(i), "mode {mode:?}");
            }
        }
    }

    #[test]
    fn identity_layer_is_relu() {
        let layer = LayerParams {
            weight: Tensor::eye(3),
            bias: Tensor::zeros(&[1, 3]),
            bn: None,
        };
        let input = Tensor::from_rows(&[vec![-1.0, 0.5, 2.0], vec![0.0, -7.0, 0.25]]).unwrap();
        let out = run_shared_mlp(&input, &[layer], Mode::Eval);
        // Elementwise max(0, x) oracle.
        for (o, x) in out.data().iter().zip(input.data().iter()) {
            assert_eq!(*o, x.max(0.0));
        }
    }

    #[test]
    fn width_mismatch_rejected() {
        let mut rng = mk_rng(3);
        let layers = vec![
            LayerParams::he_init(4, 8, false, &mut rng),
            LayerParams::he_init(9, 2, false, &mut rng),
        ];
        assert!(check_layer_chain(&layers, 4).is_err());
        let input = random_tensor(&[3, 4], &mut rng);
        let tape = Tape::new();
        let mut binder = ParamBinder::new(&tape);
        let mounted: Vec<_> = layers.iter().map(|l| binder.mount_layer(l)).collect();
        let x = tape.leaf(input);
        let mut stats = Vec::new();
        assert!(shared_mlp(x, &mounted, Mode::Eval, &mut stats).is_err());
    }

    #[test]
    fn bn_train_eval_agree_when_running_equals_batch_stats() {
        let mut rng = mk_rng(4);
        let mut layer = LayerParams::he_init(3, 4, true, &mut rng);
        let input = random_tensor(&[9, 3], &mut rng);

        // First pass in train mode to capture the batch statistics.
        let tape = Tape::new();
        let mut binder = ParamBinder::new(&tape);
        let mounted = binder.mount_layer(&layer);
        let x = tape.leaf(input.clone());
        let mut stats = Vec::new();
        let train_out = apply_layer(x, &mounted, Mode::Train { dropout_seed: 0 }, true, &mut stats)
            .unwrap()
            .value();

        // Copy batch stats into the running estimates and rerun in eval mode.
        let bn = layer.bn.as_mut().unwrap();
        bn.running_mean = Tensor::new(vec![1, 4], stats[0].mean.clone()).unwrap();
        bn.running_var = Tensor::new(vec![1, 4], stats[0].var.clone()).unwrap();
        let eval_out = run_shared_mlp(&input, &[layer], Mode::Eval);
        for (a, b) in train_out.data().iter().zip(eval_out.data().iter()) {
            assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
    }

    #[test]
    fn dropout_eval_is_identity_and_train_is_masked() {
        let tape = Tape::new();
        let input = Tensor::filled(&[4, 4], 1.0);
        let x = tape.leaf(input.clone());
        let eval = dropout(x, 0.5, Mode::Eval).unwrap();
        assert_eq!(eval.value(), input);

        let train = dropout(x, 0.5, Mode::Train { dropout_seed: 9 }).unwrap();
        let v = train.value();
        assert!(v.data().iter().all(|&x| x == 0.0 || x == 2.0));
        // Same seed, same mask.
        let again = dropout(x, 0.5, Mode::Train { dropout_seed: 9 }).unwrap();
        assert_eq!(v, again.value());
    }
}
