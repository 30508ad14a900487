//! PointNet-style classifier: input transform subnetwork, shared MLPs, a
//! 256-wide global max pool, and a fully connected head over two classes.

use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{BatchStats, Tape, Var};
use crate::error::{Error, Result};
use crate::nn::{apply_layer, dropout, shared_mlp, LayerParams, Mode, ParamBinder};
use crate::tensor::Tensor;

/// Width of the global feature produced by the max pool.
pub const POOL_DIM: usize = 256;
/// Input features per point: x, y, z, local thickness.
pub const IN_FEATURES: usize = 4;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct PointNetConfig {
    pub tnet_mlp_widths: Vec<usize>,
    pub tnet_fc_widths: Vec<usize>,
    /// Shared per-point MLP widths; the last one feeds the max pool and
    /// must equal [`POOL_DIM`].
    pub mlp_widths: Vec<usize>,
    /// Hidden widths of the classification head (final layer to 2 classes
    /// is implicit).
    pub fc_widths: Vec<usize>,
    pub batch_norm: bool,
    pub dropout: f64,
    pub min_points: usize,
    /// Fixed input normalization; recorded in checkpoints.
    pub spatial_scale_um: f64,
    pub thickness_scale_um: f64,
}

impl Default for PointNetConfig {
    fn default() -> Self {
        Self {
            tnet_mlp_widths: vec![64, 128, 256],
            tnet_fc_widths: vec![128, 64],
            mlp_widths: vec![64, 64, 128, POOL_DIM],
            fc_widths: vec![128, 64],
            batch_norm: true,
            dropout: 0.3,
            min_points: 64,
            spatial_scale_um: 1750.0,
            thickness_scale_um: 500.0,
        }
    }
}

impl PointNetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.mlp_widths.last() != Some(&POOL_DIM) {
            return Err(Error::Config(format!(
                "last shared-mlp width must be {POOL_DIM}, got {:?}",
                self.mlp_widths
            )));
        }
        if self.tnet_mlp_widths.is_empty() || self.fc_widths.is_empty() {
            return Err(Error::Config("empty layer width list".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!(
                "dropout {} outside [0, 1)",
                self.dropout
            )));
        }
        if self.min_points == 0 {
            return Err(Error::Config("min_points must be at least 1".into()));
        }
        if !(self.spatial_scale_um > 0.0) || !(self.thickness_scale_um > 0.0) {
            return Err(Error::Config("normalization scales must be positive".into()));
        }
        Ok(())
    }
}

/// The transform subnetwork: shared MLP, max pool, FC stack, and a final
/// zero-initialized layer mapping to a 3x3 matrix added to the identity.
#[derive(Debug, Clone)]
pub struct TNetParams {
    pub mlp: Vec<LayerParams>,
    pub fc: Vec<LayerParams>,
    pub out: LayerParams,
}

#[derive(Debug, Clone)]
pub struct PointNetParams {
    pub config: PointNetConfig,
    pub tnet: TNetParams,
    pub mlp: Vec<LayerParams>,
    pub fc: Vec<LayerParams>,
    pub out: LayerParams,
}

impl PointNetParams {
    pub fn init(config: PointNetConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        let bn = config.batch_norm;

        let mut tnet_mlp = Vec::new();
        let mut w = IN_FEATURES;
        for &width in &config.tnet_mlp_widths {
            tnet_mlp.push(LayerParams::he_init(w, width, bn, &mut rng));
            w = width;
        }
        let mut tnet_fc = Vec::new();
        for &width in &config.tnet_fc_widths {
            tnet_fc.push(LayerParams::he_init(w, width, false, &mut rng));
            w = width;
        }
        // Zero init makes the predicted matrix exactly 0, so the applied
        // transform starts as the identity.
        let tnet_out = LayerParams::zero_init(w, 9);

        let mut mlp = Vec::new();
        w = IN_FEATURES;
        for &width in &config.mlp_widths {
            mlp.push(LayerParams::he_init(w, width, bn, &mut rng));
            w = width;
        }
        let mut fc = Vec::new();
        for &width in &config.fc_widths {
            fc.push(LayerParams::he_init(w, width, false, &mut rng));
            w = width;
        }
        // Damped output layer keeps the initial logits near zero.
        let mut out = LayerParams::he_init(w, 2, false, &mut rng);
        out.weight.scale_assign(0.05);
        Ok(Self {
            config,
            tnet: TNetParams {
                mlp: tnet_mlp,
                fc: tnet_fc,
                out: tnet_out,
            },
            mlp,
            fc,
            out,
        })
    }

    fn layers(&self) -> Vec<&LayerParams> {
        let mut v: Vec<&LayerParams> = Vec::new();
        v.extend(self.tnet.mlp.iter());
        v.extend(self.tnet.fc.iter());
        v.push(&self.tnet.out);
        v.extend(self.mlp.iter());
        v.extend(self.fc.iter());
        v.push(&self.out);
        v
    }

    fn layers_mut(&mut self) -> Vec<&mut LayerParams> {
        let mut v: Vec<&mut LayerParams> = Vec::new();
        v.extend(self.tnet.mlp.iter_mut());
        v.extend(self.tnet.fc.iter_mut());
        v.push(&mut self.tnet.out);
        v.extend(self.mlp.iter_mut());
        v.extend(self.fc.iter_mut());
        v.push(&mut self.out);
        v
    }

    pub fn visit_trainable(&self, f: &mut dyn FnMut(&Tensor)) {
        for layer in self.layers() {
            f(&layer.weight);
            f(&layer.bias);
            if let Some(bn) = &layer.bn {
                f(&bn.scale);
                f(&bn.shift);
            }
        }
    }

    pub fn visit_trainable_mut(&mut self, f: &mut dyn FnMut(&mut Tensor)) {
        for layer in self.layers_mut() {
            f(&mut layer.weight);
            f(&mut layer.bias);
            if let Some(bn) = &mut layer.bn {
                f(&mut bn.scale);
                f(&mut bn.shift);
            }
        }
    }

    pub fn visit_state(&self, f: &mut dyn FnMut(&Tensor)) {
        for layer in self.layers() {
            if let Some(bn) = &layer.bn {
                f(&bn.running_mean);
                f(&bn.running_var);
            }
        }
    }

    pub fn visit_state_mut(&mut self, f: &mut dyn FnMut(&mut Tensor)) {
        for layer in self.layers_mut() {
            if let Some(bn) = &mut layer.bn {
                f(&mut bn.running_mean);
                f(&mut bn.running_var);
            }
        }
    }

    /// Batch-norm blocks in forward order, for running-stat updates.
    pub fn bn_blocks_mut(&mut self) -> Vec<&mut crate::nn::BatchNormParams> {
        self.layers_mut()
            .into_iter()
            .filter_map(|l| l.bn.as_mut())
            .collect()
    }
}

/// Everything one forward pass exposes.
pub struct ForwardPass<'t> {
    pub logits: Var<'t>,
    /// Row index chosen by each max-pool channel.
    pub pool_argmax: Vec<usize>,
    /// Pooled value per channel; a 0 means the whole column was clamped,
    /// so the argmax row is a tie-break artifact.
    pub pool_values: Vec<f64>,
    /// Batch statistics per batch-norm layer, in forward order.
    pub bn_stats: Vec<BatchStats>,
    /// The applied input transform (identity + predicted), when the model
    /// has one.
    pub transform: Option<Var<'t>>,
    /// Trainable leaves in `visit_trainable` order.
    pub param_vars: Vec<Var<'t>>,
}

/// Predict the 3x3 transform and apply it to the spatial columns only; the
/// thickness column passes through unchanged.
pub fn tnet_apply<'t>(
    x: Var<'t>,
    tnet_mlp: &[crate::nn::MountedLayer<'t>],
    tnet_fc: &[crate::nn::MountedLayer<'t>],
    tnet_out: &crate::nn::MountedLayer<'t>,
    mode: Mode,
    bn_stats: &mut Vec<BatchStats>,
) -> Result<(Var<'t>, Var<'t>)> {
    let h = shared_mlp(x, tnet_mlp, mode, bn_stats)?;
    let (pooled, _) = h.global_max_pool()?;
    let mut g = pooled;
    for layer in tnet_fc {
        g = apply_layer(g, layer, mode, true, bn_stats)?;
    }
    let flat = apply_layer(g, tnet_out, mode, false, bn_stats)?;
    let predicted = flat.reshape(vec![3, 3])?;
    let identity = x.tape_leaf(Tensor::eye(3));
    let transform = predicted.add(identity)?;

    let (spatial, thickness) = x.split_cols(3)?;
    let moved = spatial.matmul(transform)?;
    let out = moved.concat_cols(thickness)?;
    Ok((out, transform))
}

/// Orthogonality penalty `|| I - A A^T ||_F^2` on a transform matrix.
pub fn transform_regularizer<'t>(a: Var<'t>) -> Result<Var<'t>> {
    let identity = a.tape_leaf(Tensor::eye(a.shape()[0]));
    let aat = a.matmul(a.transpose()?)?;
    let d = identity.sub(aat)?;
    Ok(d.mul(d)?.sum_all())
}

/// Full forward pass over normalized per-point features (N x 4).
pub fn pointnet_forward<'t>(
    tape: &'t Tape,
    params: &PointNetParams,
    features: &Tensor,
    mode: Mode,
) -> Result<ForwardPass<'t>> {
    if features.shape().len() != 2 || features.cols() != IN_FEATURES {
        return Err(Error::Input(format!(
            "expected N x {IN_FEATURES} features, got {:?}",
            features.shape()
        )));
    }
    if features.rows() < params.config.min_points {
        return Err(Error::Input(format!(
            "{} points below the minimum of {}",
            features.rows(),
            params.config.min_points
        )));
    }
    let mut binder = ParamBinder::new(tape);
    let tnet_mlp: Vec<_> = params.tnet.mlp.iter().map(|l| binder.mount_layer(l)).collect();
    let tnet_fc: Vec<_> = params.tnet.fc.iter().map(|l| binder.mount_layer(l)).collect();
    let tnet_out = binder.mount_layer(&params.tnet.out);
    let mlp: Vec<_> = params.mlp.iter().map(|l| binder.mount_layer(l)).collect();
    let fc: Vec<_> = params.fc.iter().map(|l| binder.mount_layer(l)).collect();
    let out = binder.mount_layer(&params.out);

    let x = tape.leaf(features.clone());
    let mut bn_stats = Vec::new();
    let (transformed, transform) =
        tnet_apply(x, &tnet_mlp, &tnet_fc, &tnet_out, mode, &mut bn_stats)?;
    let point_features = shared_mlp(transformed, &mlp, mode, &mut bn_stats)?;
    let (global, pool_argmax) = point_features.global_max_pool()?;
    let pool_values = global.with_value(|t| t.data().to_vec());

    let mut h = global;
    for layer in &fc {
        h = apply_layer(h, layer, mode, true, &mut bn_stats)?;
    }
    h = dropout(h, params.config.dropout, mode)?;
    let logits = apply_layer(h, &out, mode, false, &mut bn_stats)?;

    Ok(ForwardPass {
        logits,
        pool_argmax,
        pool_values,
        bn_stats,
        transform: Some(transform),
        param_vars: binder.trainable_vars().to_vec(),
    })
}
