//! Supervised training loop: minibatch Adam on cross-entropy with
//! early stopping on validation AUC. Deterministic given (config, seed):
//! per-sample work may run on multiple threads but every reduction
//! happens in a fixed sample order.

use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autodiff::{BatchStats, Tape};
use crate::dgcnn::DgcnnConfig;
use crate::error::{Error, Result};
use crate::geometry::OnhPointCloud;
use crate::model::{AnyModel, ModelFamily};
use crate::nn::Mode;
use crate::optim::{Adam, AdamConfig};
use crate::pointnet::{transform_regularizer, PointNetConfig};
use crate::synth::mix_seed;
use crate::tensor::Tensor;
use crate::train::augment::{augment, eval_input, fnv1a, AugmentationConfig};
use crate::train::metrics::roc_auc;

/// A labeled training example.
#[derive(Debug, Clone)]
pub struct TrainSample {
    pub cloud: OnhPointCloud,
    pub label: usize,
}

impl TrainSample {
    pub fn from_cloud(cloud: OnhPointCloud) -> Result<Self> {
        let label = cloud.class_label.index().ok_or_else(|| {
            Error::Input(format!("scan {:?} has no class label", cloud.scan_id))
        })?;
        Ok(Self { cloud, label })
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub seed: u64,
    pub max_epochs: usize,
    /// Epochs that must elapse before early stopping may trigger.
    pub min_epochs: usize,
    pub patience: usize,
    pub batch_size: usize,
    pub optimizer: AdamConfig,
    /// Inverse-frequency class weights in the loss.
    pub class_weighted_loss: bool,
    /// Weight of the transform orthogonality penalty (PointNet only).
    pub tnet_regularizer_weight: f64,
    pub augment: AugmentationConfig,
    pub pointnet: PointNetConfig,
    pub dgcnn: DgcnnConfig,
    /// Train/validation/test scan fractions for single splits.
    pub fractions: (f64, f64, f64),
    /// Cross-validation fold count.
    pub folds: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            max_epochs: 300,
            min_epochs: 0,
            patience: 20,
            batch_size: 8,
            optimizer: AdamConfig::default(),
            class_weighted_loss: true,
            tnet_regularizer_weight: 1e-3,
            augment: AugmentationConfig::default(),
            pointnet: PointNetConfig::default(),
            dgcnn: DgcnnConfig::default(),
            fractions: (0.70, 0.15, 0.15),
            folds: 5,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config("epochs and batch size must be positive".into()));
        }
        self.augment.validate()?;
        self.pointnet.validate()?;
        self.dgcnn.validate()?;
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_auc: f64,
    pub skipped_samples: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainHistory {
    pub epochs: Vec<EpochStats>,
    pub best_epoch: usize,
    pub best_val_auc: f64,
}

/// Per-scan classifier output.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScanScore {
    pub scan_id: String,
    pub subject_id: String,
    pub label: usize,
    /// Softmax probability of the glaucoma class.
    pub score: f64,
}

fn class_weights(samples: &[TrainSample], enabled: bool) -> Result<[f64; 2]> {
    let positives = samples.iter().filter(|s| s.label == 1).count();
    let negatives = samples.len() - positives;
    if positives == 0 || negatives == 0 {
        return Err(Error::Input(
            "training set must contain both classes".into(),
        ));
    }
    if !enabled {
        return Ok([1.0, 1.0]);
    }
    let total = samples.len() as f64;
    Ok([
        total / (2.0 * negatives as f64),
        total / (2.0 * positives as f64),
    ])
}

struct SampleGrad {
    loss: f64,
    weight: f64,
    grads: Vec<Tensor>,
    bn_stats: Vec<BatchStats>,
}

fn sample_step(
    model: &AnyModel,
    sample: &TrainSample,
    cfg: &TrainConfig,
    aug_seed: u64,
) -> Result<Option<SampleGrad>> {
    let mut rng = ChaCha12Rng::seed_from_u64(aug_seed);
    let input = match augment(&sample.cloud, &cfg.augment, model.scales_um(), &mut rng) {
        Ok(i) => i,
        Err(Error::SkipSample(_)) => return Ok(None),
        Err(e) => return Err(e),
    };
    let tape = Tape::new();
    let mode = Mode::Train {
        dropout_seed: mix_seed(aug_seed, 0xD0),
    };
    let pass = model.forward(&tape, &input.features, mode)?;
    let mut loss = pass
        .logits
        .softmax_cross_entropy(&[sample.label], &[1.0, 1.0])?;
    if let (Some(transform), true) = (
        pass.transform,
        cfg.tnet_regularizer_weight != 0.0 && matches!(model, AnyModel::PointNet(_)),
    ) {
        let reg = transform_regularizer(transform)?.scale(cfg.tnet_regularizer_weight);
        loss = loss.add(reg)?;
    }
    let loss_value = loss.value().scalar_value();
    let grads = tape.backward(loss)?;
    let grad_tensors: Vec<Tensor> = pass
        .param_vars
        .iter()
        .map(|v| grads.get_or_zeros(*v))
        .collect();
    Ok(Some(SampleGrad {
        loss: loss_value,
        weight: 1.0,
        grads: grad_tensors,
        bn_stats: pass.bn_stats,
    }))
}

/// Score scans with a trained model (deterministic evaluation path).
pub fn score_scans(
    model: &AnyModel,
    samples: &[TrainSample],
    points_per_cloud: usize,
) -> Result<Vec<ScanScore>> {
    let results: Vec<Result<ScanScore>> = samples
        .par_iter()
        .map(|s| {
            let input = eval_input(&s.cloud, points_per_cloud, model.scales_um());
            let tape = Tape::new();
            let pass = model.forward(&tape, &input.features, Mode::Eval)?;
            let logits = pass.logits.value();
            let (a, b) = (logits.data()[0], logits.data()[1]);
            let m = a.max(b);
            let score = (b - m).exp() / ((a - m).exp() + (b - m).exp());
            Ok(ScanScore {
                scan_id: s.cloud.scan_id.clone(),
                subject_id: s.cloud.subject_id.clone(),
                label: s.label,
                score,
            })
        })
        .collect();
    results.into_iter().collect()
}

/// AUC of a model over a sample set.
pub fn validation_auc(
    model: &AnyModel,
    samples: &[TrainSample],
    points_per_cloud: usize,
) -> Result<f64> {
    let scores = score_scans(model, samples, points_per_cloud)?;
    let s: Vec<f64> = scores.iter().map(|r| r.score).collect();
    let l: Vec<usize> = scores.iter().map(|r| r.label).collect();
    Ok(roc_auc(&s, &l)?.1)
}

/// Train one model. Keeps the checkpoint with the best validation AUC and
/// stops after `patience` epochs without improvement.
pub fn train_model(
    family: ModelFamily,
    train: &[TrainSample],
    validation: &[TrainSample],
    cfg: &TrainConfig,
    seed: u64,
) -> Result<(AnyModel, TrainHistory)> {
    cfg.validate()?;
    if train.is_empty() || validation.is_empty() {
        return Err(Error::Input("empty train or validation set".into()));
    }
    let weights = class_weights(train, cfg.class_weighted_loss)?;
    // Validation AUC needs both classes too.
    class_weights(validation, false).map_err(|_| {
        Error::Input("validation set must contain both classes".into())
    })?;

    let mut model = AnyModel::init(family, &cfg.pointnet, &cfg.dgcnn, mix_seed(seed, 1))?;
    let mut adam = Adam::new(cfg.optimizer, model.n_trainable());

    let mut history = TrainHistory {
        epochs: Vec::new(),
        best_epoch: 0,
        best_val_auc: f64::NEG_INFINITY,
    };
    let mut best_model = model.clone();
    let mut epochs_since_best = 0usize;

    let mut order: Vec<usize> = (0..train.len()).collect();
    for epoch in 0..cfg.max_epochs {
        // Deterministic shuffle per epoch.
        let mut rng = ChaCha12Rng::seed_from_u64(mix_seed(seed, 1000 + epoch as u64));
        use rand::seq::SliceRandom;
        order.shuffle(&mut rng);

        let mut epoch_loss = 0.0;
        let mut epoch_weight = 0.0;
        let mut skipped = 0usize;
        for batch in order.chunks(cfg.batch_size) {
            let outputs: Vec<Result<Option<SampleGrad>>> = batch
                .par_iter()
                .map(|&idx| {
                    let sample = &train[idx];
                    let aug_seed = mix_seed(
                        mix_seed(seed, 2000 + epoch as u64),
                        fnv1a(&sample.cloud.scan_id),
                    );
                    sample_step(&model, sample, cfg, aug_seed).map(|o| {
                        o.map(|mut g| {
                            g.weight = weights[sample.label];
                            g
                        })
                    })
                })
                .collect();

            // Ordered, deterministic reduction.
            let mut acc: Option<Vec<Tensor>> = None;
            let mut wsum = 0.0;
            let mut stats_in_order: Vec<Vec<BatchStats>> = Vec::new();
            for out in outputs {
                match out? {
                    None => skipped += 1,
                    Some(g) => {
                        if !g.loss.is_finite() {
                            return Err(Error::Divergence(format!(
                                "non-finite loss at epoch {epoch}"
                            )));
                        }
                        epoch_loss += g.weight * g.loss;
                        epoch_weight += g.weight;
                        wsum += g.weight;
                        match &mut acc {
                            None => {
                                let mut scaled = g.grads;
                                for t in &mut scaled {
                                    t.scale_assign(g.weight);
                                }
                                acc = Some(scaled);
                            }
                            Some(acc) => {
                                for (a, mut b) in acc.iter_mut().zip(g.grads.into_iter()) {
                                    b.scale_assign(g.weight);
                                    a.add_assign(&b)?;
                                }
                            }
                        }
                        stats_in_order.push(g.bn_stats);
                    }
                }
            }
            let Some(mut grads) = acc else { continue };
            for t in &mut grads {
                t.scale_assign(1.0 / wsum);
            }
            adam.begin_step();
            let mut idx = 0usize;
            let mut update_err = None;
            model.visit_trainable_mut(&mut |t| {
                if update_err.is_none() {
                    if let Err(e) = adam.update(idx, t, &grads[idx]) {
                        update_err = Some(e);
                    }
                }
                idx += 1;
            });
            if let Some(e) = update_err {
                return Err(e);
            }
            // Running-stat updates in sample order.
            for stats in stats_in_order {
                for (bn, s) in model.bn_blocks_mut().into_iter().zip(stats.iter()) {
                    bn.update_running(s);
                }
            }
        }

        let val_auc = validation_auc(&model, validation, cfg.augment.points_per_cloud)?;
        history.epochs.push(EpochStats {
            epoch,
            train_loss: if epoch_weight > 0.0 {
                epoch_loss / epoch_weight
            } else {
                f64::NAN
            },
            val_auc,
            skipped_samples: skipped,
        });
        // Ties refresh the kept checkpoint: with small validation sets the
        // AUC saturates early, and among equally scoring epochs the later
        // one is the better-converged model. Patience still counts strict
        // improvements only.
        if val_auc >= history.best_val_auc {
            if val_auc > history.best_val_auc {
                epochs_since_best = 0;
            } else {
                epochs_since_best += 1;
            }
            history.best_val_auc = val_auc;
            history.best_epoch = epoch;
            best_model = model.clone();
        } else {
            epochs_since_best += 1;
        }
        if epochs_since_best >= cfg.patience && epoch + 1 >= cfg.min_epochs {
            break;
        }
    }
    Ok((best_model, history))
}
