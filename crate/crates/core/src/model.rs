//! Family-agnostic wrapper over the two classifiers.

use serde::{Deserialize, Serialize};

use crate::autodiff::Tape;
use crate::dgcnn::{dgcnn_forward, DgcnnConfig, DgcnnParams};
use crate::error::{Error, Result};
use crate::nn::BatchNormParams;
use crate::nn::Mode;
use crate::pointnet::{pointnet_forward, ForwardPass, PointNetConfig, PointNetParams};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelFamily {
    PointNet,
    Dgcnn,
}

impl ModelFamily {
    pub fn as_str(self) -> &'static str {
        match self {
            ModelFamily::PointNet => "pointnet",
            ModelFamily::Dgcnn => "dgcnn",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "pointnet" => Ok(ModelFamily::PointNet),
            "dgcnn" => Ok(ModelFamily::Dgcnn),
            _ => Err(Error::Input(format!(
                "unknown model family {s:?}; expected pointnet or dgcnn"
            ))),
        }
    }
}

impl std::fmt::Display for ModelFamily {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// A trained or trainable model of either family.
#[derive(Debug, Clone)]
pub enum AnyModel {
    PointNet(PointNetParams),
    Dgcnn(DgcnnParams),
}

impl AnyModel {
    pub fn init(
        family: ModelFamily,
        pointnet_cfg: &PointNetConfig,
        dgcnn_cfg: &DgcnnConfig,
        seed: u64,
    ) -> Result<Self> {
        Ok(match family {
            ModelFamily::PointNet => {
                AnyModel::PointNet(PointNetParams::init(pointnet_cfg.clone(), seed)?)
            }
            ModelFamily::Dgcnn => AnyModel::Dgcnn(DgcnnParams::init(dgcnn_cfg.clone(), seed)?),
        })
    }

    pub fn family(&self) -> ModelFamily {
        match self {
            AnyModel::PointNet(_) => ModelFamily::PointNet,
            AnyModel::Dgcnn(_) => ModelFamily::Dgcnn,
        }
    }

    /// Smallest admissible input cloud for this model.
    pub fn min_points(&self) -> usize {
        match self {
            AnyModel::PointNet(p) => p.config.min_points,
            AnyModel::Dgcnn(p) => p.config.k + 1,
        }
    }

    /// (spatial, thickness) normalization divisors in micrometers.
    pub fn scales_um(&self) -> (f64, f64) {
        match self {
            AnyModel::PointNet(p) => (p.config.spatial_scale_um, p.config.thickness_scale_um),
            AnyModel::Dgcnn(p) => (p.config.spatial_scale_um, p.config.thickness_scale_um),
        }
    }

    pub fn forward<'t>(
        &self,
        tape: &'t Tape,
        features: &Tensor,
        mode: Mode,
    ) -> Result<ForwardPass<'t>> {
        match self {
            AnyModel::PointNet(p) => pointnet_forward(tape, p, features, mode),
            AnyModel::Dgcnn(p) => dgcnn_forward(tape, p, features, mode),
        }
    }

    pub fn visit_trainable(&self, f: &mut dyn FnMut(&Tensor)) {
        match self {
            AnyModel::PointNet(p) => p.visit_trainable(f),
            AnyModel::Dgcnn(p) => p.visit_trainable(f),
        }
    }

    pub fn visit_trainable_mut(&mut self, f: &mut dyn FnMut(&mut Tensor)) {
        match self {
            AnyModel::PointNet(p) => p.visit_trainable_mut(f),
            AnyModel::Dgcnn(p) => p.visit_trainable_mut(f),
        }
    }

    pub fn visit_state(&self, f: &mut dyn FnMut(&Tensor)) {
        match self {
            AnyModel::PointNet(p) => p.visit_state(f),
            AnyModel::Dgcnn(p) => p.visit_state(f),
        }
    }

    pub fn visit_state_mut(&mut self, f: &mut dyn FnMut(&mut Tensor)) {
        match self {
            AnyModel::PointNet(p) => p.visit_state_mut(f),
            AnyModel::Dgcnn(p) => p.visit_state_mut(f),
        }
    }

    pub fn bn_blocks_mut(&mut self) -> Vec<&mut BatchNormParams> {
        match self {
            AnyModel::PointNet(p) => p.bn_blocks_mut(),
            AnyModel::Dgcnn(p) => p.bn_blocks_mut(),
        }
    }

    pub fn n_trainable(&self) -> usize {
        let mut n = 0;
        self.visit_trainable(&mut |_| n += 1);
        n
    }
}
