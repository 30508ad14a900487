//! The final ONH point-cloud representation and the cylindrical crop.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::plane::Vec3;
use crate::geometry::volume::{ClassLabel, TissueLabel};

/// Which boundary of its tissue a point came from. File codes: 0/1.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundarySide {
    Anterior = 0,
    Posterior = 1,
}

impl BoundarySide {
    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn from_code(code: u8) -> Result<Self> {
        match code {
            0 => Ok(BoundarySide::Anterior),
            1 => Ok(BoundarySide::Posterior),
            _ => Err(Error::Format(format!("unknown side code {code}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CloudPoint {
    /// Position in micrometers (BMO frame after alignment).
    pub pos: Vec3,
    pub thickness_um: f64,
    pub tissue: TissueLabel,
    pub side: BoundarySide,
}

/// An aligned, cropped, thickness-annotated ONH point cloud.
#[derive(Debug, Clone, PartialEq)]
pub struct OnhPointCloud {
    pub subject_id: String,
    pub scan_id: String,
    pub class_label: ClassLabel,
    pub points: Vec<CloudPoint>,
}

impl OnhPointCloud {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Keep only points of one tissue (used by the per-tissue experiments).
    pub fn filter_tissue(&self, tissue: TissueLabel) -> OnhPointCloud {
        OnhPointCloud {
            subject_id: self.subject_id.clone(),
            scan_id: self.scan_id.clone(),
            class_label: self.class_label,
            points: self
                .points
                .iter()
                .copied()
                .filter(|p| p.tissue == tissue)
                .collect(),
        }
    }
}

/// Keep exactly the points with sqrt(x^2 + y^2) <= radius (boundary
/// inclusive), preserving order. An empty result is an extraction error.
pub fn cylindrical_crop(cloud: &OnhPointCloud, radius_um: f64) -> Result<OnhPointCloud> {
    if !(radius_um > 0.0) {
        return Err(Error::Input(format!("non-positive crop radius {radius_um}")));
    }
    let points: Vec<CloudPoint> = cloud
        .points
        .iter()
        .copied()
        .filter(|p| (p.pos[0] * p.pos[0] + p.pos[1] * p.pos[1]).sqrt() <= radius_um)
        .collect();
    if points.is_empty() {
        return Err(Error::Extraction(format!(
            "cylindrical crop at {radius_um} um left no points in scan {:?}",
            cloud.scan_id
        )));
    }
    Ok(OnhPointCloud {
        subject_id: cloud.subject_id.clone(),
        scan_id: cloud.scan_id.clone(),
        class_label: cloud.class_label,
        points,
    })
}
