//! From a labeled OCT volume to an aligned, cropped, thickness-annotated
//! 3D point cloud.

pub mod align;
pub mod boundary;
pub mod cloud;
pub mod plane;
pub mod volume;

pub use align::{align_to_bmo, minimal_rotation, rotation_axis_angle, Mat3};
pub use boundary::{
    compute_thickness, detect_bmo, extract_boundaries, BmoLandmarks, BoundaryPoint, BoundarySet,
    TissueBoundary,
};
pub use cloud::{cylindrical_crop, BoundarySide, CloudPoint, OnhPointCloud};
pub use plane::{fit_plane_least_squares, PlaneFit, Vec3};
pub use volume::{flip_to_left_eye, ClassLabel, EyeSide, SegmentedVolume, Spacing, TissueLabel};

use crate::error::Result;

/// Options for the extraction pipeline.
#[derive(Debug, Clone, Copy)]
pub struct ExtractOptions {
    pub crop_radius_um: f64,
}

impl Default for ExtractOptions {
    fn default() -> Self {
        Self {
            crop_radius_um: 1750.0,
        }
    }
}

/// Full extraction pipeline: left-eye flip, boundary extraction, local
/// thickness, BMO detection, BMO-frame alignment, cylindrical crop.
///
/// The cloud keeps the anterior boundary points of all seven tissues plus
/// the posterior boundary points of the sclera and the LC.
pub fn build_point_cloud(vol: &SegmentedVolume, opts: &ExtractOptions) -> Result<OnhPointCloud> {
    let vol = flip_to_left_eye(vol)?;
    let mut bounds = extract_boundaries(&vol);
    compute_thickness(&mut bounds);
    let landmarks = detect_bmo(&bounds)?;

    let mut points = Vec::new();
    for b in 0..bounds.n_bscans() {
        for tissue in TissueLabel::TISSUES {
            let tb = bounds.tissue(b, tissue);
            for p in &tb.anterior {
                points.push(CloudPoint {
                    pos: p.pos,
                    thickness_um: p.thickness_um,
                    tissue,
                    side: BoundarySide::Anterior,
                });
            }
            if matches!(tissue, TissueLabel::Sclera | TissueLabel::Lc) {
                for p in &tb.posterior {
                    points.push(CloudPoint {
                        pos: p.pos,
                        thickness_um: p.thickness_um,
                        tissue,
                        side: BoundarySide::Posterior,
                    });
                }
            }
        }
    }
    let cloud = OnhPointCloud {
        subject_id: vol.subject_id.clone(),
        scan_id: vol.scan_id.clone(),
        class_label: vol.class_label,
        points,
    };
    let aligned = align_to_bmo(&cloud, &landmarks);
    cylindrical_crop(&aligned, opts.crop_radius_um)
}
