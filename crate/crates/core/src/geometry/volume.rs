//! Labeled OCT volumes and the left-eye standardization flip.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Segmented tissue classes with stable file codes 0-7.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TissueLabel {
    Background = 0,
    RnflPlt = 1,
    GclIpl = 2,
    Orl = 3,
    RpeBm = 4,
    Choroid = 5,
    Sclera = 6,
    Lc = 7,
}

impl TissueLabel {
    pub const TISSUES: [TissueLabel; 7] = [
        TissueLabel::RnflPlt,
        TissueLabel::GclIpl,
        TissueLabel::Orl,
        TissueLabel::RpeBm,
        TissueLabel::Choroid,
        TissueLabel::Sclera,
        TissueLabel::Lc,
    ];

    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn from_code(code: u8) -> Result<Self> {
        Ok(match code {
            0 => TissueLabel::Background,
            1 => TissueLabel::RnflPlt,
            2 => TissueLabel::GclIpl,
            3 => TissueLabel::Orl,
            4 => TissueLabel::RpeBm,
            5 => TissueLabel::Choroid,
            6 => TissueLabel::Sclera,
            7 => TissueLabel::Lc,
            _ => return Err(Error::Format(format!("unknown tissue code {code}"))),
        })
    }

    pub fn name(self) -> &'static str {
        match self {
            TissueLabel::Background => "Background",
            TissueLabel::RnflPlt => "RNFL_PLT",
            TissueLabel::GclIpl => "GCL_IPL",
            TissueLabel::Orl => "ORL",
            TissueLabel::RpeBm => "RPE_BM",
            TissueLabel::Choroid => "Choroid",
            TissueLabel::Sclera => "Sclera",
            TissueLabel::Lc => "LC",
        }
    }

    pub fn parse(name: &str) -> Result<Self> {
        Ok(match name {
            "Background" => TissueLabel::Background,
            "RNFL_PLT" => TissueLabel::RnflPlt,
            "GCL_IPL" => TissueLabel::GclIpl,
            "ORL" => TissueLabel::Orl,
            "RPE_BM" => TissueLabel::RpeBm,
            "Choroid" => TissueLabel::Choroid,
            "Sclera" => TissueLabel::Sclera,
            "LC" => TissueLabel::Lc,
            _ => return Err(Error::Input(format!("unknown tissue name {name:?}"))),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EyeSide {
    Left,
    Right,
    Unknown,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ClassLabel {
    Glaucoma,
    NonGlaucoma,
    Unlabeled,
}

impl ClassLabel {
    /// Class index used by the networks: 0 non-glaucoma, 1 glaucoma.
    pub fn index(self) -> Option<usize> {
        match self {
            ClassLabel::NonGlaucoma => Some(0),
            ClassLabel::Glaucoma => Some(1),
            ClassLabel::Unlabeled => None,
        }
    }
}

/// Voxel spacing in micrometers: between B-scans, between A-scans, axial.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Spacing {
    pub between_bscans_um: f64,
    pub between_ascans_um: f64,
    pub axial_um: f64,
}

impl Spacing {
    pub fn validate(&self) -> Result<()> {
        let all = [
            self.between_bscans_um,
            self.between_ascans_um,
            self.axial_um,
        ];
        if all.iter().any(|&s| !(s > 0.0) || !s.is_finite()) {
            return Err(Error::Input(format!("non-positive spacing {self:?}")));
        }
        Ok(())
    }
}

/// A segmented OCT volume: a 3-D grid of tissue labels.
///
/// Layout is row-major over (B-scan, A-scan, axial pixel). The physical
/// frame puts x along the A-scan (lateral) axis, y along the B-scan axis and
/// z along the axial axis, increasing toward the posterior.
#[derive(Debug, Clone, PartialEq)]
pub struct SegmentedVolume {
    pub n_bscans: usize,
    pub n_ascans: usize,
    pub n_axial: usize,
    pub spacing: Spacing,
    pub eye_side: EyeSide,
    pub subject_id: String,
    pub scan_id: String,
    pub class_label: ClassLabel,
    labels: Vec<u8>,
}

impl SegmentedVolume {
    pub fn new(
        n_bscans: usize,
        n_ascans: usize,
        n_axial: usize,
        spacing: Spacing,
        eye_side: EyeSide,
        subject_id: String,
        scan_id: String,
        class_label: ClassLabel,
        labels: Vec<u8>,
    ) -> Result<Self> {
        spacing.validate()?;
        if n_bscans == 0 || n_ascans == 0 || n_axial == 0 {
            return Err(Error::Input("empty volume dimensions".into()));
        }
        let want = n_bscans * n_ascans * n_axial;
        if labels.len() != want {
            return Err(Error::Input(format!(
                "label buffer holds {} voxels, dims want {want}",
                labels.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&c| c > 7) {
            return Err(Error::Format(format!("unknown tissue code {bad}")));
        }
        Ok(Self {
            n_bscans,
            n_ascans,
            n_axial,
            spacing,
            eye_side,
            subject_id,
            scan_id,
            class_label,
            labels,
        })
    }

    pub fn empty(
        n_bscans: usize,
        n_ascans: usize,
        n_axial: usize,
        spacing: Spacing,
    ) -> Result<Self> {
        Self::new(
            n_bscans,
            n_ascans,
            n_axial,
            spacing,
            EyeSide::Left,
            String::new(),
            String::new(),
            ClassLabel::Unlabeled,
            vec![0; n_bscans * n_ascans * n_axial],
        )
    }

    #[inline]
    fn index(&self, bscan: usize, ascan: usize, axial: usize) -> usize {
        (bscan * self.n_ascans + ascan) * self.n_axial + axial
    }

    #[inline]
    pub fn label_code(&self, bscan: usize, ascan: usize, axial: usize) -> u8 {
        self.labels[self.index(bscan, ascan, axial)]
    }

    pub fn set_label(&mut self, bscan: usize, ascan: usize, axial: usize, label: TissueLabel) {
        let i = self.index(bscan, ascan, axial);
        self.labels[i] = label.code();
    }

    /// One A-scan column of label codes.
    pub fn column(&self, bscan: usize, ascan: usize) -> &[u8] {
        let start = self.index(bscan, ascan, 0);
        &self.labels[start..start + self.n_axial]
    }

    pub fn raw_labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn raw_labels_mut(&mut self) -> &mut [u8] {
        &mut self.labels
    }
}

/// Mirror right-eye volumes along the lateral (A-scan) axis so every volume
/// is in a left-eye configuration. Left-eye volumes pass through unchanged.
pub fn flip_to_left_eye(vol: &SegmentedVolume) -> Result<SegmentedVolume> {
    match vol.eye_side {
        EyeSide::Left => Ok(vol.clone()),
        EyeSide::Unknown => Err(Error::Input(format!(
            "scan {:?} has unknown eye side",
            vol.scan_id
        ))),
        EyeSide::Right => {
            let mut out = vol.clone();
            out.eye_side = EyeSide::Left;
            let w = vol.n_ascans;
            for b in 0..vol.n_bscans {
                for a in 0..w {
                    let src = vol.index(b, a, 0);
                    let dst = out.index(b, w - 1 - a, 0);
                    out.labels[dst..dst + vol.n_axial]
                        .copy_from_slice(&vol.labels[src..src + vol.n_axial]);
                }
            }
            Ok(out)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_vol(eye: EyeSide) -> SegmentedVolume {
        let spacing = Spacing {
            between_bscans_um: 100.0,
            between_ascans_um: 30.0,
            axial_um: 3.9,
        };
        let mut v = SegmentedVolume::empty(2, 5, 4, spacing).unwrap();
        v.eye_side = eye;
        v
    }

    #[test]
    fn left_eye_unchanged_bitwise() {
        let mut v = small_vol(EyeSide::Left);
        v.set_label(1, 3, 2, TissueLabel::Sclera);
        let flipped = flip_to_left_eye(&v).unwrap();
        assert_eq!(flipped, v);
    }

    #[test]
    fn flip_twice_is_identity() {
        let mut v = small_vol(EyeSide::Right);
        v.set_label(0, 1, 0, TissueLabel::RnflPlt);
        v.set_label(1, 4, 3, TissueLabel::Lc);
        let once = flip_to_left_eye(&v).unwrap();
        // Flip back by relabeling the flipped volume as a right eye.
        let mut again = once.clone();
        again.eye_side = EyeSide::Right;
        let twice = flip_to_left_eye(&again).unwrap();
        assert_eq!(twice.raw_labels(), v.raw_labels());
    }

    #[test]
    fn single_voxel_mirrors_across_lateral_axis() {
        let mut v = small_vol(EyeSide::Right);
        v.set_label(1, 1, 2, TissueLabel::Choroid);
        let flipped = flip_to_left_eye(&v).unwrap();
        // W = 5, so A-scan 1 lands at 5 - 1 - 1 = 3.
        assert_eq!(
            flipped.label_code(1, 3, 2),
            TissueLabel::Choroid.code()
        );
        assert_eq!(flipped.label_code(1, 1, 2), 0);
        assert_eq!(flipped.eye_side, EyeSide::Left);
    }

    #[test]
    fn unknown_eye_side_rejected() {
        let v = small_vol(EyeSide::Unknown);
        assert!(matches!(flip_to_left_eye(&v), Err(Error::Input(_))));
    }
}
