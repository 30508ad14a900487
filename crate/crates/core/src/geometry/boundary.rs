//! Per-B-scan tissue boundary extraction, local thickness, and BMO
//! landmark detection.

use crate::error::{Error, Result};
use crate::geometry::plane::{self, Vec3};
use crate::geometry::volume::{SegmentedVolume, TissueLabel};

/// One boundary sample: the voxel converted to micrometers plus its A-scan
/// index (kept for gap detection).
#[derive(Debug, Clone, Copy)]
pub struct BoundaryPoint {
    pub ascan: usize,
    pub pos: Vec3,
    /// Local tissue thickness; 0 until `compute_thickness` runs.
    pub thickness_um: f64,
    /// False when the opposite boundary was missing.
    pub thickness_valid: bool,
}

/// Anterior and posterior polylines of one tissue in one B-scan.
#[derive(Debug, Clone, Default)]
pub struct TissueBoundary {
    pub anterior: Vec<BoundaryPoint>,
    pub posterior: Vec<BoundaryPoint>,
}

/// All boundaries of a volume, indexed by `[bscan][tissue code - 1]`.
#[derive(Debug, Clone)]
pub struct BoundarySet {
    per_bscan: Vec<Vec<TissueBoundary>>,
}

impl BoundarySet {
    pub fn n_bscans(&self) -> usize {
        self.per_bscan.len()
    }

    pub fn tissue(&self, bscan: usize, tissue: TissueLabel) -> &TissueBoundary {
        &self.per_bscan[bscan][tissue.code() as usize - 1]
    }

    fn tissue_mut(&mut self, bscan: usize, tissue: TissueLabel) -> &mut TissueBoundary {
        &mut self.per_bscan[bscan][tissue.code() as usize - 1]
    }
}

/// Identify, per B-scan and per tissue, the anterior (first along the
/// A-scan) and posterior (last) voxel of each label, in micrometers.
///
/// A-scans with disjoint runs of the same label contribute the first voxel
/// of the first run and the last voxel of the last run. Tissues absent from
/// a B-scan simply leave that entry empty.
pub fn extract_boundaries(vol: &SegmentedVolume) -> BoundarySet {
    let sp = vol.spacing;
    let mut per_bscan = Vec::with_capacity(vol.n_bscans);
    for b in 0..vol.n_bscans {
        let mut tissues: Vec<TissueBoundary> =
            (0..7).map(|_| TissueBoundary::default()).collect();
        let y = b as f64 * sp.between_bscans_um;
        for a in 0..vol.n_ascans {
            let col = vol.column(b, a);
            let x = a as f64 * sp.between_ascans_um;
            // First and last occurrence per tissue code in this column.
            let mut first = [usize::MAX; 8];
            let mut last = [usize::MAX; 8];
            for (z, &code) in col.iter().enumerate() {
                let c = code as usize;
                if c == 0 {
                    continue;
                }
                if first[c] == usize::MAX {
                    first[c] = z;
                }
                last[c] = z;
            }
            for code in 1..8 {
                if first[code] == usize::MAX {
                    continue;
                }
                let mk = |z: usize| BoundaryPoint {
                    ascan: a,
                    pos: [x, y, z as f64 * sp.axial_um],
                    thickness_um: 0.0,
                    thickness_valid: false,
                };
                tissues[code - 1].anterior.push(mk(first[code]));
                tissues[code - 1].posterior.push(mk(last[code]));
            }
        }
        per_bscan.push(tissues);
    }
    BoundarySet { per_bscan }
}

fn in_plane_dist(a: Vec3, b: Vec3) -> f64 {
    let dx = a[0] - b[0];
    let dz = a[2] - b[2];
    (dx * dx + dz * dz).sqrt()
}

/// Annotate every boundary point with a local thickness.
///
/// Anterior points take the distance to the nearest posterior point of the
/// same tissue within the same B-scan plane; posterior points inherit the
/// thickness of their nearest anterior point. Points with no opposite
/// boundary get thickness 0 and a cleared validity flag.
pub fn compute_thickness(bounds: &mut BoundarySet) {
    for b in 0..bounds.n_bscans() {
        for tissue in TissueLabel::TISSUES {
            let tb = bounds.tissue_mut(b, tissue);
            if tb.anterior.is_empty() && tb.posterior.is_empty() {
                continue;
            }
            if tb.posterior.is_empty() || tb.anterior.is_empty() {
                for p in tb.anterior.iter_mut().chain(tb.posterior.iter_mut()) {
                    p.thickness_um = 0.0;
                    p.thickness_valid = false;
                }
                continue;
            }
            let posterior_pos: Vec<Vec3> = tb.posterior.iter().map(|p| p.pos).collect();
            for p in &mut tb.anterior {
                let d = posterior_pos
                    .iter()
                    .map(|q| in_plane_dist(p.pos, *q))
                    .fold(f64::INFINITY, f64::min);
                p.thickness_um = d;
                p.thickness_valid = true;
            }
            let anterior: Vec<(Vec3, f64)> = tb
                .anterior
                .iter()
                .map(|p| (p.pos, p.thickness_um))
                .collect();
            for q in &mut tb.posterior {
                let mut best = f64::INFINITY;
                let mut best_t = 0.0;
                for (pos, t) in &anterior {
                    let d = in_plane_dist(q.pos, *pos);
                    if d < best {
                        best = d;
                        best_t = *t;
                    }
                }
                q.thickness_um = best_t;
                q.thickness_valid = true;
            }
        }
    }
}

/// BMO landmarks: the RPE/BM termination points around the disc, their
/// centroid, and the unit normal of the least-squares BMO plane.
#[derive(Debug, Clone)]
pub struct BmoLandmarks {
    pub bmo_points: Vec<Vec3>,
    pub center: Vec3,
    pub plane_normal: Vec3,
}

/// Locate the BMO points: per B-scan crossing the disc, the innermost
/// termination of the RPE/BM layer on each side of its gap.
pub fn detect_bmo(bounds: &BoundarySet) -> Result<BmoLandmarks> {
    let mut bmo_points = Vec::new();
    for b in 0..bounds.n_bscans() {
        let rpe = &bounds.tissue(b, TissueLabel::RpeBm).anterior;
        if rpe.len() < 2 {
            continue;
        }
        // Largest internal A-scan gap in this B-scan, if any.
        let mut best: Option<(usize, usize, usize)> = None; // (gap, left idx, right idx)
        for i in 0..rpe.len() - 1 {
            let gap = rpe[i + 1].ascan - rpe[i].ascan;
            if gap > 1 {
                let better = match best {
                    Some((g, _, _)) => gap > g,
                    None => true,
                };
                if better {
                    best = Some((gap, i, i + 1));
                }
            }
        }
        if let Some((_, l, r)) = best {
            bmo_points.push(rpe[l].pos);
            bmo_points.push(rpe[r].pos);
        }
    }
    if bmo_points.is_empty() {
        return Err(Error::Extraction(
            "no RPE/BM gap found in any B-scan; scan does not cover the ONH".into(),
        ));
    }
    if bmo_points.len() < 3 {
        return Err(Error::Extraction(format!(
            "only {} BMO points found; cannot fit a plane",
            bmo_points.len()
        )));
    }
    let fit = plane::fit_plane_least_squares(&bmo_points)?;
    Ok(BmoLandmarks {
        center: fit.centroid,
        plane_normal: fit.normal,
        bmo_points,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::volume::Spacing;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha12Rng;

    fn spacing() -> Spacing {
        Spacing {
            between_bscans_um: 100.0,
            between_ascans_um: 30.0,
            axial_um: 3.9,
        }
    }

    #[test]
    fn run_of_labels_gives_first_and_last_voxel_in_um() {
        let mut vol = SegmentedVolume::empty(1, 1, 30, spacing()).unwrap();
        for z in 10..=19 {
            vol.set_label(0, 0, z, TissueLabel::RnflPlt);
        }
        let bounds = extract_boundaries(&vol);
        let tb = bounds.tissue(0, TissueLabel::RnflPlt);
        assert_eq!(tb.anterior.len(), 1);
        assert!((tb.anterior[0].pos[2] - 39.0).abs() < 1e-12);
        assert!((tb.posterior[0].pos[2] - 74.1).abs() < 1e-12);
    }

    #[test]
    fn disjoint_runs_take_first_of_first_and_last_of_last() {
        let mut vol = SegmentedVolume::empty(1, 1, 40, spacing()).unwrap();
        for z in 5..=8 {
            vol.set_label(0, 0, z, TissueLabel::Choroid);
        }
        for z in 20..=25 {
            vol.set_label(0, 0, z, TissueLabel::Choroid);
        }
        let bounds = extract_boundaries(&vol);
        let tb = bounds.tissue(0, TissueLabel::Choroid);
        assert!((tb.anterior[0].pos[2] - 5.0 * 3.9).abs() < 1e-12);
        assert!((tb.posterior[0].pos[2] - 25.0 * 3.9).abs() < 1e-12);
    }

    #[test]
    fn absent_tissue_leaves_empty_entry() {
        let vol = SegmentedVolume::empty(2, 3, 10, spacing()).unwrap();
        let bounds = extract_boundaries(&vol);
        for b in 0..2 {
            for t in TissueLabel::TISSUES {
                assert!(bounds.tissue(b, t).anterior.is_empty());
            }
        }
    }

    #[test]
    fn parallel_flat_boundaries_give_constant_thickness() {
        // Anterior plane at row 10, posterior at row 10 + 120/3.9 is not an
        // integer, so build the slab directly from voxel rows: thickness
        // equals the row distance in micrometers.
        let sp = Spacing {
            between_bscans_um: 100.0,
            between_ascans_um: 30.0,
            axial_um: 4.0,
        };
        let mut vol = SegmentedVolume::empty(2, 10, 50, sp).unwrap();
        for b in 0..2 {
            for a in 0..10 {
                for z in 10..=40 {
                    vol.set_label(b, a, z, TissueLabel::Orl);
                }
            }
        }
        let mut bounds = extract_boundaries(&vol);
        compute_thickness(&mut bounds);
        for b in 0..2 {
            let tb = bounds.tissue(b, TissueLabel::Orl);
            for p in tb.anterior.iter().chain(tb.posterior.iter()) {
                assert!((p.thickness_um - 120.0).abs() < 1e-9, "{}", p.thickness_um);
                assert!(p.thickness_valid);
            }
        }
    }

    fn point(ascan: usize, pos: Vec3) -> BoundaryPoint {
        BoundaryPoint {
            ascan,
            pos,
            thickness_um: 0.0,
            thickness_valid: false,
        }
    }

    fn single_tissue_bounds(tissue: TissueLabel, tb: TissueBoundary) -> BoundarySet {
        let mut tissues: Vec<TissueBoundary> =
            (0..7).map(|_| TissueBoundary::default()).collect();
        tissues[tissue.code() as usize - 1] = tb;
        BoundarySet {
            per_bscan: vec![tissues],
        }
    }

    #[test]
    fn three_four_five_offset_thickness() {
        // Single anterior and single posterior point offset by (30, 0, 40)
        // in the B-scan plane: thickness 50 on both.
        let mut bounds = single_tissue_bounds(
            TissueLabel::Lc,
            TissueBoundary {
                anterior: vec![point(0, [0.0, 0.0, 0.0])],
                posterior: vec![point(1, [30.0, 0.0, 40.0])],
            },
        );
        compute_thickness(&mut bounds);
        let tb = bounds.tissue(0, TissueLabel::Lc);
        assert_eq!(tb.anterior[0].thickness_um, 50.0);
        assert!(tb.anterior[0].thickness_valid);
        assert_eq!(tb.posterior[0].thickness_um, 50.0);
    }

    #[test]
    fn missing_opposite_boundary_flags_zero_thickness() {
        let mut bounds = single_tissue_bounds(
            TissueLabel::Sclera,
            TissueBoundary {
                anterior: vec![point(0, [0.0, 0.0, 0.0]), point(1, [30.0, 0.0, 0.0])],
                posterior: vec![],
            },
        );
        compute_thickness(&mut bounds);
        let tb = bounds.tissue(0, TissueLabel::Sclera);
        for p in &tb.anterior {
            assert_eq!(p.thickness_um, 0.0);
            assert!(!p.thickness_valid);
        }
    }

    #[test]
    fn thickness_matches_brute_force_oracle_exactly() {
        let mut rng = ChaCha12Rng::seed_from_u64(9);
        let sp = spacing();
        let mut vol = SegmentedVolume::empty(3, 40, 80, sp).unwrap();
        for b in 0..3 {
            for a in 0..40 {
                let top = rng.random_range(5..30);
                let bottom = top + rng.random_range(1..30);
                for z in top..=bottom {
                    vol.set_label(b, a, z, TissueLabel::GclIpl);
                }
            }
        }
        let mut bounds = extract_boundaries(&vol);
        compute_thickness(&mut bounds);
        for b in 0..3 {
            let tb = bounds.tissue(b, TissueLabel::GclIpl);
            for p in &tb.anterior {
                let want = tb
                    .posterior
                    .iter()
                    .map(|q| super::in_plane_dist(p.pos, q.pos))
                    .fold(f64::INFINITY, f64::min);
                assert_eq!(p.thickness_um, want);
            }
            for q in &tb.posterior {
                let mut best = f64::INFINITY;
                let mut best_t = 0.0;
                for p in &tb.anterior {
                    let d = super::in_plane_dist(q.pos, p.pos);
                    if d < best {
                        best = d;
                        best_t = p.thickness_um;
                    }
                }
                assert_eq!(q.thickness_um, best_t);
            }
        }
    }

    /// Build an RPE annulus: labels present where the in-plane radius from
    /// `center` exceeds `hole_r` (elliptical via `ry`).
    fn annulus_volume(center: (f64, f64), hole_rx: f64, hole_ry: f64) -> SegmentedVolume {
        let sp = spacing();
        let mut vol = SegmentedVolume::empty(40, 120, 12, sp).unwrap();
        for b in 0..40 {
            let y = b as f64 * sp.between_bscans_um;
            for a in 0..120 {
                let x = a as f64 * sp.between_ascans_um;
                let u = (x - center.0) / hole_rx;
                let v = (y - center.1) / hole_ry;
                if u * u + v * v > 1.0 {
                    vol.set_label(b, a, 5, TissueLabel::RpeBm);
                }
            }
        }
        vol
    }

    #[test]
    fn circular_hole_bmo_points_on_circle_and_centroid_at_center() {
        let center = (1800.0, 2000.0);
        let r = 750.0;
        let vol = annulus_volume(center, r, r);
        let bounds = extract_boundaries(&vol);
        let lm = detect_bmo(&bounds).unwrap();
        let voxel = vol.spacing.between_ascans_um.max(vol.spacing.between_bscans_um);
        for p in &lm.bmo_points {
            let d = ((p[0] - center.0).powi(2) + (p[1] - center.1).powi(2)).sqrt();
            assert!((d - r).abs() <= voxel, "point {p:?} at radius {d}");
        }
        assert!((lm.center[0] - center.0).abs() <= voxel);
        assert!((lm.center[1] - center.1).abs() <= voxel);
        assert!((plane::norm3(lm.plane_normal) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn elliptical_hole_centroid_near_center() {
        let center = (1750.0, 1900.0);
        let vol = annulus_volume(center, 900.0, 600.0);
        let bounds = extract_boundaries(&vol);
        let lm = detect_bmo(&bounds).unwrap();
        let voxel = vol.spacing.between_ascans_um.max(vol.spacing.between_bscans_um);
        assert!((lm.center[0] - center.0).abs() <= voxel);
        assert!((lm.center[1] - center.1).abs() <= voxel);
    }

    #[test]
    fn rpe_without_gap_is_an_extraction_error() {
        let sp = spacing();
        let mut vol = SegmentedVolume::empty(10, 30, 12, sp).unwrap();
        for b in 0..10 {
            for a in 0..30 {
                vol.set_label(b, a, 5, TissueLabel::RpeBm);
            }
        }
        let bounds = extract_boundaries(&vol);
        assert!(matches!(detect_bmo(&bounds), Err(Error::Extraction(_))));
    }
}
