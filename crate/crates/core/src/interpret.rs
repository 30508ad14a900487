//! Critical-point extraction from max-pool provenance, cross-scan pooling,
//! neighborhood density maps, quadrant statistics, and projection exports.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::autodiff::Tape;
use crate::error::{Error, Result};
use crate::geometry::{OnhPointCloud, TissueLabel};
use crate::model::AnyModel;
use crate::nn::Mode;
use crate::pointnet::POOL_DIM;
use crate::train::eval_input;

/// One critical point: chosen by at least one max-pool channel.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CriticalPoint {
    /// Index into the original cloud's point list.
    pub cloud_index: usize,
    /// Micrometer coordinates in the aligned BMO frame.
    pub pos: [f64; 3],
    pub tissue: TissueLabel,
    /// Number of pool channels that selected this point.
    pub channel_count: usize,
}

/// Critical points of one scan. Distinct points never exceed the pool
/// width and their channel counts sum to exactly the pool width.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CriticalPointSet {
    pub scan_id: String,
    pub points: Vec<CriticalPoint>,
}

impl CriticalPointSet {
    pub fn channel_total(&self) -> usize {
        self.points.iter().map(|p| p.channel_count).sum()
    }
}

/// Run the evaluation path and map the max-pool argmax rows back to
/// original cloud points in micrometers.
pub fn extract_critical_points(
    model: &AnyModel,
    cloud: &OnhPointCloud,
    points_per_cloud: usize,
) -> Result<CriticalPointSet> {
    let input = eval_input(cloud, points_per_cloud, model.scales_um());
    let tape = Tape::new();
    let pass = model.forward(&tape, &input.features, Mode::Eval)?;
    if pass.pool_argmax.len() != POOL_DIM {
        return Err(Error::Model(format!(
            "pool exposed {} channels, expected {POOL_DIM}",
            pass.pool_argmax.len()
        )));
    }
    let mut counts: BTreeMap<usize, usize> = BTreeMap::new();
    for &row in &pass.pool_argmax {
        *counts.entry(row).or_insert(0) += 1;
    }
    let points = counts
        .into_iter()
        .map(|(row, channel_count)| {
            let cloud_index = input.source_indices[row];
            let p = &cloud.points[cloud_index];
            CriticalPoint {
                cloud_index,
                pos: p.pos,
                tissue: p.tissue,
                channel_count,
            }
        })
        .collect();
    Ok(CriticalPointSet {
        scan_id: cloud.scan_id.clone(),
        points,
    })
}

/// A pooled critical point with scan provenance.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PooledPoint {
    pub scan_id: String,
    pub pos: [f64; 3],
    pub tissue: TissueLabel,
    pub channel_count: usize,
}

/// Concatenate per-scan critical points in aligned coordinates.
pub fn pool_critical_points(sets: &[CriticalPointSet]) -> Vec<PooledPoint> {
    let mut pooled = Vec::new();
    for set in sets {
        for p in &set.points {
            pooled.push(PooledPoint {
                scan_id: set.scan_id.clone(),
                pos: p.pos,
                tissue: p.tissue,
                channel_count: p.channel_count,
            });
        }
    }
    pooled
}

/// Density map: per point, the number of points (itself included) within
/// `radius_um`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DensityMap {
    pub radius_um: f64,
    pub points: Vec<PooledPoint>,
    pub density: Vec<usize>,
}

pub fn density(points: &[PooledPoint], radius_um: f64) -> Result<DensityMap> {
    if !(radius_um > 0.0) {
        return Err(Error::Input(format!("non-positive radius {radius_um}")));
    }
    let r2 = radius_um * radius_um;
    let n = points.len();
    let mut density = vec![0usize; n];
    for i in 0..n {
        for j in i..n {
            let a = points[i].pos;
            let b = points[j].pos;
            let d2 = (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2);
            if d2 <= r2 {
                density[i] += 1;
                if j != i {
                    density[j] += 1;
                }
            }
        }
    }
    Ok(DensityMap {
        radius_um,
        points: points.to_vec(),
        density,
    })
}

/// Anatomical quadrant in the aligned left-eye frame; 90-degree sectors
/// centered on the +y (superior), -y (inferior), +x (nasal) and -x
/// (temporal) axes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Quadrant {
    Superior,
    Inferior,
    Nasal,
    Temporal,
}

pub fn quadrant_of(x: f64, y: f64) -> Quadrant {
    let angle = y.atan2(x).to_degrees();
    if (45.0..135.0).contains(&angle) {
        Quadrant::Superior
    } else if (-135.0..-45.0).contains(&angle) {
        Quadrant::Inferior
    } else if (-45.0..45.0).contains(&angle) {
        Quadrant::Nasal
    } else {
        Quadrant::Temporal
    }
}

#[derive(Debug, Clone, Copy, Default, Serialize, Deserialize)]
pub struct QuadrantEntry {
    pub count: usize,
    pub density_mass: usize,
}

#[derive(Debug, Clone, Copy, Default, Serialize, Deserialize)]
pub struct QuadrantStats {
    pub superior: QuadrantEntry,
    pub inferior: QuadrantEntry,
    pub nasal: QuadrantEntry,
    pub temporal: QuadrantEntry,
}

impl QuadrantStats {
    pub fn entry_mut(&mut self, q: Quadrant) -> &mut QuadrantEntry {
        match q {
            Quadrant::Superior => &mut self.superior,
            Quadrant::Inferior => &mut self.inferior,
            Quadrant::Nasal => &mut self.nasal,
            Quadrant::Temporal => &mut self.temporal,
        }
    }
}

pub fn quadrant_stats(map: &DensityMap) -> QuadrantStats {
    let mut stats = QuadrantStats::default();
    for (p, &d) in map.points.iter().zip(map.density.iter()) {
        let entry = stats.entry_mut(quadrant_of(p.pos[0], p.pos[1]));
        entry.count += 1;
        entry.density_mass += d;
    }
    stats
}

/// Flat projection of the density map onto two coordinates.
fn projection_csv(map: &DensityMap, ax: usize, ay: usize, names: (&str, &str)) -> String {
    let mut out = format!("{}_um,{}_um,density,scan_id\n", names.0, names.1);
    for (p, &d) in map.points.iter().zip(map.density.iter()) {
        out.push_str(&format!(
            "{},{},{},{}\n",
            p.pos[ax], p.pos[ay], d, p.scan_id
        ));
    }
    out
}

/// Max-binned grid of the projection for rendering.
pub struct ProjectionGrid {
    pub width: usize,
    pub height: usize,
    pub bin_um: f64,
    pub min_x: f64,
    pub min_y: f64,
    /// Max per-point density per bin; 0 for empty bins.
    pub bins: Vec<usize>,
}

pub fn project_to_grid(map: &DensityMap, ax: usize, ay: usize, bin_um: f64) -> ProjectionGrid {
    let xs: Vec<f64> = map.points.iter().map(|p| p.pos[ax]).collect();
    let ys: Vec<f64> = map.points.iter().map(|p| p.pos[ay]).collect();
    let min_x = xs.iter().cloned().fold(f64::INFINITY, f64::min);
    let max_x = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let min_y = ys.iter().cloned().fold(f64::INFINITY, f64::min);
    let max_y = ys.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let width = (((max_x - min_x) / bin_um).floor() as usize + 1).max(1);
    let height = (((max_y - min_y) / bin_um).floor() as usize + 1).max(1);
    let mut bins = vec![0usize; width * height];
    for ((&x, &y), &d) in xs.iter().zip(ys.iter()).zip(map.density.iter()) {
        let bx = ((x - min_x) / bin_um).floor() as usize;
        let by = ((y - min_y) / bin_um).floor() as usize;
        let slot = &mut bins[by.min(height - 1) * width + bx.min(width - 1)];
        *slot = (*slot).max(d);
    }
    ProjectionGrid {
        width,
        height,
        bin_um,
        min_x,
        min_y,
        bins,
    }
}

/// Five-stop heat colormap (dark blue to yellow), linearly interpolated.
fn heat_color(t: f64) -> [u8; 3] {
    const STOPS: [[f64; 3]; 5] = [
        [13.0, 8.0, 135.0],
        [126.0, 3.0, 168.0],
        [204.0, 71.0, 120.0],
        [248.0, 149.0, 64.0],
        [240.0, 249.0, 33.0],
    ];
    let t = t.clamp(0.0, 1.0) * (STOPS.len() - 1) as f64;
    let i = (t.floor() as usize).min(STOPS.len() - 2);
    let f = t - i as f64;
    let mut rgb = [0u8; 3];
    for c in 0..3 {
        rgb[c] = (STOPS[i][c] + f * (STOPS[i + 1][c] - STOPS[i][c])).round() as u8;
    }
    rgb
}

fn write_grid_png(path: &Path, grid: &ProjectionGrid) -> Result<()> {
    let max_d = grid.bins.iter().copied().max().unwrap_or(0).max(1);
    let mut rgb = Vec::with_capacity(grid.width * grid.height * 3);
    // PNG rows run top to bottom; flip so +y points up in the image.
    for row in (0..grid.height).rev() {
        for col in 0..grid.width {
            let d = grid.bins[row * grid.width + col];
            if d == 0 {
                rgb.extend_from_slice(&[0, 0, 0]);
            } else {
                rgb.extend_from_slice(&heat_color(d as f64 / max_d as f64));
            }
        }
    }
    let file = fs::File::create(path)?;
    let mut encoder = png::Encoder::new(file, grid.width as u32, grid.height as u32);
    encoder.set_color(png::ColorType::Rgb);
    encoder.set_depth(png::BitDepth::Eight);
    let mut writer = encoder
        .write_header()
        .map_err(|e| Error::Format(format!("png header: {e}")))?;
    writer
        .write_image_data(&rgb)
        .map_err(|e| Error::Format(format!("png body: {e}")))?;
    Ok(())
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ProjectionSidecar {
    pub colormap: String,
    pub bin_um: f64,
    pub radius_um: f64,
    pub width_px: usize,
    pub height_px: usize,
    pub min_x_um: f64,
    pub min_y_um: f64,
}

/// Write the en-face (x, y) and sagittal (x, z) views of a density map:
/// exact CSVs plus binned PNG renderings with JSON sidecars.
pub fn export_projections(map: &DensityMap, dir: &Path, bin_um: f64) -> Result<()> {
    if map.points.is_empty() {
        return Err(Error::Input("empty density map".into()));
    }
    fs::create_dir_all(dir)?;
    let views = [("enface", 0usize, 1usize, ("x", "y")), ("sagittal", 0, 2, ("x", "z"))];
    for (name, ax, ay, names) in views {
        fs::write(
            dir.join(format!("{name}.csv")),
            projection_csv(map, ax, ay, names),
        )?;
        let grid = project_to_grid(map, ax, ay, bin_um);
        write_grid_png(&dir.join(format!("{name}.png")), &grid)?;
        let sidecar = ProjectionSidecar {
            colormap: "five-stop-heat".into(),
            bin_um,
            radius_um: map.radius_um,
            width_px: grid.width,
            height_px: grid.height,
            min_x_um: grid.min_x,
            min_y_um: grid.min_y,
        };
        fs::write(
            dir.join(format!("{name}.json")),
            serde_json::to_string_pretty(&sidecar).map_err(|e| Error::Format(e.to_string()))?,
        )?;
    }
    Ok(())
}

/// Per-scan critical point table.
pub fn critical_points_csv(sets: &[CriticalPointSet]) -> String {
    let mut out = String::from("scan_id,point_index,x_um,y_um,z_um,tissue,channel_count\n");
    for set in sets {
        for p in &set.points {
            out.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                set.scan_id, p.cloud_index, p.pos[0], p.pos[1], p.pos[2],
                p.tissue.name(), p.channel_count
            ));
        }
    }
    out
}

pub fn density_csv(map: &DensityMap) -> String {
    let mut out = String::from("x_um,y_um,z_um,density,scan_id\n");
    for (p, &d) in map.points.iter().zip(map.density.iter()) {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            p.pos[0], p.pos[1], p.pos[2], d, p.scan_id
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{BoundarySide, ClassLabel, CloudPoint};
    use crate::model::ModelFamily;
    use crate::pointnet::PointNetConfig;
    use crate::dgcnn::DgcnnConfig;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha12Rng;

    fn cloud(n: usize, seed: u64) -> OnhPointCloud {
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        OnhPointCloud {
            subject_id: "s".into(),
            scan_id: format!("s_{seed}"),
            class_label: ClassLabel::Unlabeled,
            points: (0..n)
                .map(|_| CloudPoint {
                    pos: [
                        rng.random_range(-1500.0..1500.0),
                        rng.random_range(-1500.0..1500.0),
                        rng.random_range(-200.0..200.0),
                    ],
                    thickness_um: rng.random_range(10.0..300.0),
                    tissue: TissueLabel::RnflPlt,
                    side: BoundarySide::Anterior,
                })
                .collect(),
        }
    }

    fn tiny_models() -> (AnyModel, AnyModel) {
        let pn = PointNetConfig {
            tnet_mlp_widths: vec![8],
            tnet_fc_widths: vec![8],
            mlp_widths: vec![32, 256],
            fc_widths: vec![8],
            min_points: 1,
            dropout: 0.0,
            ..Default::default()
        };
        let dg = DgcnnConfig {
            k: 4,
            edge_widths: vec![8, 8],
            fc_widths: vec![8],
            dropout: 0.0,
            ..Default::default()
        };
        (
            AnyModel::init(ModelFamily::PointNet, &pn, &dg, 3).unwrap(),
            AnyModel::init(ModelFamily::Dgcnn, &pn, &dg, 3).unwrap(),
        )
    }

    #[test]
    fn one_point_cloud_yields_one_critical_point_with_all_channels() {
        let (pn, _) = tiny_models();
        let c = cloud(1, 1);
        let set = extract_critical_points(&pn, &c, 64).unwrap();
        assert_eq!(set.points.len(), 1);
        assert_eq!(set.points[0].channel_count, POOL_DIM);
        assert_eq!(set.channel_total(), POOL_DIM);
        assert_eq!(set.points[0].pos, c.points[0].pos);
    }

    #[test]
    fn distinct_points_bounded_and_channels_sum_to_pool_width() {
        let (pn, dg) = tiny_models();
        for (model, seed) in [(&pn, 10u64), (&dg, 11u64)] {
            for n in [16usize, 40, 300] {
                let c = cloud(n, seed + n as u64);
                let set = extract_critical_points(model, &c, 64).unwrap();
                assert!(set.points.len() <= POOL_DIM);
                assert_eq!(set.channel_total(), POOL_DIM);
                for p in &set.points {
                    assert!(p.cloud_index < c.len());
                }
            }
        }
    }

    #[test]
    fn permuted_cloud_gives_same_critical_coordinates() {
        let (pn, dg) = tiny_models();
        let c = cloud(30, 21);
        let mut rng = ChaCha12Rng::seed_from_u64(5);
        let mut perm: Vec<usize> = (0..30).collect();
        use rand::seq::SliceRandom;
        perm.shuffle(&mut rng);
        let permuted = OnhPointCloud {
            points: perm.iter().map(|&i| c.points[i]).collect(),
            ..c.clone()
        };
        for model in [&pn, &dg] {
            // Feed whole clouds so the eval subsample is the identity.
            let a = extract_critical_points(model, &c, 30).unwrap();
            let b = extract_critical_points(model, &permuted, 30).unwrap();
            let mut pa: Vec<[u64; 3]> = a.points.iter().map(|p| p.pos.map(f64::to_bits)).collect();
            let mut pb: Vec<[u64; 3]> = b.points.iter().map(|p| p.pos.map(f64::to_bits)).collect();
            pa.sort_unstable();
            pb.sort_unstable();
            assert_eq!(pa, pb);
        }
    }

    #[test]
    fn pooling_concatenates_and_is_order_irrelevant_for_density() {
        let (pn, _) = tiny_models();
        let c1 = cloud(25, 31);
        let c2 = cloud(25, 32);
        let s1 = extract_critical_points(&pn, &c1, 25).unwrap();
        let s2 = extract_critical_points(&pn, &c2, 25).unwrap();
        let one = pool_critical_points(&[s1.clone()]);
        assert_eq!(one.len(), s1.points.len());
        let both = pool_critical_points(&[s1.clone(), s2.clone()]);
        assert_eq!(both.len(), s1.points.len() + s2.points.len());
        let swapped = pool_critical_points(&[s2, s1]);
        let d1 = density(&both, 75.0).unwrap();
        let d2 = density(&swapped, 75.0).unwrap();
        let mut m1: Vec<(u64, usize)> = d1
            .points
            .iter()
            .zip(d1.density.iter())
            .map(|(p, &d)| (p.pos[0].to_bits() ^ p.pos[1].to_bits(), d))
            .collect();
        let mut m2: Vec<(u64, usize)> = d2
            .points
            .iter()
            .zip(d2.density.iter())
            .map(|(p, &d)| (p.pos[0].to_bits() ^ p.pos[1].to_bits(), d))
            .collect();
        m1.sort_unstable();
        m2.sort_unstable();
        assert_eq!(m1, m2);
    }

    fn pooled(points: Vec<[f64; 3]>) -> Vec<PooledPoint> {
        points
            .into_iter()
            .map(|pos| PooledPoint {
                scan_id: "s".into(),
                pos,
                tissue: TissueLabel::RnflPlt,
                channel_count: 1,
            })
            .collect()
    }

    #[test]
    fn density_radius_rule() {
        let pts = pooled(vec![[0.0, 0.0, 0.0]]);
        let d = density(&pts, 75.0).unwrap();
        assert_eq!(d.density, vec![1]);

        let pts = pooled(vec![[0.0, 0.0, 0.0], [50.0, 0.0, 0.0]]);
        let d = density(&pts, 75.0).unwrap();
        assert_eq!(d.density, vec![2, 2]);

        let pts = pooled(vec![[0.0, 0.0, 0.0], [80.0, 0.0, 0.0]]);
        let d = density(&pts, 75.0).unwrap();
        assert_eq!(d.density, vec![1, 1]);
    }

    #[test]
    fn density_matches_brute_force_oracle_and_is_symmetric() {
        let mut rng = ChaCha12Rng::seed_from_u64(77);
        let pts = pooled(
            (0..500)
                .map(|_| {
                    [
                        rng.random_range(-400.0..400.0),
                        rng.random_range(-400.0..400.0),
                        rng.random_range(-400.0..400.0),
                    ]
                })
                .collect(),
        );
        let d = density(&pts, 75.0).unwrap();
        for i in 0..pts.len() {
            let mut want = 0;
            for j in 0..pts.len() {
                let a = pts[i].pos;
                let b = pts[j].pos;
                let dist =
                    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt();
                if dist <= 75.0 {
                    want += 1;
                }
            }
            assert_eq!(d.density[i], want, "point {i}");
        }
    }

    #[test]
    fn quadrant_convention() {
        assert_eq!(quadrant_of(0.0, 1000.0), Quadrant::Superior);
        assert_eq!(quadrant_of(0.0, -1000.0), Quadrant::Inferior);
        assert_eq!(quadrant_of(1000.0, 0.0), Quadrant::Nasal);
        assert_eq!(quadrant_of(-1000.0, 0.0), Quadrant::Temporal);
        let pts = pooled(vec![
            [0.0, 500.0, 0.0],
            [0.0, -500.0, 0.0],
            [500.0, 0.0, 0.0],
            [-500.0, 0.0, 0.0],
        ]);
        let stats = quadrant_stats(&density(&pts, 75.0).unwrap());
        assert_eq!(stats.superior.count, 1);
        assert_eq!(stats.inferior.count, 1);
        assert_eq!(stats.nasal.count, 1);
        assert_eq!(stats.temporal.count, 1);
    }

    #[test]
    fn csv_row_counts_and_determinism() {
        let (pn, _) = tiny_models();
        let c = cloud(40, 51);
        let set = extract_critical_points(&pn, &c, 40).unwrap();
        let pooled = pool_critical_points(&[set.clone()]);
        let map = density(&pooled, 75.0).unwrap();
        let csv1 = density_csv(&map);
        let csv2 = density_csv(&map);
        assert_eq!(csv1, csv2);
        assert_eq!(csv1.lines().count(), map.points.len() + 1);
        let ccsv = critical_points_csv(&[set.clone()]);
        assert_eq!(ccsv.lines().count(), set.points.len() + 1);
    }

    #[test]
    fn grid_max_binning_matches_per_point_max() {
        let pts = pooled(vec![
            [0.0, 0.0, 0.0],
            [10.0, 5.0, 0.0],
            [200.0, 200.0, 0.0],
        ]);
        let map = density(&pts, 75.0).unwrap();
        let grid = project_to_grid(&map, 0, 1, 50.0);
        // The bin holding the first two points carries their max density.
        let bx = ((0.0 - grid.min_x) / 50.0) as usize;
        let by = ((0.0 - grid.min_y) / 50.0) as usize;
        let want = map.density[0].max(map.density[1]);
        assert_eq!(grid.bins[by * grid.width + bx], want);
        let total_nonzero = grid.bins.iter().filter(|&&b| b > 0).count();
        assert_eq!(total_nonzero, 2);
    }

    #[test]
    fn export_projection_files_deterministic() {
        let dir = tempfile::tempdir().unwrap();
        let mut rng = ChaCha12Rng::seed_from_u64(90);
        let pts = pooled(
            (0..100)
                .map(|_| {
                    [
                        rng.random_range(-1000.0..1000.0),
                        rng.random_range(-1000.0..1000.0),
                        rng.random_range(-200.0..200.0),
                    ]
                })
                .collect(),
        );
        let map = density(&pts, 75.0).unwrap();
        let d1 = dir.path().join("a");
        let d2 = dir.path().join("b");
        export_projections(&map, &d1, 50.0).unwrap();
        export_projections(&map, &d2, 50.0).unwrap();
        for f in ["enface.csv", "enface.png", "sagittal.csv", "sagittal.png"] {
            let a = fs::read(d1.join(f)).unwrap();
            let b = fs::read(d2.join(f)).unwrap();
            assert_eq!(a, b, "{f}");
            assert!(!a.is_empty());
        }
        let rows = fs::read_to_string(d1.join("enface.csv")).unwrap();
        assert_eq!(rows.lines().count(), map.points.len() + 1);
    }
}
