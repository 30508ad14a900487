//! Point-cloud augmentation and the deterministic evaluation input path.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::OnhPointCloud;
use crate::nn::normal;
use crate::synth::mix_seed;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct AugmentationConfig {
    /// Points fed to the model after subsampling.
    pub points_per_cloud: usize,
    /// Maximum azimuthal wedge removed by the random sector crop (degrees).
    pub sector_max_deg: f64,
    /// Random rotation ranges (degrees): azimuth about z, then tilt about x.
    pub azimuth_max_deg: f64,
    pub tilt_max_deg: f64,
    /// Additive Gaussian noise on x, y, z (not thickness), micrometers.
    pub noise_sigma_um: f64,
    pub enable_sector_crop: bool,
    pub enable_rotation: bool,
    pub enable_subsample: bool,
    pub enable_noise: bool,
}

impl Default for AugmentationConfig {
    fn default() -> Self {
        Self {
            points_per_cloud: 1024,
            sector_max_deg: 45.0,
            azimuth_max_deg: 15.0,
            tilt_max_deg: 5.0,
            noise_sigma_um: 5.0,
            enable_sector_crop: true,
            enable_rotation: true,
            enable_subsample: true,
            enable_noise: true,
        }
    }
}

impl AugmentationConfig {
    pub fn validate(&self) -> Result<()> {
        if self.points_per_cloud == 0 {
            return Err(Error::Config("points_per_cloud must be positive".into()));
        }
        if self.noise_sigma_um < 0.0 {
            return Err(Error::Config("negative noise sigma".into()));
        }
        for (name, v) in [
            ("sector_max_deg", self.sector_max_deg),
            ("azimuth_max_deg", self.azimuth_max_deg),
            ("tilt_max_deg", self.tilt_max_deg),
        ] {
            if !(0.0..=360.0).contains(&v) {
                return Err(Error::Config(format!("{name} = {v} outside [0, 360]")));
            }
        }
        Ok(())
    }
}

/// Model-ready features plus the mapping back to original cloud indices.
#[derive(Debug, Clone)]
pub struct ModelInput {
    /// N x 4 normalized (x, y, z, thickness).
    pub features: Tensor,
    /// Row -> index into the source cloud's point list.
    pub source_indices: Vec<usize>,
}

fn rotate(pos: [f64; 3], azimuth_rad: f64, tilt_rad: f64) -> [f64; 3] {
    // Azimuth about z, then tilt about x.
    let (sa, ca) = azimuth_rad.sin_cos();
    let p = [
        ca * pos[0] - sa * pos[1],
        sa * pos[0] + ca * pos[1],
        pos[2],
    ];
    let (st, ct) = tilt_rad.sin_cos();
    [p[0], ct * p[1] - st * p[2], st * p[1] + ct * p[2]]
}

fn build_features(
    cloud: &OnhPointCloud,
    indices: &[usize],
    rotation: Option<(f64, f64)>,
    noise: Option<(f64, &mut ChaCha12Rng)>,
    scales: (f64, f64),
) -> Tensor {
    let (spatial_scale, thickness_scale) = scales;
    let mut data = Vec::with_capacity(indices.len() * 4);
    let mut noise_state = noise;
    for &i in indices {
        let p = &cloud.points[i];
        let mut pos = p.pos;
        if let Some((az, tilt)) = rotation {
            pos = rotate(pos, az, tilt);
        }
        if let Some((sigma, rng)) = &mut noise_state {
            if *sigma > 0.0 {
                pos[0] += *sigma * normal(rng);
                pos[1] += *sigma * normal(rng);
                pos[2] += *sigma * normal(rng);
            }
        }
        data.push(pos[0] / spatial_scale);
        data.push(pos[1] / spatial_scale);
        data.push(pos[2] / spatial_scale);
        data.push(p.thickness_um / thickness_scale);
    }
    Tensor::new(vec![indices.len(), 4], data).expect("feature shape")
}

/// Subsample exactly `n` of `indices` without replacement (partial
/// Fisher-Yates); identity when `n == indices.len()`.
fn subsample(indices: &mut Vec<usize>, n: usize, rng: &mut ChaCha12Rng) {
    if n >= indices.len() {
        return;
    }
    for i in 0..n {
        let j = rng.random_range(i..indices.len());
        indices.swap(i, j);
    }
    indices.truncate(n);
}

/// Training augmentation: sector crop, rigid rotation (azimuth then tilt),
/// uniform subsample to exactly N points, Gaussian noise on x/y/z, fixed
/// normalization. A crop that leaves too few points is retried with a
/// halved sector before the sample is skipped.
pub fn augment(
    cloud: &OnhPointCloud,
    cfg: &AugmentationConfig,
    scales: (f64, f64),
    rng: &mut ChaCha12Rng,
) -> Result<ModelInput> {
    cfg.validate()?;
    let n = cfg.points_per_cloud;
    let all: Vec<usize> = (0..cloud.points.len()).collect();

    let mut kept = all.clone();
    if cfg.enable_sector_crop && cfg.sector_max_deg > 0.0 {
        let mut ok = false;
        for attempt in 0..4 {
            let width = (cfg.sector_max_deg.to_radians() / f64::powi(2.0, attempt))
                * rng.random::<f64>();
            let start = rng.random_range(-std::f64::consts::PI..std::f64::consts::PI);
            let candidate: Vec<usize> = all
                .iter()
                .copied()
                .filter(|&i| {
                    let p = &cloud.points[i].pos;
                    let mut a = p[1].atan2(p[0]) - start;
                    a = a.rem_euclid(std::f64::consts::TAU);
                    a >= width
                })
                .collect();
            if candidate.len() >= n {
                kept = candidate;
                ok = true;
                break;
            }
        }
        if !ok {
            return Err(Error::SkipSample(format!(
                "scan {:?}: fewer than {n} points left after sector crop",
                cloud.scan_id
            )));
        }
    } else if kept.len() < n {
        return Err(Error::SkipSample(format!(
            "scan {:?}: {} points, need {n}",
            cloud.scan_id,
            kept.len()
        )));
    }

    let rotation = if cfg.enable_rotation {
        let az = cfg.azimuth_max_deg.to_radians();
        let tilt = cfg.tilt_max_deg.to_radians();
        Some((
            rng.random_range(-az..=az),
            rng.random_range(-tilt..=tilt),
        ))
    } else {
        None
    };

    if cfg.enable_subsample {
        if kept.len() < n {
            return Err(Error::SkipSample(format!(
                "scan {:?}: {} points, need {n}",
                cloud.scan_id,
                kept.len()
            )));
        }
        subsample(&mut kept, n, rng);
    }

    let sigma = if cfg.enable_noise { cfg.noise_sigma_um } else { 0.0 };
    let features = build_features(cloud, &kept, rotation, Some((sigma, rng)), scales);
    Ok(ModelInput {
        features,
        source_indices: kept,
    })
}

/// Evaluation path: deterministic per-scan subsample (seeded by the scan
/// id) plus normalization, nothing else.
pub fn eval_input(
    cloud: &OnhPointCloud,
    points_per_cloud: usize,
    scales: (f64, f64),
) -> ModelInput {
    let mut indices: Vec<usize> = (0..cloud.points.len()).collect();
    if indices.len() > points_per_cloud {
        let mut rng = ChaCha12Rng::seed_from_u64(mix_seed(0xE7A1, fnv1a(&cloud.scan_id)));
        subsample(&mut indices, points_per_cloud, &mut rng);
        indices.sort_unstable();
    }
    let features = build_features(cloud, &indices, None, None, scales);
    ModelInput {
        features,
        source_indices: indices,
    }
}

/// FNV-1a over the scan id; stable across runs and platforms.
pub fn fnv1a(s: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in s.as_bytes() {
        h ^= *b as u64;
        h = h.wrapping_mul(0x1000_0000_01b3);
    }
    h
}
