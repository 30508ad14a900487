//! Parametric synthetic ONH generator.
//!
//! Produces labeled volumes with stacked smooth tissue surfaces over the
//! scan footprint, a circular BMO gap in the RPE/BM sheet, a prelamina cup
//! and an LC plug inside the canal. The glaucoma class applies an
//! angularly modulated RNFL thinning (strongest at the superior and
//! inferior poles), deepens the cup and shifts the LC posteriorly, so a
//! classifier trained on these volumes has a known causal signal to find.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{ClassLabel, EyeSide, SegmentedVolume, Spacing, TissueLabel};

/// Inclusive sampling range.
pub type Range = (f64, f64);

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub n_bscans: usize,
    pub n_ascans: usize,
    pub n_axial: usize,
    pub spacing: Spacing,
    /// Radius of the circular BMO gap.
    pub bmo_radius_um: Range,
    /// Baseline depth of the inner limiting membrane below the volume top.
    pub ilm_depth_um: Range,
    pub rnfl_thickness_um: Range,
    pub gcl_ipl_thickness_um: Range,
    pub orl_thickness_um: Range,
    pub rpe_thickness_um: Range,
    pub choroid_thickness_um: Range,
    pub sclera_thickness_um: Range,
    pub lc_thickness_um: Range,
    /// Depth of the LC top below the ILM baseline, inside the canal.
    pub prelamina_depth_um: Range,
    pub cup_depth_um: Range,
    /// Cup gaussian width as a fraction of the BMO radius.
    pub cup_width_frac: Range,
    /// Lateral jitter of the ONH center around the footprint center.
    pub onh_center_jitter_um: f64,
    /// Per-scan surface tilt: each in-plane slope drawn from +-this value.
    pub tilt_max_slope: f64,
    /// Glaucoma: fraction of RNFL thickness removed at the poles.
    pub glaucoma_rnfl_thinning: Range,
    pub glaucoma_cup_deepening_um: Range,
    pub glaucoma_lc_shift_um: Range,
    /// Smooth surface jitter amplitudes.
    pub subject_jitter_um: f64,
    pub scan_jitter_um: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_bscans: 48,
            n_ascans: 96,
            n_axial: 160,
            spacing: Spacing {
                between_bscans_um: 96.0,
                between_ascans_um: 48.0,
                axial_um: 11.5,
            },
            bmo_radius_um: (650.0, 850.0),
            ilm_depth_um: (320.0, 420.0),
            rnfl_thickness_um: (100.0, 140.0),
            gcl_ipl_thickness_um: (60.0, 90.0),
            orl_thickness_um: (120.0, 160.0),
            rpe_thickness_um: (40.0, 60.0),
            choroid_thickness_um: (120.0, 180.0),
            sclera_thickness_um: (250.0, 350.0),
            lc_thickness_um: (150.0, 250.0),
            prelamina_depth_um: (380.0, 480.0),
            cup_depth_um: (120.0, 220.0),
            cup_width_frac: (0.45, 0.60),
            onh_center_jitter_um: 150.0,
            tilt_max_slope: 0.04,
            glaucoma_rnfl_thinning: (0.25, 0.45),
            glaucoma_cup_deepening_um: (60.0, 140.0),
            glaucoma_lc_shift_um: (40.0, 100.0),
            subject_jitter_um: 8.0,
            scan_jitter_um: 3.0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_bscans == 0 || self.n_ascans == 0 || self.n_axial == 0 {
            return Err(Error::Config("empty volume dimensions".into()));
        }
        self.spacing
            .validate()
            .map_err(|e| Error::Config(e.to_string()))?;
        let ranges = [
            ("bmo_radius_um", self.bmo_radius_um),
            ("ilm_depth_um", self.ilm_depth_um),
            ("rnfl_thickness_um", self.rnfl_thickness_um),
            ("gcl_ipl_thickness_um", self.gcl_ipl_thickness_um),
            ("orl_thickness_um", self.orl_thickness_um),
            ("rpe_thickness_um", self.rpe_thickness_um),
            ("choroid_thickness_um", self.choroid_thickness_um),
            ("sclera_thickness_um", self.sclera_thickness_um),
            ("lc_thickness_um", self.lc_thickness_um),
            ("prelamina_depth_um", self.prelamina_depth_um),
            ("cup_depth_um", self.cup_depth_um),
            ("cup_width_frac", self.cup_width_frac),
            ("glaucoma_rnfl_thinning", self.glaucoma_rnfl_thinning),
            ("glaucoma_cup_deepening_um", self.glaucoma_cup_deepening_um),
            ("glaucoma_lc_shift_um", self.glaucoma_lc_shift_um),
        ];
        for (name, (lo, hi)) in ranges {
            if !(lo.is_finite() && hi.is_finite()) || lo < 0.0 || hi < lo {
                return Err(Error::Config(format!("bad range {name}: ({lo}, {hi})")));
            }
        }
        if self.glaucoma_rnfl_thinning.1 >= 1.0 {
            return Err(Error::Config(
                "rnfl thinning fraction must stay below 1".into(),
            ));
        }
        if self.subject_jitter_um < 0.0 || self.scan_jitter_um < 0.0 || self.tilt_max_slope < 0.0
        {
            return Err(Error::Config("negative noise amplitude".into()));
        }
        Ok(())
    }

    pub fn footprint_um(&self) -> (f64, f64) {
        (
            (self.n_ascans - 1) as f64 * self.spacing.between_ascans_um,
            (self.n_bscans - 1) as f64 * self.spacing.between_bscans_um,
        )
    }
}

/// Low-frequency surface perturbation: a sum of plane waves.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct JitterField {
    /// (amplitude um, freq_x 1/um, freq_y 1/um, phase rad)
    pub waves: Vec<(f64, f64, f64, f64)>,
}

impl JitterField {
    fn sample(amplitude: f64, rng: &mut ChaCha12Rng) -> Self {
        let waves = (0..3)
            .map(|_| {
                let wavelength = rng.random_range(1500.0..4000.0);
                let angle = rng.random_range(0.0..std::f64::consts::TAU);
                let amp = rng.random_range(0.0..1.0) * amplitude;
                (
                    amp,
                    angle.cos() / wavelength,
                    angle.sin() / wavelength,
                    rng.random_range(0.0..std::f64::consts::TAU),
                )
            })
            .collect();
        Self { waves }
    }

    pub fn eval(&self, x: f64, y: f64) -> f64 {
        self.waves
            .iter()
            .map(|(a, fx, fy, ph)| a * (std::f64::consts::TAU * (fx * x + fy * y) + ph).sin())
            .sum()
    }

    fn max_amplitude(&self) -> f64 {
        self.waves.iter().map(|(a, ..)| a.abs()).sum()
    }
}

/// Per-subject anatomy; the effect fields are 0 for non-glaucoma subjects.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SubjectAnatomy {
    pub onh_center_um: [f64; 2],
    pub bmo_radius_um: f64,
    pub ilm_depth_um: f64,
    pub rnfl_um: f64,
    pub gcl_ipl_um: f64,
    pub orl_um: f64,
    pub rpe_um: f64,
    pub choroid_um: f64,
    pub sclera_um: f64,
    pub lc_um: f64,
    pub prelamina_depth_um: f64,
    pub cup_depth_um: f64,
    pub cup_width_um: f64,
    pub rnfl_thinning: f64,
    pub lc_shift_um: f64,
    pub jitter: JitterField,
}

/// Per-scan pose: surface tilt slopes and an extra scan-level jitter field.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScanPose {
    pub tilt_slope: [f64; 2],
    pub jitter: JitterField,
}

/// Analytic ground truth for one generated scan.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SynthTruth {
    pub anatomy: SubjectAnatomy,
    pub pose: ScanPose,
}

impl SynthTruth {
    /// Analytic layer spans at a lateral position: `(label, top, bottom)`
    /// in micrometers, anterior to posterior. The rasterizer and the
    /// boundary-extraction oracle both consume this.
    pub fn spans_at(&self, x: f64, y: f64) -> Vec<(TissueLabel, f64, f64)> {
        let a = &self.anatomy;
        let p = &self.pose;
        let dxc = x - a.onh_center_um[0];
        let dyc = y - a.onh_center_um[1];
        let r = (dxc * dxc + dyc * dyc).sqrt();
        let theta = dyc.atan2(dxc);
        let z_base = a.ilm_depth_um
            + p.tilt_slope[0] * dxc
            + p.tilt_slope[1] * dyc
            + a.jitter.eval(x, y)
            + p.jitter.eval(x, y);
        let cup = a.cup_depth_um * (-(r / a.cup_width_um).powi(2)).exp();
        let z_ilm = z_base + cup;
        let sin_t = theta.sin();
        let rnfl = a.rnfl_um * (1.0 - a.rnfl_thinning * sin_t * sin_t);
        if r > a.bmo_radius_um {
            let z1 = z_base + rnfl;
            let z2 = z1 + a.gcl_ipl_um;
            let z3 = z2 + a.orl_um;
            let z4 = z3 + a.rpe_um;
            let z5 = z4 + a.choroid_um;
            let z6 = z5 + a.sclera_um;
            vec![
                (TissueLabel::RnflPlt, z_ilm, z1),
                (TissueLabel::GclIpl, z1, z2),
                (TissueLabel::Orl, z2, z3),
                (TissueLabel::RpeBm, z3, z4),
                (TissueLabel::Choroid, z4, z5),
                (TissueLabel::Sclera, z5, z6),
            ]
        } else {
            let z_lc_top = z_base + a.prelamina_depth_um + a.lc_shift_um;
            vec![
                (TissueLabel::RnflPlt, z_ilm, z_lc_top),
                (TissueLabel::Lc, z_lc_top, z_lc_top + a.lc_um),
            ]
        }
    }
}

#[derive(Debug, Clone)]
pub struct SynthSample {
    pub volume: SegmentedVolume,
    pub truth: SynthTruth,
    pub class_label: ClassLabel,
}

/// SplitMix64-style seed derivation for independent deterministic streams.
pub fn mix_seed(a: u64, b: u64) -> u64 {
    let mut z = a ^ b.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn uniform(range: Range, rng: &mut ChaCha12Rng) -> f64 {
    // Always consume one draw so branches stay stream-compatible.
    let u: f64 = rng.random();
    range.0 + u * (range.1 - range.0)
}

fn sample_anatomy(cfg: &SynthConfig, class: ClassLabel, rng: &mut ChaCha12Rng) -> SubjectAnatomy {
    // Every magnitude is drawn regardless of class so both branches consume
    // identical random streams; the class only scales the effects.
    let is_g = match class {
        ClassLabel::Glaucoma => 1.0,
        _ => 0.0,
    };
    let (fx, fy) = cfg.footprint_um();
    let j = cfg.onh_center_jitter_um;
    let jx = uniform((-j, j), rng);
    let jy = uniform((-j, j), rng);
    let bmo_radius_um = uniform(cfg.bmo_radius_um, rng);
    let ilm_depth_um = uniform(cfg.ilm_depth_um, rng);
    let rnfl_um = uniform(cfg.rnfl_thickness_um, rng);
    let gcl_ipl_um = uniform(cfg.gcl_ipl_thickness_um, rng);
    let orl_um = uniform(cfg.orl_thickness_um, rng);
    let rpe_um = uniform(cfg.rpe_thickness_um, rng);
    let choroid_um = uniform(cfg.choroid_thickness_um, rng);
    let sclera_um = uniform(cfg.sclera_thickness_um, rng);
    let lc_um = uniform(cfg.lc_thickness_um, rng);
    let prelamina_depth_um = uniform(cfg.prelamina_depth_um, rng);
    let base_cup = uniform(cfg.cup_depth_um, rng);
    let cup_width_frac = uniform(cfg.cup_width_frac, rng);
    let thinning = uniform(cfg.glaucoma_rnfl_thinning, rng);
    let deepening = uniform(cfg.glaucoma_cup_deepening_um, rng);
    let lc_shift = uniform(cfg.glaucoma_lc_shift_um, rng);
    let jitter = JitterField::sample(cfg.subject_jitter_um, rng);
    SubjectAnatomy {
        onh_center_um: [fx / 2.0 + jx, fy / 2.0 + jy],
        bmo_radius_um,
        ilm_depth_um,
        rnfl_um,
        gcl_ipl_um,
        orl_um,
        rpe_um,
        choroid_um,
        sclera_um,
        lc_um,
        prelamina_depth_um,
        cup_depth_um: base_cup + is_g * deepening,
        cup_width_um: cup_width_frac * bmo_radius_um,
        rnfl_thinning: is_g * thinning,
        lc_shift_um: is_g * lc_shift,
        jitter,
    }
}

fn sample_pose(cfg: &SynthConfig, rng: &mut ChaCha12Rng) -> ScanPose {
    let m = cfg.tilt_max_slope;
    ScanPose {
        tilt_slope: [uniform((-m, m), rng), uniform((-m, m), rng)],
        jitter: JitterField::sample(cfg.scan_jitter_um, rng),
    }
}

/// Reject parameter combinations that would self-intersect or leave the
/// volume's axial extent.
fn layers_valid(cfg: &SynthConfig, anatomy: &SubjectAnatomy, pose: &ScanPose) -> bool {
    let thinned_rnfl = anatomy.rnfl_um * (1.0 - anatomy.rnfl_thinning);
    if thinned_rnfl < 15.0 {
        return false;
    }
    // Cup dip at the canal edge must not push the ILM below the RNFL floor.
    let edge_dip = anatomy.cup_depth_um
        * (-(anatomy.bmo_radius_um / anatomy.cup_width_um).powi(2)).exp();
    if edge_dip > thinned_rnfl - 10.0 {
        return false;
    }
    // The cup floor must stay above the LC top.
    if anatomy.cup_depth_um + 30.0 > anatomy.prelamina_depth_um {
        return false;
    }
    // Whole stack inside the axial extent under worst-case tilt and jitter.
    let (fx, fy) = cfg.footprint_um();
    let tilt_extent = pose.tilt_slope[0].abs() * fx / 2.0 + pose.tilt_slope[1].abs() * fy / 2.0;
    let jitter_extent = anatomy.jitter.max_amplitude() + pose.jitter.max_amplitude()
        + cfg.onh_center_jitter_um * (pose.tilt_slope[0].abs() + pose.tilt_slope[1].abs());
    let outer_stack = anatomy.rnfl_um
        + anatomy.gcl_ipl_um
        + anatomy.orl_um
        + anatomy.rpe_um
        + anatomy.choroid_um
        + anatomy.sclera_um;
    let canal_stack = anatomy.prelamina_depth_um + anatomy.lc_shift_um + anatomy.lc_um;
    let deepest =
        anatomy.ilm_depth_um + tilt_extent + jitter_extent + outer_stack.max(canal_stack);
    let z_extent = (cfg.n_axial - 1) as f64 * cfg.spacing.axial_um;
    if deepest + cfg.spacing.axial_um >= z_extent {
        return false;
    }
    // Top surface must stay inside as well.
    anatomy.ilm_depth_um - tilt_extent - jitter_extent > cfg.spacing.axial_um
}

/// Rasterize the analytic surfaces into a labeled volume. Layer interfaces
/// are rounded to the nearest voxel center, so every extracted boundary
/// sits within half an axial spacing of the analytic surface.
fn rasterize(
    cfg: &SynthConfig,
    truth: &SynthTruth,
    class: ClassLabel,
    subject_id: &str,
    scan_id: &str,
) -> Result<SegmentedVolume> {
    let mut vol = SegmentedVolume::empty(cfg.n_bscans, cfg.n_ascans, cfg.n_axial, cfg.spacing)?;
    vol.eye_side = EyeSide::Left;
    vol.subject_id = subject_id.to_string();
    vol.scan_id = scan_id.to_string();
    vol.class_label = class;

    let dz = cfg.spacing.axial_um;
    let n_axial = cfg.n_axial;
    for b in 0..cfg.n_bscans {
        let y = b as f64 * cfg.spacing.between_bscans_um;
        for ascan in 0..cfg.n_ascans {
            let x = ascan as f64 * cfg.spacing.between_ascans_um;
            for (label, top, bottom) in truth.spans_at(x, y) {
                let k0 = (top / dz).round().max(0.0) as usize;
                let k1 = ((bottom / dz).round().max(0.0) as usize).min(n_axial);
                for k in k0..k1.max(k0) {
                    vol.set_label(b, ascan, k, label);
                }
            }
        }
    }
    Ok(vol)
}

/// Generate one synthetic scan. Deterministic in `(cfg, class, seed)`.
pub fn generate_onh(cfg: &SynthConfig, class: ClassLabel, seed: u64) -> Result<SynthSample> {
    cfg.validate()?;
    for attempt in 0..10u64 {
        let mut rng = ChaCha12Rng::seed_from_u64(mix_seed(seed, attempt));
        let anatomy = sample_anatomy(cfg, class, &mut rng);
        let pose = sample_pose(cfg, &mut rng);
        if !layers_valid(cfg, &anatomy, &pose) {
            continue;
        }
        let truth = SynthTruth { anatomy, pose };
        let volume = rasterize(cfg, &truth, class, "subj", "subj_s00")?;
        return Ok(SynthSample {
            volume,
            truth,
            class_label: class,
        });
    }
    Err(Error::Input(
        "layer surfaces kept self-intersecting after 10 attempts; check config ranges".into(),
    ))
}

/// Generate a dataset: per-subject anatomy drawn once, per-scan pose jitter
/// on top, so scans of one subject correlate. Deterministic in all inputs.
pub fn generate_dataset(
    cfg: &SynthConfig,
    n_subjects: usize,
    scans_per_subject: usize,
    class_balance: f64,
    seed: u64,
) -> Result<Vec<SynthSample>> {
    cfg.validate()?;
    if n_subjects == 0 {
        return Err(Error::Input("need at least one subject".into()));
    }
    if scans_per_subject == 0 {
        return Err(Error::Input("need at least one scan per subject".into()));
    }
    if !(0.0..=1.0).contains(&class_balance) {
        return Err(Error::Input(format!(
            "class balance {class_balance} outside [0, 1]"
        )));
    }
    let n_glaucoma = (n_subjects as f64 * class_balance).round() as usize;
    let mut samples = Vec::with_capacity(n_subjects * scans_per_subject);
    for i in 0..n_subjects {
        // Bresenham walk spreads glaucoma subjects evenly across indices.
        let class = if (i * n_glaucoma) / n_subjects != ((i + 1) * n_glaucoma) / n_subjects {
            ClassLabel::Glaucoma
        } else {
            ClassLabel::NonGlaucoma
        };
        let subject_seed = mix_seed(seed, 0x5334 + i as u64);
        let subject_id = format!("subj_{i:04}");

        // Subject anatomy: retry on self-intersection with fresh sub-seeds,
        // validated against the worst-case pose.
        let worst_pose = ScanPose {
            tilt_slope: [cfg.tilt_max_slope, cfg.tilt_max_slope],
            jitter: JitterField {
                waves: vec![(3.0 * cfg.scan_jitter_um, 0.0, 0.0, 0.0)],
            },
        };
        let mut chosen = None;
        for attempt in 0..10u64 {
            let mut rng = ChaCha12Rng::seed_from_u64(mix_seed(subject_seed, attempt));
            let anatomy = sample_anatomy(cfg, class, &mut rng);
            if layers_valid(cfg, &anatomy, &worst_pose) {
                chosen = Some(anatomy);
                break;
            }
        }
        let anatomy = chosen.ok_or_else(|| {
            Error::Input(format!(
                "subject {subject_id}: surfaces self-intersect after 10 attempts"
            ))
        })?;

        for s in 0..scans_per_subject {
            let scan_seed = mix_seed(subject_seed, 0xAB30_0000 + s as u64);
            let mut rng = ChaCha12Rng::seed_from_u64(scan_seed);
            let pose = sample_pose(cfg, &mut rng);
            let truth = SynthTruth {
                anatomy: anatomy.clone(),
                pose,
            };
            let scan_id = format!("{subject_id}_s{s:02}");
            let volume = rasterize(cfg, &truth, class, &subject_id, &scan_id)?;
            samples.push(SynthSample {
                volume,
                truth,
                class_label: class,
            });
        }
    }
    Ok(samples)
}

/// Mean absolute difference of the base (tilt + jitter) surface between two
/// scans, sampled over a coarse grid. Test instrumentation for the
/// within- vs between-subject correlation property.
pub fn base_surface_distance(cfg: &SynthConfig, a: &SynthTruth, b: &SynthTruth) -> f64 {
    let (fx, fy) = cfg.footprint_um();
    let n = 12;
    let base = |t: &SynthTruth, x: f64, y: f64| {
        t.anatomy.ilm_depth_um
            + t.pose.tilt_slope[0] * (x - t.anatomy.onh_center_um[0])
            + t.pose.tilt_slope[1] * (y - t.anatomy.onh_center_um[1])
            + t.anatomy.jitter.eval(x, y)
            + t.pose.jitter.eval(x, y)
    };
    let mut acc = 0.0;
    for iy in 0..n {
        for ix in 0..n {
            let x = fx * ix as f64 / (n - 1) as f64;
            let y = fy * iy as f64 / (n - 1) as f64;
            acc += (base(a, x, y) - base(b, x, y)).abs();
        }
    }
    acc / (n * n) as f64
}
