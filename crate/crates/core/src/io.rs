//! File formats: segmented volumes (ONHSEG v1), point clouds (ONHPC v1),
//! model checkpoints (ONHW1), dataset manifests and run manifests.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dgcnn::{DgcnnConfig, DgcnnParams};
use crate::error::{Error, Result};
use crate::geometry::{
    BoundarySide, ClassLabel, CloudPoint, EyeSide, OnhPointCloud, SegmentedVolume, Spacing,
    TissueLabel,
};
use crate::model::{AnyModel, ModelFamily};
use crate::pointnet::{PointNetConfig, PointNetParams};
use crate::tensor::Tensor;

pub const ONHSEG_MAGIC: &str = "ONHSEG v1";
pub const ONHPC_MAGIC: &str = "ONHPC v1";
pub const CHECKPOINT_MAGIC: &[u8; 5] = b"ONHW1";

/// Hex SHA-256 of a value's canonical JSON encoding.
pub fn config_hash<T: Serialize>(value: &T) -> Result<String> {
    let json = serde_json::to_string(value)
        .map_err(|e| Error::Format(format!("config serialization failed: {e}")))?;
    let digest = Sha256::digest(json.as_bytes());
    Ok(digest.iter().map(|b| format!("{b:02x}")).collect())
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path)?;
    let digest = Sha256::digest(&bytes);
    Ok(digest.iter().map(|b| format!("{b:02x}")).collect())
}

#[derive(Debug, Serialize, Deserialize)]
struct SegHeader {
    dims: [usize; 3],
    spacing_um: [f64; 3],
    eye_side: EyeSide,
    subject_id: String,
    scan_id: String,
    class_label: ClassLabel,
}

/// Write an ONHSEG v1 file: magic line, JSON header line, then one label
/// byte per voxel in (B-scan, A-scan, axial) row-major order.
pub fn write_onhseg(path: &Path, vol: &SegmentedVolume) -> Result<()> {
    let header = SegHeader {
        dims: [vol.n_bscans, vol.n_ascans, vol.n_axial],
        spacing_um: [
            vol.spacing.between_bscans_um,
            vol.spacing.between_ascans_um,
            vol.spacing.axial_um,
        ],
        eye_side: vol.eye_side,
        subject_id: vol.subject_id.clone(),
        scan_id: vol.scan_id.clone(),
        class_label: vol.class_label,
    };
    let mut f = fs::File::create(path)?;
    writeln!(f, "{ONHSEG_MAGIC}")?;
    let json = serde_json::to_string(&header)
        .map_err(|e| Error::Format(format!("header serialization failed: {e}")))?;
    writeln!(f, "{json}")?;
    f.write_all(vol.raw_labels())?;
    Ok(())
}

fn split_two_lines(bytes: &[u8], what: &str) -> Result<(String, String, usize)> {
    let first_nl = bytes
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| Error::Format(format!("{what}: missing magic line")))?;
    let second_nl = bytes[first_nl + 1..]
        .iter()
        .position(|&b| b == b'\n')
        .map(|p| first_nl + 1 + p)
        .ok_or_else(|| Error::Format(format!("{what}: missing header line")))?;
    let magic = String::from_utf8(bytes[..first_nl].to_vec())
        .map_err(|_| Error::Format(format!("{what}: magic is not utf-8")))?;
    let header = String::from_utf8(bytes[first_nl + 1..second_nl].to_vec())
        .map_err(|_| Error::Format(format!("{what}: header is not utf-8")))?;
    Ok((magic, header, second_nl + 1))
}

pub fn read_onhseg(path: &Path) -> Result<SegmentedVolume> {
    let bytes = fs::read(path)?;
    let (magic, header_json, body_start) = split_two_lines(&bytes, "ONHSEG")?;
    if magic != ONHSEG_MAGIC {
        return Err(Error::Format(format!(
            "bad magic {magic:?}, expected {ONHSEG_MAGIC:?}"
        )));
    }
    let header: SegHeader = serde_json::from_str(&header_json)
        .map_err(|e| Error::Format(format!("bad ONHSEG header: {e}")))?;
    let want = header.dims[0] * header.dims[1] * header.dims[2];
    let body = &bytes[body_start..];
    if body.len() != want {
        return Err(Error::Format(format!(
            "ONHSEG body holds {} voxels, header wants {want}",
            body.len()
        )));
    }
    SegmentedVolume::new(
        header.dims[0],
        header.dims[1],
        header.dims[2],
        Spacing {
            between_bscans_um: header.spacing_um[0],
            between_ascans_um: header.spacing_um[1],
            axial_um: header.spacing_um[2],
        },
        header.eye_side,
        header.subject_id,
        header.scan_id,
        header.class_label,
        body.to_vec(),
    )
}

#[derive(Debug, Serialize, Deserialize)]
struct PcHeader {
    subject_id: String,
    scan_id: String,
    class_label: ClassLabel,
    point_count: usize,
    units: String,
}

/// Write an ONHPC v1 file: magic line, JSON header line, then one text row
/// per point: `x y z thickness tissue_code side_code`.
pub fn write_onhpc(path: &Path, cloud: &OnhPointCloud) -> Result<()> {
    let header = PcHeader {
        subject_id: cloud.subject_id.clone(),
        scan_id: cloud.scan_id.clone(),
        class_label: cloud.class_label,
        point_count: cloud.points.len(),
        units: "um".to_string(),
    };
    let mut out = String::new();
    out.push_str(ONHPC_MAGIC);
    out.push('\n');
    out.push_str(
        &serde_json::to_string(&header)
            .map_err(|e| Error::Format(format!("header serialization failed: {e}")))?,
    );
    out.push('\n');
    for p in &cloud.points {
        out.push_str(&format!(
            "{} {} {} {} {} {}\n",
            p.pos[0],
            p.pos[1],
            p.pos[2],
            p.thickness_um,
            p.tissue.code(),
            p.side.code()
        ));
    }
    fs::write(path, out)?;
    Ok(())
}

pub fn read_onhpc(path: &Path) -> Result<OnhPointCloud> {
    let bytes = fs::read(path)?;
    let (magic, header_json, body_start) = split_two_lines(&bytes, "ONHPC")?;
    if magic != ONHPC_MAGIC {
        return Err(Error::Format(format!(
            "bad magic {magic:?}, expected {ONHPC_MAGIC:?}"
        )));
    }
    let header: PcHeader = serde_json::from_str(&header_json)
        .map_err(|e| Error::Format(format!("bad ONHPC header: {e}")))?;
    let body = std::str::from_utf8(&bytes[body_start..])
        .map_err(|_| Error::Format("ONHPC body is not utf-8".into()))?;
    let mut points = Vec::with_capacity(header.point_count);
    for (lineno, line) in body.lines().enumerate() {
        let mut it = line.split_ascii_whitespace();
        let mut next_f64 = |what: &str| -> Result<f64> {
            it.next()
                .ok_or_else(|| {
                    Error::Format(format!("ONHPC row {lineno}: missing {what}"))
                })?
                .parse()
                .map_err(|e| Error::Format(format!("ONHPC row {lineno}: bad {what}: {e}")))
        };
        let x = next_f64("x")?;
        let y = next_f64("y")?;
        let z = next_f64("z")?;
        let thickness = next_f64("thickness")?;
        let tissue = TissueLabel::from_code(next_f64("tissue_code")? as u8)?;
        let side = BoundarySide::from_code(next_f64("side_code")? as u8)?;
        points.push(CloudPoint {
            pos: [x, y, z],
            thickness_um: thickness,
            tissue,
            side,
        });
    }
    if points.len() != header.point_count {
        return Err(Error::Format(format!(
            "ONHPC header says {} points, body has {}",
            header.point_count,
            points.len()
        )));
    }
    Ok(OnhPointCloud {
        subject_id: header.subject_id,
        scan_id: header.scan_id,
        class_label: header.class_label,
        points,
    })
}

#[derive(Debug, Serialize, Deserialize)]
struct CheckpointHeader {
    family: ModelFamily,
    #[serde(skip_serializing_if = "Option::is_none")]
    pointnet: Option<PointNetConfig>,
    #[serde(skip_serializing_if = "Option::is_none")]
    dgcnn: Option<DgcnnConfig>,
}

fn collect_tensors(model: &AnyModel) -> Vec<Tensor> {
    let mut tensors = Vec::new();
    model.visit_trainable(&mut |t| tensors.push(t.clone()));
    model.visit_state(&mut |t| tensors.push(t.clone()));
    tensors
}

/// Write an ONHW1 checkpoint: magic, JSON architecture block, then every
/// parameter tensor in declaration order as little-endian f64 with a
/// per-tensor shape header.
pub fn write_checkpoint(path: &Path, model: &AnyModel) -> Result<()> {
    let header = match model {
        AnyModel::PointNet(p) => CheckpointHeader {
            family: ModelFamily::PointNet,
            pointnet: Some(p.config.clone()),
            dgcnn: None,
        },
        AnyModel::Dgcnn(p) => CheckpointHeader {
            family: ModelFamily::Dgcnn,
            pointnet: None,
            dgcnn: Some(p.config.clone()),
        },
    };
    let json = serde_json::to_string(&header)
        .map_err(|e| Error::Format(format!("checkpoint header failed: {e}")))?;
    let tensors = collect_tensors(model);

    let mut f = fs::File::create(path)?;
    f.write_all(CHECKPOINT_MAGIC)?;
    f.write_all(&(json.len() as u32).to_le_bytes())?;
    f.write_all(json.as_bytes())?;
    f.write_all(&(tensors.len() as u32).to_le_bytes())?;
    for t in &tensors {
        f.write_all(&(t.shape().len() as u32).to_le_bytes())?;
        for &d in t.shape() {
            f.write_all(&(d as u64).to_le_bytes())?;
        }
        for &v in t.data() {
            f.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn read_checkpoint(path: &Path) -> Result<AnyModel> {
    let mut f = fs::File::open(path)?;
    let mut magic = [0u8; 5];
    f.read_exact(&mut magic)?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(Error::Format("bad checkpoint magic".into()));
    }
    let mut len4 = [0u8; 4];
    f.read_exact(&mut len4)?;
    let json_len = u32::from_le_bytes(len4) as usize;
    let mut json = vec![0u8; json_len];
    f.read_exact(&mut json)?;
    let header: CheckpointHeader = serde_json::from_slice(&json)
        .map_err(|e| Error::Format(format!("bad checkpoint header: {e}")))?;

    f.read_exact(&mut len4)?;
    let tensor_count = u32::from_le_bytes(len4) as usize;
    let mut tensors = Vec::with_capacity(tensor_count);
    for _ in 0..tensor_count {
        f.read_exact(&mut len4)?;
        let rank = u32::from_le_bytes(len4) as usize;
        let mut dims = Vec::with_capacity(rank);
        let mut d8 = [0u8; 8];
        for _ in 0..rank {
            f.read_exact(&mut d8)?;
            dims.push(u64::from_le_bytes(d8) as usize);
        }
        let numel: usize = dims.iter().product();
        let mut data = Vec::with_capacity(numel);
        for _ in 0..numel {
            f.read_exact(&mut d8)?;
            data.push(f64::from_le_bytes(d8));
        }
        tensors.push(Tensor::new(dims, data)?);
    }

    let mut model = match header.family {
        ModelFamily::PointNet => {
            let cfg = header
                .pointnet
                .ok_or_else(|| Error::Format("pointnet checkpoint without config".into()))?;
            AnyModel::PointNet(PointNetParams::init(cfg, 0)?)
        }
        ModelFamily::Dgcnn => {
            let cfg = header
                .dgcnn
                .ok_or_else(|| Error::Format("dgcnn checkpoint without config".into()))?;
            AnyModel::Dgcnn(DgcnnParams::init(cfg, 0)?)
        }
    };
    let expected = {
        let mut n = 0;
        model.visit_trainable(&mut |_| n += 1);
        model.visit_state(&mut |_| n += 1);
        n
    };
    if tensors.len() != expected {
        return Err(Error::Model(format!(
            "checkpoint holds {} tensors, architecture wants {expected}",
            tensors.len()
        )));
    }
    let mut it = tensors.into_iter();
    let mut mismatch = None;
    model.visit_trainable_mut(&mut |t| {
        let src = it.next().expect("tensor count checked");
        if src.shape() != t.shape() {
            mismatch = Some((t.shape().to_vec(), src.shape().to_vec()));
        } else {
            *t = src;
        }
    });
    model.visit_state_mut(&mut |t| {
        let src = it.next().expect("tensor count checked");
        if src.shape() != t.shape() {
            mismatch = Some((t.shape().to_vec(), src.shape().to_vec()));
        } else {
            *t = src;
        }
    });
    if let Some((want, got)) = mismatch {
        return Err(Error::Model(format!(
            "checkpoint tensor shape {got:?} does not fit architecture slot {want:?}"
        )));
    }
    Ok(model)
}

/// Manifest written into every artifact directory.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub config_hash: String,
    pub seed: u64,
    pub inputs: Vec<String>,
    pub outputs: Vec<String>,
    pub git_describe: String,
    pub created_unix_ms: u128,
}

impl RunManifest {
    pub fn new(command: &str, config_hash: &str, seed: u64) -> Self {
        Self {
            command: command.to_string(),
            config_hash: config_hash.to_string(),
            seed,
            inputs: Vec::new(),
            outputs: Vec::new(),
            git_describe: git_describe(),
            created_unix_ms: std::time::SystemTime::now()
                .duration_since(std::time::UNIX_EPOCH)
                .map(|d| d.as_millis())
                .unwrap_or(0),
        }
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        let json = serde_json::to_string_pretty(self)
            .map_err(|e| Error::Format(format!("manifest serialization failed: {e}")))?;
        fs::write(dir.join("manifest.json"), json)?;
        Ok(())
    }
}

fn git_describe() -> String {
    std::process::Command::new("git")
        .args(["describe", "--always", "--dirty"])
        .output()
        .ok()
        .filter(|o| o.status.success())
        .and_then(|o| String::from_utf8(o.stdout).ok())
        .map(|s| s.trim().to_string())
        .unwrap_or_else(|| "unknown".to_string())
}

/// Index of a generated synthetic dataset.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub seed: u64,
    pub config_hash: String,
    pub samples: Vec<DatasetEntry>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetEntry {
    pub file: String,
    pub subject_id: String,
    pub scan_id: String,
    pub class_label: ClassLabel,
}
