//! End-to-end command tests driving the real binary.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::tempdir;

fn onhgdl() -> Command {
    Command::new(env!("CARGO_BIN_EXE_onhgdl"))
}

fn run_ok(cmd: &mut Command) -> Output {
    let out = cmd.output().expect("spawn onhgdl");
    assert!(
        out.status.success(),
        "command failed ({:?}):\nstdout: {}\nstderr: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn exit_code(cmd: &mut Command) -> i32 {
    cmd.output().expect("spawn onhgdl").status.code().unwrap_or(-1)
}

/// Small volumes keep the smoke tests fast.
fn small_synth_config(dir: &Path, n_subjects: usize, scans_per_subject: usize) -> PathBuf {
    let path = dir.join("synth.json");
    let config = serde_json::json!({
        "n_subjects": n_subjects,
        "scans_per_subject": scans_per_subject,
        "class_balance": 0.5,
        "synth": {
            "n_bscans": 16,
            "n_ascans": 32,
            "n_axial": 120,
            "spacing": { "between_bscans_um": 288.0, "between_ascans_um": 144.0, "axial_um": 15.5 }
        }
    });
    fs::write(&path, serde_json::to_string_pretty(&config).unwrap()).unwrap();
    path
}

fn quick_train_config(dir: &Path) -> PathBuf {
    let path = dir.join("train.json");
    let config = serde_json::json!({
        "max_epochs": 2,
        "patience": 2,
        "batch_size": 4,
        "folds": 3,
        "augment": { "points_per_cloud": 64 },
        "pointnet": {
            "tnet_mlp_widths": [8], "tnet_fc_widths": [8],
            "mlp_widths": [16, 256], "fc_widths": [16],
            "min_points": 16, "dropout": 0.0
        },
        "dgcnn": { "k": 4, "edge_widths": [8, 8], "fc_widths": [16], "dropout": 0.0 }
    });
    fs::write(&path, serde_json::to_string_pretty(&config).unwrap()).unwrap();
    path
}

fn sha256(path: &Path) -> String {
    // Tiny dependency-free digest for byte-identity checks: FNV over bytes
    // is enough to compare two local files.
    let bytes = fs::read(path).unwrap();
    let mut h: u64 = 0xcbf29ce484222325;
    for b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    format!("{h:016x}")
}

#[test]
fn synth_writes_volumes_manifest_and_is_seed_deterministic() {
    let dir = tempdir().unwrap();
    let cfg = small_synth_config(dir.path(), 4, 1);
    let out_a = dir.path().join("a");
    let out_b = dir.path().join("b");
    run_ok(onhgdl()
        .args(["synth", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(&out_a)
        .args(["--seed", "11"]));
    run_ok(onhgdl()
        .args(["synth", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(&out_b)
        .args(["--seed", "11"]));

    let vols: Vec<_> = fs::read_dir(&out_a)
        .unwrap()
        .filter_map(|e| e.ok())
        .filter(|e| e.path().extension().map(|x| x == "onhseg").unwrap_or(false))
        .collect();
    assert_eq!(vols.len(), 4);
    assert!(out_a.join("manifest.json").exists());
    assert!(out_a.join("dataset.json").exists());
    for v in &vols {
        let name = v.file_name();
        assert_eq!(
            sha256(&out_a.join(&name)),
            sha256(&out_b.join(&name)),
            "{name:?} differs between identical seeds"
        );
    }
}

#[test]
fn synth_rejects_bad_config_without_partial_outputs() {
    let dir = tempdir().unwrap();
    let bad = dir.path().join("bad.json");
    fs::write(&bad, "{ not json").unwrap();
    let out = dir.path().join("out");
    let code = exit_code(
        onhgdl()
            .args(["synth", "--config"])
            .arg(&bad)
            .arg("--out")
            .arg(&out)
            .args(["--seed", "1"]),
    );
    assert_eq!(code, 2);
    assert!(!out.exists(), "partial output directory left behind");
    assert!(
        fs::read_dir(dir.path())
            .unwrap()
            .filter_map(|e| e.ok())
            .all(|e| !e.file_name().to_string_lossy().contains("partial")),
        "partial temp dir left behind"
    );
}

#[test]
fn extract_empty_input_dir_exits_2() {
    let dir = tempdir().unwrap();
    let empty = dir.path().join("empty");
    fs::create_dir(&empty).unwrap();
    let out = dir.path().join("out");
    let output = onhgdl()
        .args(["extract", "--in"])
        .arg(&empty)
        .arg("--out")
        .arg(&out)
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&output.stderr).contains("no inputs"));
}

#[test]
fn extract_produces_valid_clouds() {
    let dir = tempdir().unwrap();
    let cfg = small_synth_config(dir.path(), 3, 1);
    let vols = dir.path().join("vols");
    let clouds = dir.path().join("clouds");
    run_ok(onhgdl()
        .args(["synth", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(&vols)
        .args(["--seed", "3"]));
    run_ok(onhgdl()
        .args(["extract", "--in"])
        .arg(&vols)
        .arg("--out")
        .arg(&clouds));
    let files: Vec<_> = fs::read_dir(&clouds)
        .unwrap()
        .filter_map(|e| e.ok())
        .filter(|e| e.path().extension().map(|x| x == "onhpc").unwrap_or(false))
        .collect();
    assert_eq!(files.len(), 3);
    for f in files {
        let cloud = onhgdl_core::io::read_onhpc(&f.path()).unwrap();
        assert!(cloud.len() > 100);
        for p in &cloud.points {
            let r = (p.pos[0] * p.pos[0] + p.pos[1] * p.pos[1]).sqrt();
            assert!(r <= 1750.0 + 1e-9);
        }
    }
}

/// Shared fixture: a small extracted dataset plus a quick train config.
fn fixture(dir: &Path, n_subjects: usize) -> (PathBuf, PathBuf) {
    let cfg = small_synth_config(dir, n_subjects, 1);
    let vols = dir.join("vols");
    let clouds = dir.join("clouds");
    run_ok(onhgdl()
        .args(["synth", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(&vols)
        .args(["--seed", "21"]));
    run_ok(onhgdl()
        .args(["extract", "--in"])
        .arg(&vols)
        .arg("--out")
        .arg(&clouds));
    let tcfg = quick_train_config(dir);
    (clouds, tcfg)
}

#[test]
fn crossval_writes_report_with_fold_aucs_and_interpret_outputs() {
    let dir = tempdir().unwrap();
    let (clouds, tcfg) = fixture(dir.path(), 24);
    let cv = dir.path().join("cv");
    run_ok(onhgdl()
        .args(["crossval", "--model", "dgcnn", "--data"])
        .arg(&clouds)
        .arg("--config")
        .arg(&tcfg)
        .arg("--out")
        .arg(&cv)
        .args(["--seed", "5"]));
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(cv.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["folds"].as_array().unwrap().len(), 3);
    assert!(report["auc_mean"].as_f64().unwrap() >= 0.0);
    assert!(cv.join("per_scan_scores.csv").exists());
    for fold in 0..3 {
        assert!(cv.join(format!("fold_{fold}/checkpoint.onhw")).exists());
        assert!(cv.join(format!("fold_{fold}/test_scans.txt")).exists());
    }

    // Interpret the fold-0 model on its test scans.
    let interp = dir.path().join("interp");
    run_ok(onhgdl()
        .args(["interpret", "--checkpoint"])
        .arg(cv.join("fold_0/checkpoint.onhw"))
        .arg("--data")
        .arg(&clouds)
        .arg("--scans")
        .arg(cv.join("fold_0/test_scans.txt"))
        .arg("--out")
        .arg(&interp)
        .args(["--points-per-cloud", "64"]));
    let stats: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(interp.join("quadrant_stats.json")).unwrap())
            .unwrap();
    let keys: Vec<&String> = stats.as_object().unwrap().keys().collect();
    assert_eq!(keys.len(), 4);
    for k in ["superior", "inferior", "nasal", "temporal"] {
        assert!(stats.get(k).is_some(), "missing quadrant {k}");
    }

    // Per-scan critical rows never exceed the pool width.
    let csv = fs::read_to_string(interp.join("critical_points.csv")).unwrap();
    let mut per_scan = std::collections::BTreeMap::new();
    for line in csv.lines().skip(1) {
        let scan = line.split(',').next().unwrap().to_string();
        *per_scan.entry(scan).or_insert(0usize) += 1;
    }
    assert!(!per_scan.is_empty());
    for (scan, rows) in per_scan {
        assert!(rows <= 256, "{scan} has {rows} critical rows");
    }

    // The radius default is recorded in the sidecars.
    let sidecar: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(interp.join("enface.json")).unwrap()).unwrap();
    assert_eq!(sidecar["radius_um"].as_f64().unwrap(), 75.0);
}

#[test]
fn train_writes_history_and_checkpoint() {
    let dir = tempdir().unwrap();
    let (clouds, tcfg) = fixture(dir.path(), 24);
    let out = dir.path().join("run");
    run_ok(onhgdl()
        .args(["train", "--model", "pointnet", "--data"])
        .arg(&clouds)
        .arg("--config")
        .arg(&tcfg)
        .arg("--out")
        .arg(&out)
        .args(["--seed", "3"]));
    assert!(out.join("checkpoint.onhw").exists());
    assert!(out.join("history.json").exists());
    assert!(out.join("manifest.json").exists());
    let model = onhgdl_core::io::read_checkpoint(&out.join("checkpoint.onhw")).unwrap();
    assert_eq!(model.family(), onhgdl_core::model::ModelFamily::PointNet);
}

#[test]
fn tissue_flag_runs_per_layer_protocol() {
    let dir = tempdir().unwrap();
    let (clouds, tcfg) = fixture(dir.path(), 24);
    let cv = dir.path().join("cv_rnfl");
    run_ok(onhgdl()
        .args(["crossval", "--model", "dgcnn", "--data"])
        .arg(&clouds)
        .arg("--config")
        .arg(&tcfg)
        .arg("--out")
        .arg(&cv)
        .args(["--seed", "5", "--tissue", "RNFL_PLT"]));
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(cv.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["tissue"].as_str().unwrap(), "RNFL_PLT");
}

#[test]
fn unknown_model_and_existing_out_dir_exit_2() {
    let dir = tempdir().unwrap();
    let out = dir.path().join("x");
    fs::create_dir(&out).unwrap();
    let code = exit_code(
        onhgdl()
            .args(["synth", "--out"])
            .arg(&out)
            .args(["--seed", "1"]),
    );
    assert_eq!(code, 2, "existing out dir must be refused");

    let code = exit_code(
        onhgdl()
            .args(["train", "--model", "resnet", "--data"])
            .arg(dir.path())
            .arg("--out")
            .arg(dir.path().join("y")),
    );
    assert_eq!(code, 2);
}
