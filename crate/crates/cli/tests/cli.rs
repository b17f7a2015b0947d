use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use rgbd_dyn::dataset::Trajectory;
use rgbd_dyn::raster;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_rgbd-dyn"));
    c.env("RUST_LOG", "info");
    c
}

fn run_ok(cmd: &mut Command) -> Output {
    let out = cmd.output().expect("spawn rgbd-dyn");
    assert!(
        out.status.success(),
        "command failed\nstdout:\n{}\nstderr:\n{}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn synth(root: &Path, scene: &str, frames: Option<usize>) -> PathBuf {
    let dir = root.join(scene);
    let mut cmd = bin();
    cmd.args(["synth", "--scene", scene, "--out"]).arg(&dir);
    if let Some(n) = frames {
        cmd.args(["--frames", &n.to_string()]);
    }
    run_ok(&mut cmd);
    dir
}

fn metrics(out: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(out.join("metrics.json")).unwrap()).unwrap()
}

#[test]
fn static_scene_gives_one_pose_per_frame() {
    let root = tempfile::tempdir().unwrap();
    let data = synth(root.path(), "static", Some(12));
    let out = root.path().join("out");
    run_ok(bin().args(["run", "--variant", "none", "--dataset"]).arg(&data).arg("--out").arg(&out));
    let traj = Trajectory::read_tum(&out.join("trajectory.txt")).unwrap();
    assert_eq!(traj.len(), 12);
    let m = metrics(&out);
    assert_eq!(m["variant"], "none");
    assert!(m["ate"]["rmse"].as_f64().unwrap() < 0.01);
}

#[test]
fn fused_variant_beats_plain_tracking_on_cuboid_walk() {
    let root = tempfile::tempdir().unwrap();
    let data = synth(root.path(), "cuboid-walk", None);
    let mut ate = Vec::new();
    for variant in ["none", "N+G"] {
        let out = root.path().join(variant.replace('+', ""));
        run_ok(bin().args(["run", "--variant", variant, "--dataset"]).arg(&data).arg("--out").arg(&out));
        ate.push(metrics(&out)["ate"]["rmse"].as_f64().unwrap());
    }
    assert!(ate[1] < ate[0], "N+G ATE {} not below none ATE {}", ate[1], ate[0]);
}

#[test]
fn every_output_parses_with_the_library_readers() {
    let root = tempfile::tempdir().unwrap();
    let data = synth(root.path(), "cuboid-walk", Some(15));
    let out = root.path().join("out");
    run_ok(
        bin()
            .args(["run", "--variant", "N+G", "--dataset"])
            .arg(&data)
            .arg("--out")
            .arg(&out)
            .arg("--gt-masks")
            .arg(data.join("masks")),
    );
    Trajectory::read_tum(&out.join("trajectory.txt")).unwrap();
    let m = metrics(&out);
    assert!(m["masks"]["iou"].as_f64().is_some());
    let timings = std::fs::read_to_string(out.join("timings.csv")).unwrap();
    assert_eq!(timings.lines().count(), 16);
    assert!(timings.starts_with("frame,timestamp,features_ms,low_cost_tracking_ms,multi_view_geometry_ms"));
    let masks: Vec<_> = std::fs::read_dir(out.join("masks")).unwrap().map(|e| e.unwrap().path()).collect();
    assert_eq!(masks.len(), 15);
    for p in &masks {
        raster::read_mask(p).unwrap();
    }
    let inpaint: Vec<_> = std::fs::read_dir(out.join("inpaint")).unwrap().map(|e| e.unwrap().path()).collect();
    assert_eq!(inpaint.len(), 45);
    for p in &inpaint {
        let name = p.file_name().unwrap().to_string_lossy().into_owned();
        if name.ends_with("_depth_inpaint.png") {
            raster::read_depth(p, raster::TUM_DEPTH_SCALE).unwrap();
        } else if name.ends_with("_coverage.png") {
            raster::read_mask(p).unwrap();
        } else {
            assert!(name.ends_with("_inpaint.png"), "{name}");
            raster::read_rgb(p).unwrap();
        }
    }
}

#[test]
fn flags_override_the_config_file() {
    let root = tempfile::tempdir().unwrap();
    let data = synth(root.path(), "static", Some(6));
    let cfg = root.path().join("cfg.json");
    let out = root.path().join("out");
    std::fs::write(
        &cfg,
        serde_json::json!({
            "dataset": data,
            "variant": "G",
            "seed": 3,
            "output": root.path().join("ignored"),
        })
        .to_string(),
    )
    .unwrap();
    run_ok(bin().arg("run").arg("--config").arg(&cfg).args(["--variant", "none", "--seed", "11", "--out"]).arg(&out));
    let m = metrics(&out);
    assert_eq!(m["variant"], "none");
    assert_eq!(m["seed"], 11);
    assert!(!root.path().join("ignored").exists());
}

#[test]
fn semantic_variant_without_masks_names_the_cause() {
    let root = tempfile::tempdir().unwrap();
    let data = synth(root.path(), "static", Some(4));
    std::fs::remove_dir_all(data.join("masks")).unwrap();
    let out = bin().args(["run", "--variant", "N", "--dataset"]).arg(&data).output().unwrap();
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("needs semantic masks"), "{err}");
}

#[test]
fn geometric_variant_logs_unmasked_start() {
    let root = tempfile::tempdir().unwrap();
    let data = synth(root.path(), "cuboid-walk", Some(4));
    let out = run_ok(
        bin()
            .args(["segment", "--pose-source", "ground-truth", "--dataset"])
            .arg(&data)
            .arg("--out")
            .arg(root.path().join("seg")),
    );
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("tracking unmasked"), "{err}");
    assert!(root.path().join("seg/masks").is_dir());
    assert!(!root.path().join("seg/inpaint").exists());
}

#[test]
fn evaluate_reports_zero_error_against_itself() {
    let root = tempfile::tempdir().unwrap();
    let data = synth(root.path(), "static", Some(20));
    let gt = data.join("groundtruth.txt");
    let out = root.path().join("eval");
    let res = run_ok(bin().arg("evaluate").arg("--est").arg(&gt).arg("--gt").arg(&gt).arg("--out").arg(&out));
    let stdout = String::from_utf8_lossy(&res.stdout);
    assert!(stdout.contains("ATE rmse       0.000000 m"), "{stdout}");
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("evaluation.json")).unwrap()).unwrap();
    assert!(report["ate"]["rmse"].as_f64().unwrap() < 1e-9);
    assert_eq!(Trajectory::read_tum(&out.join("aligned_trajectory.txt")).unwrap().len(), 20);
}

#[test]
fn sweep_writes_one_row_per_candidate() {
    let root = tempfile::tempdir().unwrap();
    let data = synth(root.path(), "cuboid-walk", Some(20));
    let out = root.path().join("sweep");
    let res = run_ok(bin().arg("sweep").arg("--dataset").arg(&data).arg("--out").arg(&out).args(["--grid", "0.2,0.4,0.8"]));
    let csv = std::fs::read_to_string(out.join("sweep.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "tau_z,precision,recall,score");
    assert_eq!(lines.len(), 4);
    assert!(String::from_utf8_lossy(&res.stdout).contains("best tau_z"));
}

#[test]
fn unknown_variant_is_rejected() {
    let out = bin().args(["run", "--variant", "X", "--dataset", "d"]).output().unwrap();
    assert!(!out.status.success());
}
