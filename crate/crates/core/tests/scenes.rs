//! Scene-level behaviour on rendered sequences.

use std::path::Path;

use rgbd_dyn::dataset::{load_sequence, DatasetConfig};
use rgbd_dyn::dynaseg::overlap_score;
use rgbd_dyn::features::{detect, match_descriptors};
use rgbd_dyn::geometry::{backproject, project, PixelObs};
use rgbd_dyn::inpaint::{inpaint_frame, InpaintParams};
use rgbd_dyn::pipeline::{self, masked_keyframe, Pipeline, PipelineConfig, PoseSource, Variant};
use rgbd_dyn::raster::{self, rgb_to_gray, Mask, TUM_DEPTH_SCALE};
use rgbd_dyn::synth::{self, CameraKey, SceneSpec};
use rgbd_dyn::tracking::{FrameFeatures, Tracker, TrackerParams};

fn write(spec: &SceneSpec, dir: &Path) {
    spec.write_dataset(dir).unwrap();
}

fn run(dir: &Path, variant: Variant, out: &Path) -> pipeline::RunSummary {
    pipeline::run(&PipelineConfig {
        dataset: dir.to_path_buf(),
        variant,
        output: out.to_path_buf(),
        ..PipelineConfig::default()
    })
    .unwrap()
}

#[test]
fn written_pngs_round_trip_bit_exactly() {
    let root = tempfile::tempdir().unwrap();
    let spec = SceneSpec {
        frames: 3,
        ..synth::cuboid_walk()
    };
    write(&spec, root.path());
    let frames = spec.render().unwrap();
    for f in &frames {
        let name = format!("{:.6}.png", f.timestamp);
        assert_eq!(raster::read_rgb(&root.path().join("rgb").join(&name)).unwrap(), f.rgb);
        assert_eq!(raster::read_mask(&root.path().join("masks").join(&name)).unwrap(), f.gt_dynamic_mask);
        let depth_path = root.path().join("depth").join(&name);
        let depth = raster::read_depth(&depth_path, TUM_DEPTH_SCALE).unwrap();
        let again = root.path().join("again.png");
        raster::write_depth(&again, &depth, TUM_DEPTH_SCALE).unwrap();
        assert_eq!(std::fs::read(&again).unwrap(), std::fs::read(&depth_path).unwrap());
        for (a, b) in depth.data().iter().zip(f.depth.data()) {
            assert!((a - b).abs() <= 0.5 / TUM_DEPTH_SCALE as f32 + 1e-6);
        }
    }
}

#[test]
fn matches_agree_with_ground_truth_reprojection() {
    let spec = synth::static_room();
    let k = spec.intrinsics;
    let (a, b) = (spec.render_frame(0), spec.render_frame(3));
    let params = TrackerParams::default();
    let ka = detect(&rgb_to_gray(&a.rgb), &params.detector);
    let kb = detect(&rgb_to_gray(&b.rgb), &params.detector);
    let matches = match_descriptors(&ka, &kb, params.max_hamming, params.match_ratio);
    assert!(matches.len() > 50, "{} matches", matches.len());
    let rel = b.gt_pose.inverse().compose(&a.gt_pose);
    let mut good = 0;
    for m in &matches {
        let (pa, pb) = (&ka[m.index_a], &kb[m.index_b]);
        let (x, y) = pa.pixel();
        let Some(z) = a.depth.valid(x, y) else { continue };
        let p = backproject(&PixelObs::new(pa.u, pa.v, z), &k).unwrap();
        if let Some(q) = project(&rel.transform_point(&p), &k) {
            good += usize::from((q.u - pb.u).hypot(q.v - pb.v) <= 2.0);
        }
    }
    let fraction = good as f64 / matches.len() as f64;
    assert!(fraction >= 0.8, "{good} of {} matches within 2 px", matches.len());
}

#[test]
fn zero_motion_pair_gives_identity() {
    let spec = synth::static_room();
    let f = spec.render_frame(10);
    let params = TrackerParams::default();
    let feats = FrameFeatures::extract(&rgb_to_gray(&f.rgb), &f.depth, &params);
    let all: Vec<usize> = (0..feats.keypoints.len()).collect();
    let mut tracker = Tracker::new(spec.intrinsics, params);
    let empty = Mask::new(640, 480);
    tracker.initialize(0, 0.0, f.gt_pose, &feats, &all, &f.rgb, &f.depth, &empty);
    let r = tracker.estimate(&feats, &all).unwrap();
    assert!(r.tracked);
    let (angle, dist) = r.pose.distance(&f.gt_pose);
    assert!(dist < 1e-4 && angle < 1e-4, "{dist} m, {angle} rad");
}

#[test]
fn static_scene_and_masked_mover_track_accurately() {
    let root = tempfile::tempdir().unwrap();
    let (stat, walk) = (root.path().join("static"), root.path().join("walk"));
    write(&synth::static_room(), &stat);
    write(&synth::cuboid_walk(), &walk);

    let static_ate = run(&stat, Variant::None, &root.path().join("a")).ate.unwrap().rmse;
    let gt = rgbd_dyn::dataset::Trajectory::read_tum(&stat.join("groundtruth.txt")).unwrap();
    let length: f64 = gt
        .entries()
        .windows(2)
        .map(|w| (w[1].1.translation() - w[0].1.translation()).norm())
        .sum();
    assert!(static_ate < 0.01 * length, "static ATE {static_ate} over a {length} m path");

    let masked = run(&walk, Variant::Semantic, &root.path().join("b")).ate.unwrap().rmse;
    let unmasked = run(&walk, Variant::None, &root.path().join("c")).ate.unwrap().rmse;
    assert!(masked <= 2.0 * static_ate, "masked {masked} vs static {static_ate}");
    assert!(unmasked > 5.0 * static_ate, "unmasked {unmasked} vs static {static_ate}");
}

#[test]
fn static_camera_takes_a_keyframe_every_ten_frames() {
    let root = tempfile::tempdir().unwrap();
    let spec = SceneSpec {
        frames: 31,
        camera_path: vec![CameraKey {
            frame: 0.0,
            position: [0.0, 0.0, 0.0],
            yaw_deg: 0.0,
            pitch_deg: 0.0,
        }],
        ..synth::static_room()
    };
    write(&spec, root.path());
    let cfg = PipelineConfig {
        dataset: root.path().to_path_buf(),
        variant: Variant::None,
        ..PipelineConfig::default()
    };
    let seq = load_sequence(root.path(), &DatasetConfig {
        intrinsics: spec.intrinsics,
        ..DatasetConfig::default()
    })
    .unwrap();
    let mut p = Pipeline::new(cfg, spec.intrinsics).unwrap();
    let mut keyframes = Vec::new();
    for i in 0..seq.len() {
        let out = p.process(&seq.load_frame(i).unwrap()).unwrap();
        assert!(out.tracked);
        if out.keyframe {
            keyframes.push(i);
        }
    }
    assert_eq!(keyframes, vec![0, 10, 20, 30]);
}

#[test]
fn every_frame_has_a_keyframe_within_reach() {
    let root = tempfile::tempdir().unwrap();
    let spec = synth::cuboid_walk();
    write(&spec, root.path());
    let cfg = PipelineConfig {
        dataset: root.path().to_path_buf(),
        variant: Variant::Fused,
        pose_source: PoseSource::Tracked,
        ..PipelineConfig::default()
    };
    let seq = load_sequence(root.path(), &DatasetConfig {
        intrinsics: spec.intrinsics,
        ..DatasetConfig::default()
    })
    .unwrap();
    let mut p = Pipeline::new(cfg, spec.intrinsics).unwrap();
    p.process(&seq.load_frame(0).unwrap()).unwrap();
    for i in 1..seq.len() {
        let frame = seq.load_frame(i).unwrap();
        let pose = frame.record.gt_pose.unwrap();
        let best = p
            .tracker()
            .keyframes()
            .iter()
            .map(|kf| overlap_score(&kf.pose, &pose))
            .fold(f64::INFINITY, f64::min);
        assert!(best <= 1.0, "frame {i}: closest keyframe score {best}");
        p.process(&frame).unwrap();
    }
}

#[test]
fn occluder_only_in_current_frame_is_filled_from_the_static_scene() {
    let room = synth::static_room();
    let walk = synth::cuboid_walk();
    let k = walk.intrinsics;
    let current = walk.render_frame(40);
    assert!(!current.gt_dynamic_mask.is_empty());
    let empty = Mask::new(k.width, k.height);
    let params = TrackerParams::default();
    let root = tempfile::tempdir().unwrap();
    write(&SceneSpec { frames: 40, ..room.clone() }, root.path());
    let seq = load_sequence(root.path(), &DatasetConfig {
        intrinsics: k,
        ..DatasetConfig::default()
    })
    .unwrap();
    let keyframes: Vec<_> = (20..40)
        .map(|i| {
            let f = seq.load_frame(i).unwrap();
            let pose = f.record.gt_pose.unwrap();
            masked_keyframe(&f, pose, &empty, &params).unwrap()
        })
        .collect();
    let r = inpaint_frame(
        &current.rgb,
        &current.depth,
        &current.gt_dynamic_mask,
        keyframes.iter(),
        &current.gt_pose,
        &k,
        &InpaintParams::default(),
    )
    .unwrap();
    let coverage = r.covered_fraction(&current.gt_dynamic_mask);
    assert!(coverage >= 0.9, "coverage {coverage}");
    let (mut n, mut err) = (0usize, 0u64);
    for (x, y, px) in r.rgb.enumerate_pixels() {
        if r.coverage.get(x, y) {
            let bg = current.gt_background_rgb.get_pixel(x, y);
            n += 3;
            err += (0..3).map(|c| px[c].abs_diff(bg[c]) as u64).sum::<u64>();
        }
    }
    let mae = err as f64 / n as f64;
    assert!(mae <= 3.0, "MAE {mae}");
}
