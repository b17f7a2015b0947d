//! Per-frame orchestration of tracking, segmentation and inpainting, and
//! whole-sequence runs that write results to disk.

use std::fmt;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use log::{debug, info, warn};
use serde::{Deserialize, Serialize};

use crate::dataset::{load_sequence, DatasetConfig, Frame, Sequence, Trajectory};
use crate::dynaseg::{segment_frame, sweep_tau_z, LabeledFrame, SegParams, SweepResult};
use crate::error::{Error, Result};
use crate::eval::{self, AteReport, MaskAccumulator, MaskReport, RpeReport};
use crate::geometry::{Intrinsics, Pose};
use crate::inpaint::{inpaint_frame, InpaintParams, InpaintResult};
use crate::raster::{self, rgb_to_gray, Mask};
use crate::synth::SceneSpec;
use crate::tracking::{FrameFeatures, Keyframe, Tracker, TrackerParams};

/// Which dynamic-content handling is enabled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Variant {
    /// Plain tracking.
    #[serde(rename = "none")]
    None,
    /// Semantic masks only.
    #[serde(rename = "N")]
    Semantic,
    /// Multi-view geometry only.
    #[serde(rename = "G")]
    Geometric,
    /// Semantic masks fused with multi-view geometry.
    #[serde(rename = "N+G")]
    Fused,
    /// As `N+G`, with inpainted frames fed to the final tracking step.
    #[serde(rename = "N+G+BI")]
    FusedInpainted,
}

impl Variant {
    pub const ALL: [Variant; 5] = [
        Variant::None,
        Variant::Semantic,
        Variant::Geometric,
        Variant::Fused,
        Variant::FusedInpainted,
    ];

    pub fn uses_semantic(self) -> bool {
        matches!(self, Self::Semantic | Self::Fused | Self::FusedInpainted)
    }

    pub fn uses_geometry(self) -> bool {
        matches!(self, Self::Geometric | Self::Fused | Self::FusedInpainted)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Self::None => "none",
            Self::Semantic => "N",
            Self::Geometric => "G",
            Self::Fused => "N+G",
            Self::FusedInpainted => "N+G+BI",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|v| v.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::Config(format!("unknown variant {s:?} (expected none, N, G, N+G or N+G+BI)")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PoseSource {
    Tracked,
    GroundTruth,
}

impl FromStr for PoseSource {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tracked" => Ok(Self::Tracked),
            "ground-truth" | "groundtruth" | "gt" => Ok(Self::GroundTruth),
            _ => Err(Error::Config(format!(
                "unknown pose source {s:?} (expected tracked or ground-truth)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub dataset: PathBuf,
    /// Semantic mask directory; `<dataset>/masks` when absent.
    pub masks: Option<PathBuf>,
    /// Ground-truth dynamic masks used only for evaluation.
    pub gt_masks: Option<PathBuf>,
    /// Camera; read from `<dataset>/scene.json` or the TUM default when absent.
    pub intrinsics: Option<Intrinsics>,
    pub depth_scale: f64,
    pub variant: Variant,
    pub pose_source: PoseSource,
    pub segmentation: SegParams,
    pub tracker: TrackerParams,
    pub inpaint: InpaintParams,
    pub output: PathBuf,
    pub write_masks: bool,
    /// Inpainted frames are written for the `N+G` variants unless disabled.
    pub write_inpaint: Option<bool>,
    pub max_frames: Option<usize>,
    pub seed: u64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            dataset: PathBuf::new(),
            masks: None,
            gt_masks: None,
            intrinsics: None,
            depth_scale: raster::TUM_DEPTH_SCALE,
            variant: Variant::Fused,
            pose_source: PoseSource::Tracked,
            segmentation: SegParams::default(),
            tracker: TrackerParams::default(),
            inpaint: InpaintParams::default(),
            output: PathBuf::from("out"),
            write_masks: true,
            write_inpaint: None,
            max_frames: None,
            seed: 0,
        }
    }
}

impl PipelineConfig {
    pub fn from_json_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Format {
            path: path.to_path_buf(),
            message: e.to_string(),
        })
    }

    fn inpaint_enabled(&self) -> bool {
        self.write_inpaint
            .unwrap_or(matches!(self.variant, Variant::Fused | Variant::FusedInpainted))
            || self.variant == Variant::FusedInpainted
    }

    /// Explicit intrinsics, else the ones a synthetic dataset records, else TUM fr3.
    pub fn resolve_intrinsics(&self) -> Result<Intrinsics> {
        if let Some(k) = self.intrinsics {
            k.validate()?;
            return Ok(k);
        }
        let scene = self.dataset.join("scene.json");
        if scene.exists() {
            let text = std::fs::read_to_string(&scene).map_err(|e| Error::io(&scene, e))?;
            let spec: SceneSpec = serde_json::from_str(&text).map_err(|e| Error::Format {
                path: scene.clone(),
                message: e.to_string(),
            })?;
            return Ok(spec.intrinsics);
        }
        Ok(Intrinsics::tum_fr3())
    }
}

/// Wall-clock milliseconds per stage for one frame.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct StageTimes {
    pub features: f64,
    pub low_cost_tracking: f64,
    pub multi_view_geometry: f64,
    pub background_inpainting: f64,
    pub tracking: f64,
}

#[derive(Debug, Clone)]
pub struct FrameOutput {
    pub index: usize,
    pub timestamp: f64,
    pub pose: Pose,
    pub tracked: bool,
    pub inliers: usize,
    pub keyframe: bool,
    pub reinitialized: bool,
    /// Mask of content treated as dynamic in this frame.
    pub mask: Mask,
    pub geometric: Option<Mask>,
    pub inpaint: Option<InpaintResult>,
    pub times: StageTimes,
}

fn ms(t: Instant) -> f64 {
    t.elapsed().as_secs_f64() * 1e3
}

/// Frame-by-frame processor holding the tracker state.
pub struct Pipeline {
    config: PipelineConfig,
    intrinsics: Intrinsics,
    tracker: Tracker,
    needs_init: bool,
}

impl Pipeline {
    pub fn new(config: PipelineConfig, intrinsics: Intrinsics) -> Result<Self> {
        intrinsics.validate()?;
        config.segmentation.validate()?;
        if config.tracker.keyframe_capacity < config.inpaint.keyframes.min(20) {
            return Err(Error::Config(format!(
                "keyframe capacity {} is smaller than the {} inpainting sources",
                config.tracker.keyframe_capacity, config.inpaint.keyframes
            )));
        }
        let tracker = Tracker::new(intrinsics, config.tracker.clone());
        Ok(Self {
            config,
            intrinsics,
            tracker,
            needs_init: true,
        })
    }

    pub fn tracker(&self) -> &Tracker {
        &self.tracker
    }

    fn inpaint(&self, frame: &Frame, mask: &Mask, pose: &Pose) -> Result<InpaintResult> {
        let sources = self
            .tracker
            .keyframes()
            .iter()
            .filter(|kf| kf.frame_index != frame.record.index)
            .map(|kf| kf.as_ref());
        inpaint_frame(&frame.rgb, &frame.depth, mask, sources, pose, &self.intrinsics, &self.config.inpaint)
    }

    pub fn process(&mut self, frame: &Frame) -> Result<FrameOutput> {
        let cfg = &self.config;
        let dims = frame.dims();
        if dims != (self.intrinsics.width, self.intrinsics.height) {
            return Err(Error::SizeMismatch {
                expected: (self.intrinsics.width, self.intrinsics.height),
                found: dims,
            });
        }
        let index = frame.record.index;
        let semantic = if cfg.variant.uses_semantic() {
            Some(frame.semantic_mask.as_ref().ok_or_else(|| {
                Error::Config(format!(
                    "variant {} needs a semantic mask for frame {}",
                    cfg.variant,
                    frame.record.stem()
                ))
            })?)
        } else {
            None
        };
        let gt_pose = match cfg.pose_source {
            PoseSource::GroundTruth => Some(frame.record.gt_pose.ok_or_else(|| {
                Error::Config(format!("no ground-truth pose for frame {}", frame.record.stem()))
            })?),
            PoseSource::Tracked => None,
        };
        let margin = cfg.tracker.contour_margin;
        let mut times = StageTimes::default();

        let t = Instant::now();
        let gray = rgb_to_gray(&frame.rgb);
        let feats = FrameFeatures::extract(&gray, &frame.depth, &cfg.tracker);
        times.features = ms(t);

        if self.needs_init || !self.tracker.is_initialized() {
            let reinit = self.tracker.last_pose().is_some();
            let pose = gt_pose
                .or_else(|| self.tracker.predict())
                .or(frame.record.gt_pose.filter(|_| index == 0))
                .unwrap_or_else(Pose::identity);
            let mask = match (semantic, cfg.variant.uses_geometry()) {
                (Some(s), _) => s.clone(),
                (None, true) => {
                    info!("frame {index}: no keyframes yet, tracking unmasked");
                    Mask::new(dims.0, dims.1)
                }
                (None, false) => Mask::new(dims.0, dims.1),
            };
            let allowed = feats.static_indices(Some(&mask), margin, dims)?;
            self.tracker
                .initialize(index, frame.record.timestamp, pose, &feats, &allowed, &frame.rgb, &frame.depth, &mask);
            self.needs_init = false;
            if reinit {
                info!("frame {index}: map reinitialized at the predicted pose");
            }
            let inpaint = if cfg.inpaint_enabled() {
                let t = Instant::now();
                let r = self.inpaint(frame, &mask, &pose)?;
                times.background_inpainting = ms(t);
                Some(r)
            } else {
                None
            };
            return Ok(FrameOutput {
                index,
                timestamp: frame.record.timestamp,
                pose,
                tracked: !reinit || gt_pose.is_some(),
                inliers: allowed.len(),
                keyframe: true,
                reinitialized: reinit,
                geometric: cfg.variant.uses_geometry().then(|| Mask::new(dims.0, dims.1)),
                mask,
                inpaint,
                times,
            });
        }

        let low_cost_allowed = feats.static_indices(semantic, margin, dims)?;
        let mut geometric = None;
        let mask = if cfg.variant.uses_geometry() {
            let t = Instant::now();
            let low = self.tracker.estimate(&feats, &low_cost_allowed)?;
            times.low_cost_tracking = ms(t);
            let seg_pose = gt_pose.unwrap_or(low.pose);
            let t = Instant::now();
            let dm = segment_frame(
                &frame.depth,
                semantic,
                self.tracker.keyframes().iter().map(|k| k.as_ref()),
                &seg_pose,
                Some(index),
                &self.intrinsics,
                &cfg.segmentation,
            )?;
            times.multi_view_geometry = ms(t);
            geometric = Some(dm.geometric);
            dm.fused
        } else {
            semantic.cloned().unwrap_or_else(|| Mask::new(dims.0, dims.1))
        };

        let mut inpaint = None;
        let (track_feats, allowed, kf_rgb, kf_depth) = if cfg.variant == Variant::FusedInpainted {
            let t = Instant::now();
            let pose_guess = gt_pose.or_else(|| self.tracker.predict()).unwrap_or_else(Pose::identity);
            let r = self.inpaint(frame, &mask, &pose_guess)?;
            times.background_inpainting = ms(t);
            let t = Instant::now();
            let feats = FrameFeatures::extract(&rgb_to_gray(&r.rgb), &r.depth, &cfg.tracker);
            times.features += ms(t);
            // Reconstructed pixels are usable; blank ones are not.
            let holes = mask.subtract(&r.coverage)?;
            let allowed = feats.static_indices(Some(&holes), margin, dims)?;
            let out = (feats, allowed, r.rgb.clone(), r.depth.clone());
            inpaint = Some(r);
            out
        } else {
            let allowed = feats.static_indices(Some(&mask), margin, dims)?;
            (feats, allowed, frame.rgb.clone(), frame.depth.clone())
        };

        let t = Instant::now();
        let result = self.tracker.estimate(&track_feats, &allowed)?;
        times.tracking = ms(t);
        let (pose, tracked) = match gt_pose {
            Some(p) => (p, true),
            None => (result.pose, result.tracked),
        };
        self.tracker.commit(&result, pose);
        let keyframe = tracked && self.tracker.needs_keyframe(&result);
        if !tracked {
            warn!(
                "frame {index}: tracking lost ({} inliers of {} matches)",
                result.inliers, result.matches
            );
            self.needs_init = true;
        } else if keyframe {
            let holes = match &inpaint {
                Some(r) => mask.subtract(&r.coverage)?,
                None => mask.clone(),
            };
            self.tracker.insert_keyframe(
                index,
                frame.record.timestamp,
                pose,
                &track_feats,
                &allowed,
                &result.inlier_pairs,
                &kf_rgb,
                &kf_depth,
                &holes,
            );
        }

        if inpaint.is_none() && cfg.inpaint_enabled() {
            let t = Instant::now();
            inpaint = Some(self.inpaint(frame, &mask, &pose)?);
            times.background_inpainting = ms(t);
        }
        Ok(FrameOutput {
            index,
            timestamp: frame.record.timestamp,
            pose,
            tracked,
            inliers: result.inliers,
            keyframe,
            reinitialized: false,
            mask,
            geometric,
            inpaint,
            times,
        })
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct FrameRecordOut {
    pub index: usize,
    pub timestamp: f64,
    pub tracked: bool,
    pub keyframe: bool,
    pub inliers: usize,
    pub mask_pixels: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunSummary {
    pub variant: Variant,
    pub pose_source: PoseSource,
    pub seed: u64,
    pub frames: usize,
    pub tracked_percent: f64,
    pub keyframes: usize,
    pub ate: Option<AteReport>,
    pub rpe: Option<RpeReport>,
    pub masks: Option<MaskReport>,
    /// Mean coverage of the dynamic mask by inpainting, over frames with a mask.
    pub inpaint_coverage: Option<f64>,
    pub per_frame: Vec<FrameRecordOut>,
    #[serde(skip)]
    pub trajectory: Trajectory,
    #[serde(skip)]
    pub outputs: Vec<PathBuf>,
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn open_sequence(cfg: &PipelineConfig, intrinsics: Intrinsics) -> Result<Sequence> {
    let ds = DatasetConfig {
        intrinsics,
        depth_scale: cfg.depth_scale,
        masks_dir: cfg.masks.clone(),
        ..DatasetConfig::default()
    };
    let seq = load_sequence(&cfg.dataset, &ds)?;
    if cfg.variant.uses_semantic() && !seq.has_masks() {
        return Err(Error::Config(format!(
            "variant {} needs semantic masks but none were found for {}",
            cfg.variant,
            cfg.dataset.display()
        )));
    }
    if cfg.pose_source == PoseSource::GroundTruth && seq.groundtruth.is_none() {
        return Err(Error::MissingFile(cfg.dataset.join("groundtruth.txt")));
    }
    Ok(seq)
}

/// Runs a whole sequence and writes `trajectory.txt`, `masks/`, `inpaint/`,
/// `metrics.json` and `timings.csv` under the output directory.
pub fn run(cfg: &PipelineConfig) -> Result<RunSummary> {
    let intrinsics = cfg.resolve_intrinsics()?;
    let seq = open_sequence(cfg, intrinsics)?;
    let out = &cfg.output;
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let masks_dir = out.join("masks");
    let inpaint_dir = out.join("inpaint");
    if cfg.write_masks {
        std::fs::create_dir_all(&masks_dir).map_err(|e| Error::io(&masks_dir, e))?;
    }
    if cfg.inpaint_enabled() {
        std::fs::create_dir_all(&inpaint_dir).map_err(|e| Error::io(&inpaint_dir, e))?;
    }
    let gt_masks_dir = cfg.gt_masks.as_ref().map(|p| {
        if p.is_absolute() || p.exists() {
            p.clone()
        } else {
            cfg.dataset.join(p)
        }
    });

    let mut pipeline = Pipeline::new(cfg.clone(), intrinsics)?;
    let n = cfg.max_frames.map_or(seq.len(), |m| m.min(seq.len()));
    info!(
        "{}: {} frames, variant {}, poses {:?}",
        cfg.dataset.display(),
        n,
        cfg.variant,
        cfg.pose_source
    );
    let mut trajectory = Trajectory::new();
    let mut per_frame = Vec::with_capacity(n);
    let mut tracked = Vec::with_capacity(n);
    let mut outputs = Vec::new();
    let mut accumulator = gt_masks_dir.as_ref().map(|_| MaskAccumulator::new());
    let mut coverage = (0.0, 0usize);
    let mut timings = String::from(
        "frame,timestamp,features_ms,low_cost_tracking_ms,multi_view_geometry_ms,background_inpainting_ms,tracking_ms\n",
    );
    let mut keyframes = 0;
    let mut initialized = false;
    for i in 0..n {
        let frame = seq.load_frame(i)?;
        let fo = pipeline.process(&frame)?;
        initialized |= pipeline.tracker().is_initialized();
        let stem = frame.record.stem();
        trajectory.push(fo.timestamp, fo.pose)?;
        tracked.push(fo.tracked);
        keyframes += usize::from(fo.keyframe);
        if cfg.write_masks {
            let p = masks_dir.join(format!("{stem}.png"));
            raster::write_mask(&p, &fo.mask)?;
            outputs.push(p);
        }
        if let Some(r) = &fo.inpaint {
            let rgb = inpaint_dir.join(format!("{stem}_inpaint.png"));
            let depth = inpaint_dir.join(format!("{stem}_depth_inpaint.png"));
            let cov = inpaint_dir.join(format!("{stem}_coverage.png"));
            raster::write_rgb(&rgb, &r.rgb)?;
            raster::write_depth(&depth, &r.depth, cfg.depth_scale)?;
            raster::write_mask(&cov, &r.coverage)?;
            outputs.extend([rgb, depth, cov]);
            if !fo.mask.is_empty() {
                coverage.0 += r.covered_fraction(&fo.mask);
                coverage.1 += 1;
            }
        }
        if let (Some(acc), Some(dir)) = (accumulator.as_mut(), gt_masks_dir.as_ref()) {
            let gt = raster::read_mask(&dir.join(format!("{stem}.png")))?;
            acc.add(&fo.mask, &gt)?;
        }
        let t = fo.times;
        let _ = writeln!(
            timings,
            "{},{:.6},{:.3},{:.3},{:.3},{:.3},{:.3}",
            i,
            fo.timestamp,
            t.features,
            t.low_cost_tracking,
            t.multi_view_geometry,
            t.background_inpainting,
            t.tracking
        );
        debug!(
            "frame {i}: tracked={} inliers={} keyframe={} mask={}px",
            fo.tracked,
            fo.inliers,
            fo.keyframe,
            fo.mask.count()
        );
        per_frame.push(FrameRecordOut {
            index: i,
            timestamp: fo.timestamp,
            tracked: fo.tracked,
            keyframe: fo.keyframe,
            inliers: fo.inliers,
            mask_pixels: fo.mask.count(),
        });
    }

    if n > 0 && !initialized {
        return Err(Error::NotInitialized);
    }
    let traj_path = out.join("trajectory.txt");
    trajectory.write_tum(&traj_path)?;
    outputs.push(traj_path);
    let (ate, rpe) = match &seq.groundtruth {
        Some(gt) if trajectory.len() >= 2 => {
            let ate = eval::ate(&trajectory, gt, crate::dataset::DEFAULT_MAX_DIFF, false).ok();
            let rpe = eval::rpe(
                &trajectory,
                gt,
                crate::dataset::DEFAULT_MAX_DIFF,
                &eval::DEFAULT_SEGMENT_LENGTHS,
            )
            .ok();
            (ate, rpe)
        }
        _ => (None, None),
    };
    let summary = RunSummary {
        variant: cfg.variant,
        pose_source: cfg.pose_source,
        seed: cfg.seed,
        frames: n,
        tracked_percent: eval::tracked_fraction(&tracked),
        keyframes,
        ate,
        rpe,
        masks: accumulator.map(|a| a.report()),
        inpaint_coverage: (coverage.1 > 0).then(|| coverage.0 / coverage.1 as f64),
        per_frame,
        trajectory,
        outputs,
    };
    let metrics = out.join("metrics.json");
    write_bytes(&metrics, serde_json::to_string_pretty(&summary)?.as_bytes())?;
    let timings_path = out.join("timings.csv");
    write_bytes(&timings_path, timings.as_bytes())?;
    let mut summary = summary;
    summary.outputs.push(metrics);
    summary.outputs.push(timings_path);
    Ok(summary)
}

/// Keyframe at a known pose keeping only the keypoints off `mask`.
pub fn masked_keyframe(frame: &Frame, pose: Pose, mask: &Mask, params: &TrackerParams) -> Result<Keyframe> {
    let feats = FrameFeatures::extract(&rgb_to_gray(&frame.rgb), &frame.depth, params);
    let allowed = feats.static_indices(Some(mask), params.contour_margin, frame.dims())?;
    Ok(Keyframe {
        frame_index: frame.record.index,
        timestamp: frame.record.timestamp,
        pose,
        keypoints: allowed.iter().map(|&i| feats.keypoints[i].clone()).collect(),
        depths: allowed.iter().map(|&i| feats.depths[i]).collect(),
        rgb: frame.rgb.clone(),
        depth: frame.depth.clone(),
        dynamic_mask: mask.clone(),
    })
}

/// Depth-threshold sweep over a labeled sequence: ground-truth poses, with
/// the dataset's mask directory read as ground-truth dynamic masks. Every
/// `keyframe_step`-th frame becomes a keyframe; all other frames are scored
/// against the keyframes that precede them.
pub fn sweep_dataset(cfg: &PipelineConfig, candidates: &[f64], keyframe_step: usize) -> Result<SweepResult> {
    if keyframe_step == 0 {
        return Err(Error::Config("keyframe step must be at least 1".into()));
    }
    let intrinsics = cfg.resolve_intrinsics()?;
    let seq = open_sequence(
        &PipelineConfig {
            variant: Variant::Semantic,
            pose_source: PoseSource::GroundTruth,
            ..cfg.clone()
        },
        intrinsics,
    )?;
    let n = cfg.max_frames.map_or(seq.len(), |m| m.min(seq.len()));
    let mut frames = Vec::with_capacity(n);
    for i in 0..n {
        let f = seq.load_frame(i)?;
        let pose = f
            .record
            .gt_pose
            .ok_or_else(|| Error::Config(format!("no ground-truth pose for frame {}", f.record.stem())))?;
        let mask = f.semantic_mask.clone().expect("masks checked when opening");
        frames.push((f, pose, mask));
    }
    let keyframes = frames
        .iter()
        .step_by(keyframe_step)
        .map(|(f, pose, mask)| masked_keyframe(f, *pose, mask, &cfg.tracker))
        .collect::<Result<Vec<_>>>()?;
    let labeled: Vec<LabeledFrame> = frames
        .iter()
        .enumerate()
        .filter(|(i, _)| i % keyframe_step != 0)
        .map(|(i, (f, pose, mask))| LabeledFrame {
            frame_index: Some(i),
            pose: *pose,
            depth: &f.depth,
            gt_mask: mask,
            keyframes: keyframes.iter().filter(|kf| kf.frame_index < i).collect(),
        })
        .collect();
    info!(
        "sweeping {} candidates over {} labeled frames and {} keyframes",
        candidates.len(),
        labeled.len(),
        keyframes.len()
    );
    sweep_tau_z(&labeled, candidates, (0.7, 0.3), &intrinsics, &cfg.segmentation)
}
