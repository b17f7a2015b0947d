//! Frame-to-map camera tracking with a sparse landmark map and a bounded
//! keyframe buffer.
//!
//! The tracker is deliberately split into a side-effect free
//! [`Tracker::estimate`] and a [`Tracker::commit`] so a caller can estimate a
//! pose, refine the set of usable keypoints, and estimate again before the
//! frame is accepted.

pub mod optimizer;

use std::collections::{BTreeMap, VecDeque};
use std::sync::Arc;

use image::{GrayImage, RgbImage};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{self, hamming, DetectorParams, Keypoint};
use crate::geometry::{backproject_raw, project, Intrinsics, PixelObs, Point3, Pose};
use crate::raster::{DepthMap, Mask};

pub use optimizer::{optimize_pose, Correspondence, OptimizerParams, PoseEstimate, MIN_CORRESPONDENCES};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrackerParams {
    pub detector: DetectorParams,
    /// Keypoints closer than this to a dynamic mask are not used.
    pub contour_margin: u32,
    pub search_radius: f64,
    pub max_hamming: u32,
    pub match_ratio: f64,
    pub optimizer: OptimizerParams,
    /// Inliers needed to call a frame tracked.
    pub min_inliers: usize,
    pub keyframe_interval: usize,
    /// A keyframe is inserted when inliers fall below this fraction of the
    /// landmarks seen by the last keyframe.
    pub keyframe_ratio: f64,
    pub keyframe_capacity: usize,
    /// Depths beyond this are not used to create landmarks.
    pub max_depth: f64,
    pub cull_min_visible: u32,
    pub cull_min_found_ratio: f64,
}

impl Default for TrackerParams {
    fn default() -> Self {
        Self {
            detector: DetectorParams::default(),
            contour_margin: 3,
            search_radius: 15.0,
            max_hamming: 64,
            match_ratio: 0.9,
            optimizer: OptimizerParams::default(),
            min_inliers: 15,
            keyframe_interval: 10,
            keyframe_ratio: 0.7,
            keyframe_capacity: 20,
            max_depth: 8.0,
            cull_min_visible: 10,
            cull_min_found_ratio: 0.25,
        }
    }
}

/// Keypoints of one frame with the depth sampled under each of them.
#[derive(Debug, Clone, Default)]
pub struct FrameFeatures {
    pub keypoints: Vec<Keypoint>,
    pub depths: Vec<Option<f64>>,
}

impl FrameFeatures {
    pub fn extract(gray: &GrayImage, depth: &DepthMap, params: &TrackerParams) -> Self {
        let keypoints = features::detect(gray, &params.detector);
        let depths = keypoints
            .iter()
            .map(|k| {
                let (x, y) = k.pixel();
                depth.valid(x, y).filter(|&z| z <= params.max_depth)
            })
            .collect();
        Self { keypoints, depths }
    }

    /// Indices of keypoints away from `mask` (all of them when `mask` is `None`).
    pub fn static_indices(&self, mask: Option<&Mask>, margin: u32, dims: (u32, u32)) -> Result<Vec<usize>> {
        match mask {
            Some(m) => features::static_keypoint_indices(&self.keypoints, m, margin, dims),
            None => Ok((0..self.keypoints.len()).collect()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MapPoint {
    pub id: u64,
    pub position: Point3,
    pub descriptor: features::Descriptor,
    /// Frame index and pixel the landmark was created from.
    pub origin_frame: usize,
    pub origin_pixel: (f64, f64),
    pub visible: u32,
    pub found: u32,
}

#[derive(Debug, Clone)]
pub struct Keyframe {
    pub frame_index: usize,
    pub timestamp: f64,
    pub pose: Pose,
    /// Keypoints that were outside the dynamic mask, with their depths.
    pub keypoints: Vec<Keypoint>,
    pub depths: Vec<Option<f64>>,
    pub rgb: RgbImage,
    pub depth: DepthMap,
    /// Dynamic mask used when the keyframe was created.
    pub dynamic_mask: Mask,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrackResult {
    pub pose: Pose,
    pub tracked: bool,
    pub matches: usize,
    pub inliers: usize,
    /// `(landmark id, keypoint index)` for every inlier.
    pub inlier_pairs: Vec<(u64, usize)>,
    pub converged: bool,
}

#[derive(Debug, Clone)]
pub struct Tracker {
    intrinsics: Intrinsics,
    params: TrackerParams,
    map: BTreeMap<u64, MapPoint>,
    next_id: u64,
    keyframes: VecDeque<Arc<Keyframe>>,
    last_pose: Option<Pose>,
    velocity: Option<Pose>,
    frames_since_keyframe: usize,
    reference_points: usize,
}

/// Bucketed keypoint lookup for radius queries.
struct KeypointGrid {
    cell: f64,
    cols: usize,
    rows: usize,
    buckets: Vec<Vec<usize>>,
}

impl KeypointGrid {
    fn new(kps: &[Keypoint], allowed: &[usize], dims: (u32, u32), cell: f64) -> Self {
        let cols = (dims.0 as f64 / cell).ceil().max(1.0) as usize;
        let rows = (dims.1 as f64 / cell).ceil().max(1.0) as usize;
        let mut buckets = vec![Vec::new(); cols * rows];
        for &i in allowed {
            let c = ((kps[i].u / cell) as usize).min(cols - 1);
            let r = ((kps[i].v / cell) as usize).min(rows - 1);
            buckets[r * cols + c].push(i);
        }
        Self {
            cell,
            cols,
            rows,
            buckets,
        }
    }

    fn within(&self, kps: &[Keypoint], u: f64, v: f64, radius: f64) -> impl Iterator<Item = usize> + '_ {
        let c0 = ((u - radius) / self.cell).floor().max(0.0) as usize;
        let c1 = (((u + radius) / self.cell).floor().max(0.0) as usize).min(self.cols - 1);
        let r0 = ((v - radius) / self.cell).floor().max(0.0) as usize;
        let r1 = (((v + radius) / self.cell).floor().max(0.0) as usize).min(self.rows - 1);
        let r2 = radius * radius;
        let mut out = Vec::new();
        for r in r0..=r1 {
            for c in c0..=c1 {
                for &i in &self.buckets[r * self.cols + c] {
                    let (du, dv) = (kps[i].u - u, kps[i].v - v);
                    if du * du + dv * dv <= r2 {
                        out.push(i);
                    }
                }
            }
        }
        out.into_iter()
    }
}

impl Tracker {
    pub fn new(intrinsics: Intrinsics, params: TrackerParams) -> Self {
        Self {
            intrinsics,
            params,
            map: BTreeMap::new(),
            next_id: 0,
            keyframes: VecDeque::new(),
            last_pose: None,
            velocity: None,
            frames_since_keyframe: 0,
            reference_points: 0,
        }
    }

    pub fn params(&self) -> &TrackerParams {
        &self.params
    }

    pub fn intrinsics(&self) -> &Intrinsics {
        &self.intrinsics
    }

    pub fn is_initialized(&self) -> bool {
        !self.map.is_empty()
    }

    pub fn map(&self) -> &BTreeMap<u64, MapPoint> {
        &self.map
    }

    pub fn keyframes(&self) -> &VecDeque<Arc<Keyframe>> {
        &self.keyframes
    }

    pub fn last_pose(&self) -> Option<Pose> {
        self.last_pose
    }

    /// Constant-velocity prediction; the last pose if no motion is known yet.
    pub fn predict(&self) -> Option<Pose> {
        let last = self.last_pose?;
        Some(match self.velocity {
            Some(v) => last.compose(&v),
            None => last,
        })
    }

    /// Drops all landmarks; keyframes and the motion model are kept.
    pub fn reset_map(&mut self) {
        self.map.clear();
        self.reference_points = 0;
    }

    /// Seeds the map from one frame at a known pose and stores it as a keyframe.
    #[allow(clippy::too_many_arguments)]
    pub fn initialize(
        &mut self,
        frame_index: usize,
        timestamp: f64,
        pose: Pose,
        feats: &FrameFeatures,
        allowed: &[usize],
        rgb: &RgbImage,
        depth: &DepthMap,
        dynamic_mask: &Mask,
    ) {
        self.map.clear();
        let result = TrackResult {
            pose,
            tracked: true,
            matches: 0,
            inliers: 0,
            inlier_pairs: Vec::new(),
            converged: true,
        };
        self.commit(&result, pose);
        self.insert_keyframe(frame_index, timestamp, pose, feats, allowed, &[], rgb, depth, dynamic_mask);
    }

    fn search_by_projection(
        &self,
        pose: &Pose,
        feats: &FrameFeatures,
        grid: &KeypointGrid,
        radius: f64,
    ) -> Vec<(u64, usize, u32)> {
        let t_cw = pose.inverse();
        let mut best_for_kp: BTreeMap<usize, (u32, u64)> = BTreeMap::new();
        for mp in self.map.values() {
            let Some(px) = project(&t_cw.transform_point(&mp.position), &self.intrinsics) else {
                continue;
            };
            let mut best: Option<(u32, usize)> = None;
            let mut second: Option<u32> = None;
            for i in grid.within(&feats.keypoints, px.u, px.v, radius) {
                let h = hamming(&mp.descriptor, &feats.keypoints[i].descriptor);
                match best {
                    Some((bh, bi)) if h > bh || (h == bh && i > bi) => {
                        second = Some(second.map_or(h, |s| s.min(h)));
                    }
                    Some((bh, _)) => {
                        second = Some(second.map_or(bh, |s| s.min(bh)));
                        best = Some((h, i));
                    }
                    None => best = Some((h, i)),
                }
            }
            let Some((h, i)) = best else { continue };
            if h > self.params.max_hamming {
                continue;
            }
            if second.is_some_and(|s| h as f64 >= self.params.match_ratio * s as f64) {
                continue;
            }
            let entry = best_for_kp.entry(i).or_insert((h, mp.id));
            if h < entry.0 {
                *entry = (h, mp.id);
            }
        }
        best_for_kp
            .into_iter()
            .map(|(i, (h, id))| (id, i, h))
            .collect()
    }

    /// Estimates the pose of a frame from the keypoints listed in `allowed`.
    /// Does not modify the tracker.
    pub fn estimate(&self, feats: &FrameFeatures, allowed: &[usize]) -> Result<TrackResult> {
        if !self.is_initialized() {
            return Err(Error::NotInitialized);
        }
        let predicted = self.predict().ok_or(Error::NotInitialized)?;
        let dims = (self.intrinsics.width, self.intrinsics.height);
        let grid = KeypointGrid::new(&feats.keypoints, allowed, dims, 16.0);
        let mut initial = predicted;
        let mut matches = self.search_by_projection(&predicted, feats, &grid, self.params.search_radius);
        if matches.len() < self.params.min_inliers {
            if let Some(last) = self.last_pose {
                let wide = self.search_by_projection(&last, feats, &grid, 2.0 * self.params.search_radius);
                if wide.len() > matches.len() {
                    matches = wide;
                    initial = last;
                }
            }
        }
        let failed = |matches: usize| TrackResult {
            pose: predicted,
            tracked: false,
            matches,
            inliers: 0,
            inlier_pairs: Vec::new(),
            converged: false,
        };
        if matches.len() < MIN_CORRESPONDENCES {
            return Ok(failed(matches.len()));
        }
        let corr: Vec<Correspondence> = matches
            .iter()
            .map(|&(id, i, _)| {
                let k = &feats.keypoints[i];
                Correspondence {
                    point: self.map[&id].position,
                    obs: PixelObs {
                        u: k.u,
                        v: k.v,
                        depth: feats.depths[i],
                    },
                }
            })
            .collect();
        let est = optimize_pose(&initial, &corr, &self.intrinsics, &self.params.optimizer)?;
        let inlier_pairs: Vec<(u64, usize)> = matches
            .iter()
            .zip(&est.inliers)
            .filter(|(_, &ok)| ok)
            .map(|(&(id, i, _), _)| (id, i))
            .collect();
        let inliers = inlier_pairs.len();
        let tracked = inliers >= self.params.min_inliers;
        Ok(TrackResult {
            // An untrusted estimate falls back to the motion model.
            pose: if tracked { est.pose } else { predicted },
            tracked,
            matches: matches.len(),
            inliers,
            inlier_pairs,
            converged: est.converged,
        })
    }

    /// Accepts a frame at `pose` (normally `result.pose`): updates landmark
    /// statistics, culls unreliable landmarks and advances the motion model.
    pub fn commit(&mut self, result: &TrackResult, pose: Pose) {
        let t_cw = pose.inverse();
        let found: std::collections::HashSet<u64> = result.inlier_pairs.iter().map(|p| p.0).collect();
        let k = self.intrinsics;
        let (min_visible, min_ratio) = (self.params.cull_min_visible, self.params.cull_min_found_ratio);
        self.map.retain(|id, mp| {
            if project(&t_cw.transform_point(&mp.position), &k).is_some() {
                mp.visible += 1;
                if found.contains(id) {
                    mp.found += 1;
                }
            }
            !(mp.visible >= min_visible && (mp.found as f64) < min_ratio * mp.visible as f64)
        });
        self.velocity = self.last_pose.map(|last| last.inverse().compose(&pose));
        self.last_pose = Some(pose);
        self.frames_since_keyframe += 1;
    }

    pub fn needs_keyframe(&self, result: &TrackResult) -> bool {
        self.keyframes.is_empty()
            || self.frames_since_keyframe >= self.params.keyframe_interval
            || (result.inliers as f64) < self.params.keyframe_ratio * self.reference_points as f64
    }

    /// Stores a keyframe and creates landmarks from its unmatched static
    /// keypoints that have valid depth.
    #[allow(clippy::too_many_arguments)]
    pub fn insert_keyframe(
        &mut self,
        frame_index: usize,
        timestamp: f64,
        pose: Pose,
        feats: &FrameFeatures,
        allowed: &[usize],
        matched: &[(u64, usize)],
        rgb: &RgbImage,
        depth: &DepthMap,
        dynamic_mask: &Mask,
    ) {
        let used: std::collections::HashSet<usize> = matched.iter().map(|p| p.1).collect();
        let mut created = 0;
        for &i in allowed {
            if used.contains(&i) {
                continue;
            }
            let Some(z) = feats.depths[i] else { continue };
            let kp = &feats.keypoints[i];
            let p_cam = backproject_raw(kp.u, kp.v, z, &self.intrinsics);
            let id = self.next_id;
            self.next_id += 1;
            self.map.insert(
                id,
                MapPoint {
                    id,
                    position: pose.transform_point(&p_cam),
                    descriptor: kp.descriptor,
                    origin_frame: frame_index,
                    origin_pixel: (kp.u, kp.v),
                    visible: 1,
                    found: 1,
                },
            );
            created += 1;
        }
        self.reference_points = matched.len() + created;
        self.frames_since_keyframe = 0;
        let keyframe = Keyframe {
            frame_index,
            timestamp,
            pose,
            keypoints: allowed.iter().map(|&i| feats.keypoints[i].clone()).collect(),
            depths: allowed.iter().map(|&i| feats.depths[i]).collect(),
            rgb: rgb.clone(),
            depth: depth.clone(),
            dynamic_mask: dynamic_mask.clone(),
        };
        self.keyframes.push_back(Arc::new(keyframe));
        while self.keyframes.len() > self.params.keyframe_capacity.max(1) {
            self.keyframes.pop_front();
        }
    }
}
