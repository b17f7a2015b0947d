//! Moving-object segmentation from multi-view depth consistency.
//!
//! Keypoints of keyframes that overlap the current view are warped into the
//! current frame. A keypoint whose measured depth there is clearly in front
//! of where it should be is evidence of a moving occluder. Surviving
//! evidence seeds a depth-based region growing, and the result is fused with
//! an optional semantic mask.

use std::collections::VecDeque;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{backproject_raw, parallax_angle, project, Intrinsics, PixelObs, Pose};
use crate::raster::{DepthMap, Mask};
use crate::tracking::Keyframe;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub enum Connectivity {
    Four,
    Eight,
}

impl TryFrom<u8> for Connectivity {
    type Error = String;

    fn try_from(v: u8) -> std::result::Result<Self, String> {
        match v {
            4 => Ok(Self::Four),
            8 => Ok(Self::Eight),
            _ => Err(format!("connectivity must be 4 or 8, got {v}")),
        }
    }
}

impl From<Connectivity> for u8 {
    fn from(c: Connectivity) -> u8 {
        match c {
            Connectivity::Four => 4,
            Connectivity::Eight => 8,
        }
    }
}

impl Connectivity {
    fn offsets(self) -> &'static [(i64, i64)] {
        const FOUR: [(i64, i64); 4] = [(1, 0), (-1, 0), (0, 1), (0, -1)];
        const EIGHT: [(i64, i64); 8] = [
            (1, 0),
            (-1, 0),
            (0, 1),
            (0, -1),
            (1, 1),
            (1, -1),
            (-1, 1),
            (-1, -1),
        ];
        match self {
            Self::Four => &FOUR,
            Self::Eight => &EIGHT,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SegParams {
    /// Depth-difference threshold (m).
    pub tau_z: f64,
    /// Parallax angle (degrees) above which a test is discarded.
    pub parallax_max: f64,
    pub overlap_keyframes: usize,
    /// Side of the square patch used by the border check (px).
    pub border_patch: u32,
    /// Depth variance (m²) above which a dynamic label is withdrawn.
    pub border_var_max: f64,
    pub grow_depth_tol: f64,
    pub grow_connectivity: Connectivity,
    /// Radius (px) within which keyframe tests vote on a seed.
    pub vote_radius: f64,
    /// Semantic components overlapping the geometric mask by more than this
    /// fraction of their area are replaced by the geometric mask.
    pub fusion_overlap: f64,
}

impl Default for SegParams {
    fn default() -> Self {
        Self {
            tau_z: 0.4,
            parallax_max: 30.0,
            overlap_keyframes: 5,
            border_patch: 7,
            border_var_max: 0.04,
            grow_depth_tol: 0.05,
            grow_connectivity: Connectivity::Eight,
            vote_radius: 8.0,
            fusion_overlap: 0.2,
        }
    }
}

impl SegParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau_z > 0.0) {
            return Err(Error::Config(format!("tau_z must be positive, got {}", self.tau_z)));
        }
        if !(self.parallax_max > 0.0 && self.parallax_max < 90.0) {
            return Err(Error::Config(format!(
                "parallax_max must be in (0, 90), got {}",
                self.parallax_max
            )));
        }
        if self.overlap_keyframes == 0 {
            return Err(Error::Config("overlap_keyframes must be at least 1".into()));
        }
        if self.border_patch == 0 {
            return Err(Error::Config("border_patch must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum KeypointLabel {
    Static,
    Dynamic,
    HighParallax,
    NoDepth,
    OutOfView,
}

/// Outcome of testing one keyframe keypoint against the current frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Classification {
    pub label: KeypointLabel,
    /// Projection into the current frame, with the projected depth.
    pub projected: Option<PixelObs>,
    pub parallax: Option<f64>,
    /// Measured depth at the projection.
    pub measured: Option<f64>,
    /// Projected minus measured depth.
    pub delta_z: Option<f64>,
}

/// Keyframes ranked by view overlap with `current`: relative translation over
/// 0.5 m plus relative rotation over 30°, lowest first, ties to the most
/// recent. The keyframe of `exclude_frame` (the current frame) is skipped.
pub fn select_overlap_keyframes<'a, I>(
    keyframes: I,
    current: &Pose,
    n: usize,
    exclude_frame: Option<usize>,
) -> Vec<&'a Keyframe>
where
    I: IntoIterator<Item = &'a Keyframe>,
{
    let mut scored: Vec<(f64, &Keyframe)> = keyframes
        .into_iter()
        .filter(|kf| Some(kf.frame_index) != exclude_frame)
        .map(|kf| (overlap_score(&kf.pose, current), kf))
        .collect();
    scored.sort_by(|a, b| a.0.total_cmp(&b.0).then(b.1.frame_index.cmp(&a.1.frame_index)));
    scored.into_iter().take(n).map(|(_, kf)| kf).collect()
}

pub fn overlap_score(a: &Pose, b: &Pose) -> f64 {
    let (angle, dist) = a.distance(b);
    dist / 0.5 + angle.to_degrees() / 30.0
}

/// Tests one keyframe keypoint at `(u, v)` with depth `z_kf` against the
/// current frame's depth map.
#[allow(clippy::too_many_arguments)]
pub fn classify_keypoint(
    u: f64,
    v: f64,
    z_kf: f64,
    pose_kf: &Pose,
    pose_cf: &Pose,
    cf_depth: &DepthMap,
    k: &Intrinsics,
    p: &SegParams,
) -> Result<Classification> {
    if !(z_kf > 0.0) {
        return Err(Error::NonPositiveDepth(z_kf));
    }
    let mut out = Classification {
        label: KeypointLabel::OutOfView,
        projected: None,
        parallax: None,
        measured: None,
        delta_z: None,
    };
    let world = pose_kf.transform_point(&backproject_raw(u, v, z_kf, k));
    let Some(px) = project(&pose_cf.inverse().transform_point(&world), k) else {
        return Ok(out);
    };
    out.projected = Some(px);
    let alpha = parallax_angle(&world, &pose_kf.center(), &pose_cf.center()).unwrap_or(90.0);
    out.parallax = Some(alpha);
    if alpha > p.parallax_max {
        out.label = KeypointLabel::HighParallax;
        return Ok(out);
    }
    let Some(measured) = cf_depth.bilinear_valid(px.u, px.v) else {
        out.label = KeypointLabel::NoDepth;
        return Ok(out);
    };
    let z_proj = px.depth.unwrap_or(0.0);
    let dz = z_proj - measured;
    out.measured = Some(measured);
    out.delta_z = Some(dz);
    out.label = if dz > p.tau_z {
        KeypointLabel::Dynamic
    } else {
        KeypointLabel::Static
    };
    Ok(out)
}

/// Population variance of the valid depths in the patch centered on the
/// nearest pixel to `(u, v)`; `None` when the patch has no valid depth.
pub fn patch_depth_variance(depth: &DepthMap, u: f64, v: f64, patch: u32) -> Option<f64> {
    let half = (patch / 2) as i64;
    let (cx, cy) = (u.round() as i64, v.round() as i64);
    let (w, h) = (depth.width() as i64, depth.height() as i64);
    let mut n = 0usize;
    let mut sum = 0.0;
    let mut sum2 = 0.0;
    for y in (cy - half).max(0)..=(cy + half).min(h - 1) {
        for x in (cx - half).max(0)..=(cx + half).min(w - 1) {
            if let Some(z) = depth.valid(x as u32, y as u32) {
                n += 1;
                sum += z;
                sum2 += z * z;
            }
        }
    }
    if n == 0 {
        return None;
    }
    let mean = sum / n as f64;
    Some((sum2 / n as f64 - mean * mean).max(0.0))
}

/// Withdraws a dynamic label that sits on a depth discontinuity.
pub fn border_correction(label: KeypointLabel, projected: &PixelObs, cf_depth: &DepthMap, p: &SegParams) -> KeypointLabel {
    if label != KeypointLabel::Dynamic {
        return label;
    }
    match patch_depth_variance(cf_depth, projected.u, projected.v, p.border_patch) {
        Some(var) if var > p.border_var_max => KeypointLabel::Static,
        _ => label,
    }
}

/// Flood fill through pixels whose depth differs from the current pixel by
/// at most the tolerance. Seeds are always part of the result.
pub fn grow_mask(seeds: &[(u32, u32)], depth: &DepthMap, p: &SegParams) -> Mask {
    let (w, h) = depth.dims();
    let mut mask = Mask::new(w, h);
    let mut queue = VecDeque::new();
    for &(x, y) in seeds {
        if x < w && y < h && !mask.get(x, y) {
            mask.set(x, y, true);
            queue.push_back((x, y));
        }
    }
    let offsets = p.grow_connectivity.offsets();
    while let Some((x, y)) = queue.pop_front() {
        let Some(z) = depth.valid(x, y) else { continue };
        for &(dx, dy) in offsets {
            let (nx, ny) = (x as i64 + dx, y as i64 + dy);
            if nx < 0 || ny < 0 || nx >= w as i64 || ny >= h as i64 {
                continue;
            }
            let (nx, ny) = (nx as u32, ny as u32);
            if mask.get(nx, ny) {
                continue;
            }
            if let Some(zn) = depth.valid(nx, ny) {
                if (zn - z).abs() <= p.grow_depth_tol {
                    mask.set(nx, ny, true);
                    queue.push_back((nx, ny));
                }
            }
        }
    }
    mask
}

/// 8-connected components of a mask, each as a list of pixels in raster order
/// of discovery.
pub fn connected_components(mask: &Mask) -> Vec<Vec<(u32, u32)>> {
    let (w, h) = mask.dims();
    let mut seen = Mask::new(w, h);
    let mut out = Vec::new();
    for y in 0..h {
        for x in 0..w {
            if !mask.get(x, y) || seen.get(x, y) {
                continue;
            }
            let mut comp = vec![(x, y)];
            seen.set(x, y, true);
            let mut i = 0;
            while i < comp.len() {
                let (cx, cy) = comp[i];
                i += 1;
                for &(dx, dy) in Connectivity::Eight.offsets() {
                    let (nx, ny) = (cx as i64 + dx, cy as i64 + dy);
                    if mask.get_checked(nx, ny) && !seen.get(nx as u32, ny as u32) {
                        seen.set(nx as u32, ny as u32, true);
                        comp.push((nx as u32, ny as u32));
                    }
                }
            }
            out.push(comp);
        }
    }
    out
}

/// Geometric mask plus the semantic components it does not already explain.
pub fn fuse_masks(geometric: &Mask, semantic: &Mask, overlap: f64) -> Result<Mask> {
    semantic.ensure_dims(geometric.dims())?;
    let mut fused = geometric.clone();
    for comp in connected_components(semantic) {
        let hit = comp.iter().filter(|&&(x, y)| geometric.get(x, y)).count();
        if hit as f64 > overlap * comp.len() as f64 {
            continue;
        }
        for (x, y) in comp {
            fused.set(x, y, true);
        }
    }
    Ok(fused)
}

/// One keyframe keypoint tested against the current frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KeypointTest {
    /// Position of the keyframe in the selection passed in.
    pub slot: usize,
    pub keypoint: usize,
    /// Label after the border check.
    pub label: KeypointLabel,
    pub classification: Classification,
    /// Whether the border check would withdraw a dynamic label here.
    pub on_border: bool,
}

/// Tests every keypoint with depth of every keyframe in `keyframes`.
pub fn keypoint_tests(
    keyframes: &[&Keyframe],
    pose_cf: &Pose,
    cf_depth: &DepthMap,
    k: &Intrinsics,
    p: &SegParams,
) -> Vec<KeypointTest> {
    let per_kf: Vec<Vec<KeypointTest>> = keyframes
        .par_iter()
        .enumerate()
        .map(|(slot, kf)| {
            kf.keypoints
                .iter()
                .zip(&kf.depths)
                .enumerate()
                .filter_map(|(i, (kp, z))| {
                    let z = (*z)?;
                    let c = classify_keypoint(kp.u, kp.v, z, &kf.pose, pose_cf, cf_depth, k, p).ok()?;
                    let on_border = c.delta_z.is_some()
                        && c.projected.is_some_and(|px| {
                            patch_depth_variance(cf_depth, px.u, px.v, p.border_patch)
                                .is_some_and(|var| var > p.border_var_max)
                        });
                    let label = if c.label == KeypointLabel::Dynamic && on_border {
                        KeypointLabel::Static
                    } else {
                        c.label
                    };
                    Some(KeypointTest {
                        slot,
                        keypoint: i,
                        label,
                        classification: c,
                        on_border,
                    })
                })
                .collect()
        })
        .collect();
    per_kf.into_iter().flatten().collect()
}

/// Pixels of dynamic tests confirmed by a majority of the keyframes that
/// observe the neighbourhood. Each keyframe with conclusive tests within
/// `vote_radius` votes its own majority label (ties count as static).
pub fn vote_seeds(tests: &[KeypointTest], slots: usize, dims: (u32, u32), radius: f64) -> Vec<(u32, u32)> {
    let conclusive: Vec<&KeypointTest> = tests
        .iter()
        .filter(|t| matches!(t.label, KeypointLabel::Static | KeypointLabel::Dynamic))
        .collect();
    let r2 = radius * radius;
    let mut seeds = Vec::new();
    for t in conclusive.iter().filter(|t| t.label == KeypointLabel::Dynamic) {
        let Some(px) = t.classification.projected else { continue };
        let mut counts = vec![(0usize, 0usize); slots];
        for o in &conclusive {
            let Some(q) = o.classification.projected else { continue };
            let (du, dv) = (q.u - px.u, q.v - px.v);
            if du * du + dv * dv <= r2 {
                let c = &mut counts[o.slot];
                if o.label == KeypointLabel::Dynamic {
                    c.0 += 1;
                } else {
                    c.1 += 1;
                }
            }
        }
        let (mut dynamic, mut stat) = (0, 0);
        for (d, s) in counts {
            if d + s == 0 {
                continue;
            }
            if d > s {
                dynamic += 1;
            } else {
                stat += 1;
            }
        }
        if dynamic > stat {
            if let Some(pix) = px.pixel(dims.0, dims.1) {
                seeds.push(pix);
            }
        }
    }
    seeds.sort_unstable();
    seeds.dedup();
    seeds
}

#[derive(Debug, Clone, PartialEq)]
pub struct DynMask {
    pub geometric: Mask,
    pub semantic: Mask,
    pub fused: Mask,
    /// Current-frame pixels that seeded the geometric mask.
    pub dynamic_keypoints: Vec<(u32, u32)>,
}

/// Full segmentation of one frame. With no usable keyframe this reduces to
/// the semantic mask (empty when there is none).
#[allow(clippy::too_many_arguments)]
pub fn segment_frame<'a, I>(
    cf_depth: &DepthMap,
    semantic: Option<&Mask>,
    keyframes: I,
    pose_cf: &Pose,
    frame_index: Option<usize>,
    k: &Intrinsics,
    p: &SegParams,
) -> Result<DynMask>
where
    I: IntoIterator<Item = &'a Keyframe>,
{
    p.validate()?;
    let dims = cf_depth.dims();
    let semantic = match semantic {
        Some(m) => {
            m.ensure_dims(dims)?;
            m.clone()
        }
        None => Mask::new(dims.0, dims.1),
    };
    let selected = select_overlap_keyframes(keyframes, pose_cf, p.overlap_keyframes, frame_index);
    let tests = keypoint_tests(&selected, pose_cf, cf_depth, k, p);
    let seeds = vote_seeds(&tests, selected.len(), dims, p.vote_radius);
    let geometric = grow_mask(&seeds, cf_depth, p);
    let fused = fuse_masks(&geometric, &semantic, p.fusion_overlap)?;
    Ok(DynMask {
        geometric,
        semantic,
        fused,
        dynamic_keypoints: seeds,
    })
}

/// A frame with ground-truth dynamic mask for threshold selection.
#[derive(Debug, Clone)]
pub struct LabeledFrame<'a> {
    pub frame_index: Option<usize>,
    pub pose: Pose,
    pub depth: &'a DepthMap,
    pub gt_mask: &'a Mask,
    pub keyframes: Vec<&'a Keyframe>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SweepRow {
    pub tau_z: f64,
    pub precision: f64,
    pub recall: f64,
    pub score: f64,
    pub true_positives: usize,
    pub false_positives: usize,
    pub false_negatives: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepResult {
    pub best_tau_z: f64,
    pub rows: Vec<SweepRow>,
}

/// Precision and recall with the empty-case conventions: precision is 1 when
/// nothing is predicted, recall is 1 when nothing is positive.
pub fn precision_recall(tp: usize, fp: usize, fn_: usize) -> (f64, f64) {
    let precision = if tp + fp == 0 { 1.0 } else { tp as f64 / (tp + fp) as f64 };
    let recall = if tp + fn_ == 0 { 1.0 } else { tp as f64 / (tp + fn_) as f64 };
    (precision, recall)
}

/// Picks the depth threshold maximizing `wp·P + wr·R` of keypoint-level
/// dynamic labels against ground-truth masks. Ties go to the smaller value.
pub fn sweep_tau_z(
    frames: &[LabeledFrame<'_>],
    candidates: &[f64],
    weights: (f64, f64),
    k: &Intrinsics,
    p: &SegParams,
) -> Result<SweepResult> {
    if candidates.is_empty() {
        return Err(Error::Config("no tau_z candidates".into()));
    }
    if let Some(bad) = candidates.iter().find(|&&t| !(t > 0.0)) {
        return Err(Error::Config(format!("tau_z candidate must be positive, got {bad}")));
    }
    // (Δz, on_border, ground-truth dynamic) for every conclusive test
    let mut samples: Vec<(f64, bool, bool)> = Vec::new();
    for f in frames {
        f.gt_mask.ensure_dims(f.depth.dims())?;
        let selected = select_overlap_keyframes(
            f.keyframes.iter().copied(),
            &f.pose,
            p.overlap_keyframes,
            f.frame_index,
        );
        for t in keypoint_tests(&selected, &f.pose, f.depth, k, p) {
            let (Some(dz), Some(px)) = (t.classification.delta_z, t.classification.projected) else {
                continue;
            };
            let Some((x, y)) = px.pixel(f.depth.width(), f.depth.height()) else {
                continue;
            };
            samples.push((dz, t.on_border, f.gt_mask.get(x, y)));
        }
    }
    let mut rows = Vec::with_capacity(candidates.len());
    for &tau in candidates {
        let (mut tp, mut fp, mut fn_) = (0, 0, 0);
        for &(dz, border, positive) in &samples {
            let predicted = dz > tau && !border;
            match (predicted, positive) {
                (true, true) => tp += 1,
                (true, false) => fp += 1,
                (false, true) => fn_ += 1,
                (false, false) => {}
            }
        }
        let (precision, recall) = precision_recall(tp, fp, fn_);
        rows.push(SweepRow {
            tau_z: tau,
            precision,
            recall,
            score: weights.0 * precision + weights.1 * recall,
            true_positives: tp,
            false_positives: fp,
            false_negatives: fn_,
        });
    }
    let best = rows
        .iter()
        .fold(None::<&SweepRow>, |best, r| match best {
            Some(b) if b.score > r.score || (b.score == r.score && b.tau_z <= r.tau_z) => Some(b),
            _ => Some(r),
        })
        .expect("candidates are non-empty");
    Ok(SweepResult {
        best_tau_z: best.tau_z,
        rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::Keypoint;
    use crate::geometry::Twist;
    use image::RgbImage;
    use proptest::prelude::*;

    fn k() -> Intrinsics {
        Intrinsics::new(500.0, 500.0, 31.5, 31.5, 64, 64).unwrap()
    }

    fn constant_depth(w: u32, h: u32, z: f32) -> DepthMap {
        DepthMap::from_vec(w, h, vec![z; (w * h) as usize]).unwrap()
    }

    fn keyframe(frame_index: usize, pose: Pose) -> Keyframe {
        Keyframe {
            frame_index,
            timestamp: frame_index as f64,
            pose,
            keypoints: Vec::new(),
            depths: Vec::new(),
            rgb: RgbImage::new(64, 64),
            depth: DepthMap::new(64, 64),
            dynamic_mask: Mask::new(64, 64),
        }
    }

    #[test]
    fn overlap_selection() {
        let one = [keyframe(0, Pose::from_translation(3.0, 0.0, 0.0))];
        assert_eq!(select_overlap_keyframes(one.iter(), &Pose::identity(), 5, None).len(), 1);

        let line: Vec<Keyframe> = (0..10)
            .map(|i| keyframe(i, Pose::from_translation(0.1 * i as f64 - 0.45, 0.0, 0.0)))
            .collect();
        let current = Pose::from_translation(0.0, 0.0, 0.0);
        let picked: Vec<usize> = select_overlap_keyframes(line.iter(), &current, 5, None)
            .iter()
            .map(|k| k.frame_index)
            .collect();
        // Brute force: sort indices by score.
        let mut oracle: Vec<(f64, usize)> = line
            .iter()
            .map(|kf| (kf.pose.translation().norm() / 0.5, kf.frame_index))
            .collect();
        oracle.sort_by(|a, b| a.0.total_cmp(&b.0).then(b.1.cmp(&a.1)));
        let oracle: Vec<usize> = oracle.iter().take(5).map(|x| x.1).collect();
        assert_eq!(picked, oracle);
        assert_eq!(picked.len(), 5);

        let same = select_overlap_keyframes(line.iter(), &line[7].pose, 1, None);
        assert_eq!(same[0].frame_index, 7);
        let excluded = select_overlap_keyframes(line.iter(), &line[7].pose, 1, Some(7));
        assert_ne!(excluded[0].frame_index, 7);
    }

    #[test]
    fn classify_static_point_exactly() {
        let p = SegParams::default();
        let kf = Pose::identity();
        let cf = Pose::from_translation(0.1, 0.0, 0.0);
        let depth = constant_depth(64, 64, 2.0);
        let c = classify_keypoint(31.5, 31.5, 2.0, &kf, &cf, &depth, &k(), &p).unwrap();
        assert_eq!(c.label, KeypointLabel::Static);
        assert!(c.delta_z.unwrap().abs() < 1e-12);
    }

    #[test]
    fn classify_dynamic_threshold() {
        let p = SegParams::default();
        // Occluder at 1.5 m in front of a point expected at 2.0 m.
        let depth = constant_depth(64, 64, 1.5);
        let c = classify_keypoint(31.5, 31.5, 2.0, &Pose::identity(), &Pose::identity(), &depth, &k(), &p).unwrap();
        assert_eq!(c.label, KeypointLabel::Dynamic);
        assert!((c.delta_z.unwrap() - 0.5).abs() < 1e-6);
        // Farther measured depth is never dynamic.
        let depth = constant_depth(64, 64, 3.0);
        let c = classify_keypoint(31.5, 31.5, 2.0, &Pose::identity(), &Pose::identity(), &depth, &k(), &p).unwrap();
        assert_eq!(c.label, KeypointLabel::Static);
    }

    #[test]
    fn classify_high_parallax_wins_over_depth() {
        let p = SegParams::default();
        // Point at (0,0,1); second camera moved so that the angle is 35° and
        // rotated to keep the point centered.
        let alpha = 35f64.to_radians();
        let center = nalgebra::Vector3::new(alpha.sin(), 0.0, 1.0 - alpha.cos());
        let rot = nalgebra::UnitQuaternion::from_axis_angle(&nalgebra::Vector3::y_axis(), -alpha);
        let cf = Pose::from_parts(rot, center);
        let depth = constant_depth(64, 64, 0.2);
        let c = classify_keypoint(31.5, 31.5, 1.0, &Pose::identity(), &cf, &depth, &k(), &p).unwrap();
        assert!((c.parallax.unwrap() - 35.0).abs() < 1e-9);
        assert_eq!(c.label, KeypointLabel::HighParallax);
    }

    #[test]
    fn classify_no_depth_and_out_of_view() {
        let p = SegParams::default();
        let c = classify_keypoint(31.5, 31.5, 2.0, &Pose::identity(), &Pose::identity(), &DepthMap::new(64, 64), &k(), &p)
            .unwrap();
        assert_eq!(c.label, KeypointLabel::NoDepth);
        let cf = Pose::from_translation(5.0, 0.0, 0.0);
        let c = classify_keypoint(31.5, 31.5, 2.0, &Pose::identity(), &cf, &constant_depth(64, 64, 2.0), &k(), &p)
            .unwrap();
        assert_eq!(c.label, KeypointLabel::OutOfView);
        assert!(classify_keypoint(1.0, 1.0, 0.0, &Pose::identity(), &cf, &DepthMap::new(64, 64), &k(), &p).is_err());
    }

    #[test]
    fn border_check() {
        let p = SegParams::default();
        let flat = constant_depth(64, 64, 2.0);
        let at = PixelObs::new(20.0, 20.0, 2.5);
        assert_eq!(border_correction(KeypointLabel::Dynamic, &at, &flat, &p), KeypointLabel::Dynamic);
        assert_eq!(
            border_correction(KeypointLabel::Dynamic, &at, &DepthMap::new(64, 64), &p),
            KeypointLabel::Dynamic
        );
        // 1 m step through the middle of the patch: columns 17..=19 at 1 m,
        // 20..=23 at 2 m.
        let mut step = constant_depth(64, 64, 2.0);
        for y in 0..64 {
            for x in 0..20 {
                step.set(x, y, 1.0);
            }
        }
        let var = patch_depth_variance(&step, 20.0, 20.0, 7).unwrap();
        let vals: Vec<f64> = (17..=23)
            .flat_map(|x| std::iter::repeat_n(if x < 20 { 1.0 } else { 2.0 }, 7))
            .collect();
        let mean = vals.iter().sum::<f64>() / vals.len() as f64;
        let oracle = vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / vals.len() as f64;
        assert!((var - oracle).abs() < 1e-12);
        assert!(var > 0.04);
        assert_eq!(border_correction(KeypointLabel::Dynamic, &at, &step, &p), KeypointLabel::Static);
        assert_eq!(border_correction(KeypointLabel::Static, &at, &step, &p), KeypointLabel::Static);
    }

    fn rectangle_scene() -> DepthMap {
        let mut d = constant_depth(32, 32, 3.0);
        for y in 8..20 {
            for x in 5..25 {
                d.set(x, y, 1.0);
            }
        }
        d
    }

    #[test]
    fn grow_fills_constant_rectangle() {
        let p = SegParams::default();
        assert!(grow_mask(&[], &rectangle_scene(), &p).is_empty());
        let m = grow_mask(&[(10, 10)], &rectangle_scene(), &p);
        let oracle = Mask::from_fn(32, 32, |x, y| (5..25).contains(&x) && (8..20).contains(&y));
        assert_eq!(m, oracle);
        let mut holes = rectangle_scene();
        holes.set(10, 10, 0.0);
        let m = grow_mask(&[(10, 10)], &holes, &p);
        assert_eq!(m.count(), 1);
        assert!(m.get(10, 10));
    }

    #[test]
    fn fusion_rules() {
        let geo = Mask::from_fn(64, 64, |x, y| (10..30).contains(&x) && (10..30).contains(&y));
        // Blob A half covered by geo, blob B disjoint.
        let sem = Mask::from_fn(64, 64, |x, y| {
            ((20..40).contains(&x) && (10..30).contains(&y)) || ((50..60).contains(&x) && (50..60).contains(&y))
        });
        let fused = fuse_masks(&geo, &sem, 0.2).unwrap();
        let oracle = Mask::from_fn(64, 64, |x, y| geo.get(x, y) || ((50..60).contains(&x) && (50..60).contains(&y)));
        assert_eq!(fused, oracle);
        assert_eq!(fuse_masks(&geo, &Mask::new(64, 64), 0.2).unwrap(), geo);
        assert_eq!(fuse_masks(&Mask::new(64, 64), &sem, 0.2).unwrap(), sem);
        assert!(fuse_masks(&geo, &Mask::new(32, 64), 0.2).is_err());
    }

    #[test]
    fn empty_buffer_is_semantic_only() {
        let depth = constant_depth(64, 64, 2.0);
        let sem = Mask::from_fn(64, 64, |x, _| x < 10);
        let out = segment_frame(&depth, Some(&sem), std::iter::empty(), &Pose::identity(), None, &k(), &SegParams::default())
            .unwrap();
        assert_eq!(out.fused, sem);
        assert!(out.geometric.is_empty());
    }

    #[test]
    fn segment_detects_box_in_front_of_wall() {
        // Keyframe saw a wall at 3 m; the current frame has a box at 1 m.
        let k = k();
        let kps: Vec<Keypoint> = (0..8)
            .flat_map(|j| (0..8).map(move |i| (4.0 + 8.0 * i as f64, 4.0 + 8.0 * j as f64)))
            .map(|(u, v)| Keypoint {
                u,
                v,
                response: 1.0,
                angle: 0.0,
                descriptor: [0; 4],
            })
            .collect();
        let mut kf = keyframe(0, Pose::identity());
        kf.depths = vec![Some(3.0); kps.len()];
        kf.keypoints = kps;
        let mut cf_depth = constant_depth(64, 64, 3.0);
        for y in 16..40 {
            for x in 16..40 {
                cf_depth.set(x, y, 1.0);
            }
        }
        let out = segment_frame(&cf_depth, None, [&kf], &Pose::identity(), Some(1), &k, &SegParams::default()).unwrap();
        let truth = Mask::from_fn(64, 64, |x, y| (16..40).contains(&x) && (16..40).contains(&y));
        assert_eq!(out.geometric, truth);
        for &(x, y) in &out.dynamic_keypoints {
            assert!(out.geometric.get(x, y));
        }
    }

    #[test]
    fn sweep_picks_weighted_maximum() {
        let k = k();
        let mut kf = keyframe(0, Pose::identity());
        kf.keypoints = (0..6)
            .map(|i| Keypoint {
                u: 8.0 + 8.0 * i as f64,
                v: 31.0,
                response: 1.0,
                angle: 0.0,
                descriptor: [0; 4],
            })
            .collect();
        kf.depths = vec![Some(3.0); 6];
        let mut depth = constant_depth(64, 64, 3.0);
        // Δz of 0.35, 0.75, 1.5 on the first three columns of keypoints.
        for (i, z) in [(0usize, 2.65f32), (1, 2.25), (2, 1.5)] {
            let cx = 8 + 8 * i as u32;
            for y in 20..44 {
                for x in cx - 3..=cx + 3 {
                    depth.set(x, y, z);
                }
            }
        }
        let gt = Mask::from_fn(64, 64, |x, _| (13..=19).contains(&x) || (21..=27).contains(&x));
        let frames = [LabeledFrame {
            frame_index: Some(1),
            pose: Pose::identity(),
            depth: &depth,
            gt_mask: &gt,
            keyframes: vec![&kf],
        }];
        let cands: Vec<f64> = (1..=10).map(|i| i as f64 / 10.0).collect();
        let r = sweep_tau_z(&frames, &cands, (0.7, 0.3), &k, &SegParams::default()).unwrap();
        // Exhaustive recomputation from the per-keypoint classifier.
        let mut best = (f64::NEG_INFINITY, 0.0);
        for &tau in &cands {
            let p = SegParams { tau_z: tau, ..SegParams::default() };
            let (mut tp, mut fp, mut fn_) = (0, 0, 0);
            for (kp, z) in kf.keypoints.iter().zip(&kf.depths) {
                let c = classify_keypoint(kp.u, kp.v, z.unwrap(), &kf.pose, &Pose::identity(), &depth, &k, &p).unwrap();
                let px = c.projected.unwrap();
                let label = border_correction(c.label, &px, &depth, &p);
                let pos = gt.get(px.u.round() as u32, px.v.round() as u32);
                match (label == KeypointLabel::Dynamic, pos) {
                    (true, true) => tp += 1,
                    (true, false) => fp += 1,
                    (false, true) => fn_ += 1,
                    _ => {}
                }
            }
            let (pr, rc) = precision_recall(tp, fp, fn_);
            let s = 0.7 * pr + 0.3 * rc;
            if s > best.0 {
                best = (s, tau);
            }
        }
        assert_eq!(r.best_tau_z, best.1);
        assert_eq!(r.rows.len(), 10);

        let single = sweep_tau_z(&frames, &[0.4], (0.7, 0.3), &k, &SegParams::default()).unwrap();
        assert_eq!(single.best_tau_z, 0.4);
    }

    #[test]
    fn precision_recall_conventions() {
        assert_eq!(precision_recall(0, 0, 5), (1.0, 0.0));
        assert_eq!(precision_recall(0, 0, 0), (1.0, 1.0));
        assert_eq!(precision_recall(3, 1, 0), (0.75, 1.0));
    }

    fn small_twist() -> impl Strategy<Value = Twist> {
        prop::array::uniform6(-0.3f64..0.3).prop_map(Twist::from)
    }

    proptest! {
        #[test]
        fn classification_depends_only_on_relative_pose(
            g in prop::array::uniform6(-2.0f64..2.0),
            a in small_twist(),
            u in 5.0f64..58.0,
            v in 5.0f64..58.0,
            z in 0.5f64..4.0,
        ) {
            let p = SegParams::default();
            let depth = constant_depth(64, 64, 2.0);
            let kf = Pose::identity();
            let cf = Pose::exp(&(a * 0.1));
            let g = Pose::exp(&Twist::from(g));
            let c1 = classify_keypoint(u, v, z, &kf, &cf, &depth, &k(), &p).unwrap();
            let c2 = classify_keypoint(u, v, z, &g.compose(&kf), &g.compose(&cf), &depth, &k(), &p).unwrap();
            match (c1.delta_z, c2.delta_z) {
                (Some(a), Some(b)) => prop_assert!((a - b).abs() < 1e-9),
                (None, None) => {}
                _ => prop_assert!(c1.label == c2.label),
            }
        }

        #[test]
        fn grow_contains_seeds_and_is_monotone(
            vals in prop::collection::vec(0u8..6, 16 * 16),
            seeds in prop::collection::vec((0u32..16, 0u32..16), 0..4),
            tol_a in 0.0f64..0.3,
            tol_b in 0.0f64..0.3,
        ) {
            let data: Vec<f32> = vals.iter().map(|&v| if v == 0 { 0.0 } else { 1.0 + 0.1 * v as f32 }).collect();
            let depth = DepthMap::from_vec(16, 16, data).unwrap();
            let (lo, hi) = if tol_a < tol_b { (tol_a, tol_b) } else { (tol_b, tol_a) };
            let small = grow_mask(&seeds, &depth, &SegParams { grow_depth_tol: lo, ..SegParams::default() });
            let big = grow_mask(&seeds, &depth, &SegParams { grow_depth_tol: hi, ..SegParams::default() });
            for &(x, y) in &seeds {
                prop_assert!(small.get(x, y));
            }
            prop_assert_eq!(small.intersection_count(&big), small.count());
        }

        #[test]
        fn fused_contains_geometric(
            g in prop::collection::vec(any::<bool>(), 12 * 12),
            s in prop::collection::vec(any::<bool>(), 12 * 12),
        ) {
            let geo = Mask::from_fn(12, 12, |x, y| g[(y * 12 + x) as usize]);
            let sem = Mask::from_fn(12, 12, |x, y| s[(y * 12 + x) as usize]);
            let fused = fuse_masks(&geo, &sem, 0.2).unwrap();
            prop_assert_eq!(fused.intersection_count(&geo), geo.count());
        }
    }
}
