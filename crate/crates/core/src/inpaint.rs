//! Fills dynamic regions of a frame with color and depth forward-warped from
//! earlier keyframes. Pixels no keyframe explains are left blank.

use image::{Rgb, RgbImage};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{backproject_raw, project, Intrinsics, PixelObs, Pose};
use crate::raster::{DepthMap, Mask};
use crate::tracking::Keyframe;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct InpaintParams {
    /// Number of most recent keyframes used as sources.
    pub keyframes: usize,
    /// Samples within this depth (m) of the current one count as agreeing;
    /// samples nearer by more replace it.
    pub depth_tol: f64,
}

impl Default for InpaintParams {
    fn default() -> Self {
        Self {
            keyframes: 20,
            depth_tol: 0.05,
        }
    }
}

/// Where an inpainted pixel was copied from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Provenance {
    pub keyframe: usize,
    pub pixel: (u32, u32),
}

#[derive(Debug, Clone, PartialEq)]
pub struct InpaintResult {
    pub rgb: RgbImage,
    pub depth: DepthMap,
    pub coverage: Mask,
    /// Number of keyframes that agreed on each pixel's sample.
    pub source_count: Vec<u8>,
    pub provenance: Vec<Option<Provenance>>,
}

impl InpaintResult {
    pub fn covered_fraction(&self, mask: &Mask) -> f64 {
        let n = mask.count();
        if n == 0 {
            1.0
        } else {
            self.coverage.count() as f64 / n as f64
        }
    }
}

/// A source pixel warped into the destination camera.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Splat {
    /// Nearest destination pixel.
    pub target: (u32, u32),
    /// Sub-pixel projection with the depth in the destination camera.
    pub obs: PixelObs,
}

pub fn splat(
    u: f64,
    v: f64,
    depth: f64,
    pose_src: &Pose,
    pose_dst: &Pose,
    k: &Intrinsics,
) -> Option<Splat> {
    if !(depth > 0.0) {
        return None;
    }
    let world = pose_src.transform_point(&backproject_raw(u, v, depth, k));
    let obs = project(&pose_dst.inverse().transform_point(&world), k)?;
    let target = obs.pixel(k.width, k.height)?;
    Some(Splat { target, obs })
}

/// Per-keyframe z-buffer over the masked destination pixels:
/// `(depth, source pixel index)`.
fn warp_keyframe(kf: &Keyframe, pose: &Pose, mask: &Mask, k: &Intrinsics) -> Vec<Option<(f64, u32)>> {
    let (w, h) = mask.dims();
    let mut zbuf: Vec<Option<(f64, u32)>> = vec![None; (w * h) as usize];
    let rel = pose.inverse().compose(&kf.pose);
    let identity = Pose::identity();
    let (sw, sh) = kf.depth.dims();
    for y in 0..sh {
        for x in 0..sw {
            if kf.dynamic_mask.get_checked(x as i64, y as i64) {
                continue;
            }
            let Some(z) = kf.depth.valid(x, y) else { continue };
            let Some(s) = splat(x as f64, y as f64, z, &rel, &identity, k) else {
                continue;
            };
            let (tx, ty) = s.target;
            if !mask.get(tx, ty) {
                continue;
            }
            let d = s.obs.depth.unwrap_or(f64::INFINITY);
            let slot = &mut zbuf[(ty * w + tx) as usize];
            if slot.is_none_or(|(cur, _)| d < cur) {
                *slot = Some((d, y * sw + x));
            }
        }
    }
    zbuf
}

/// Inpaints the pixels of `mask`. Keyframes are used most recent first;
/// within each keyframe the nearest sample wins, and across keyframes a later
/// sample only replaces an earlier one when it is nearer by more than the
/// depth tolerance. Outside the mask the frame is returned unchanged.
pub fn inpaint_frame<'a, I>(
    rgb: &RgbImage,
    depth: &DepthMap,
    mask: &Mask,
    keyframes: I,
    pose: &Pose,
    k: &Intrinsics,
    params: &InpaintParams,
) -> Result<InpaintResult>
where
    I: IntoIterator<Item = &'a Keyframe>,
{
    let dims = rgb.dimensions();
    if depth.dims() != dims {
        return Err(Error::SizeMismatch {
            expected: dims,
            found: depth.dims(),
        });
    }
    mask.ensure_dims(dims)?;
    let mut sources: Vec<&Keyframe> = keyframes.into_iter().collect();
    sources.sort_by_key(|s| std::cmp::Reverse(s.frame_index));
    sources.truncate(params.keyframes);
    for kf in &sources {
        if kf.depth.dims() != (k.width, k.height) || kf.rgb.dimensions() != (k.width, k.height) {
            return Err(Error::SizeMismatch {
                expected: (k.width, k.height),
                found: kf.depth.dims(),
            });
        }
    }

    let warps: Vec<Vec<Option<(f64, u32)>>> = if mask.is_empty() {
        Vec::new()
    } else {
        sources.par_iter().map(|kf| warp_keyframe(kf, pose, mask, k)).collect()
    };

    let (w, h) = dims;
    let n = (w * h) as usize;
    let mut best: Vec<Option<(f64, usize, u32)>> = vec![None; n];
    let mut source_count = vec![0u8; n];
    for (slot, warp) in warps.iter().enumerate() {
        for (i, sample) in warp.iter().enumerate() {
            let Some((d, src)) = *sample else { continue };
            match best[i] {
                None => {
                    best[i] = Some((d, slot, src));
                    source_count[i] = 1;
                }
                Some((cur, _, _)) if d < cur - params.depth_tol => {
                    best[i] = Some((d, slot, src));
                    source_count[i] = 1;
                }
                Some((cur, _, _)) if (d - cur).abs() <= params.depth_tol => {
                    source_count[i] = source_count[i].saturating_add(1);
                }
                Some(_) => {}
            }
        }
    }

    let mut out_rgb = rgb.clone();
    let mut out_depth = depth.clone();
    let mut coverage = Mask::new(w, h);
    let mut provenance = vec![None; n];
    for y in 0..h {
        for x in 0..w {
            if !mask.get(x, y) {
                continue;
            }
            let i = (y * w + x) as usize;
            match best[i] {
                Some((d, slot, src)) => {
                    let kf = sources[slot];
                    let sw = kf.rgb.width();
                    let (sx, sy) = (src % sw, src / sw);
                    out_rgb.put_pixel(x, y, *kf.rgb.get_pixel(sx, sy));
                    out_depth.set(x, y, d as f32);
                    coverage.set(x, y, true);
                    provenance[i] = Some(Provenance {
                        keyframe: kf.frame_index,
                        pixel: (sx, sy),
                    });
                }
                None => {
                    out_rgb.put_pixel(x, y, Rgb([0, 0, 0]));
                    out_depth.set(x, y, 0.0);
                }
            }
        }
    }
    Ok(InpaintResult {
        rgb: out_rgb,
        depth: out_depth,
        coverage,
        source_count,
        provenance,
    })
}
