//! Deterministic ray-cast RGB-D sequences with exact depth, poses and
//! dynamic-object masks.
//!
//! Geometry is a set of textured axis-aligned boxes (a box with zero extent
//! along one axis is a rectangle). Moving boxes translate along
//! piecewise-linear paths. Cameras use the usual pinhole convention
//! (x right, y down, z forward).

use std::path::Path;

use image::{Rgb, RgbImage};
use nalgebra::{UnitQuaternion, Vector3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{write_file_list, Trajectory};
use crate::error::{Error, Result};
use crate::geometry::{Intrinsics, Point3, Pose};
use crate::raster::{self, DepthMap, Mask, TUM_DEPTH_SCALE};

/// Cells of random intensity between `low` and `high`, multiplied by `tint`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Texture {
    /// Cell edge length (m).
    pub cell: f64,
    pub low: u8,
    pub high: u8,
    pub tint: [f64; 3],
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoxSpec {
    pub min: [f64; 3],
    pub max: [f64; 3],
    pub texture: Texture,
}

/// Box position at a given (fractional) frame index.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CenterKey {
    pub frame: f64,
    pub center: [f64; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DynamicBox {
    pub size: [f64; 3],
    pub texture: Texture,
    pub path: Vec<CenterKey>,
}

/// Camera pose key: position plus yaw (about y) then pitch (about x), degrees.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraKey {
    pub frame: f64,
    pub position: [f64; 3],
    pub yaw_deg: f64,
    pub pitch_deg: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub intrinsics: Intrinsics,
    pub frames: usize,
    pub fps: f64,
    pub start_time: f64,
    pub static_boxes: Vec<BoxSpec>,
    pub dynamic_boxes: Vec<DynamicBox>,
    pub camera_path: Vec<CameraKey>,
    /// Standard deviation of additive depth noise (m).
    #[serde(default)]
    pub depth_noise: f64,
    /// Standard deviation of additive intensity noise (0-255 scale).
    #[serde(default)]
    pub pixel_noise: f64,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthFrame {
    pub index: usize,
    pub timestamp: f64,
    pub rgb: RgbImage,
    pub depth: DepthMap,
    pub gt_pose: Pose,
    pub gt_dynamic_mask: Mask,
    pub gt_background_rgb: RgbImage,
    pub gt_background_depth: DepthMap,
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

impl Texture {
    /// Color of the cell containing `(a, b)` on face `face` (0..6).
    pub fn color(&self, face: u64, a: f64, b: f64) -> [u8; 3] {
        let ca = (a / self.cell).floor() as i64 as u64;
        let cb = (b / self.cell).floor() as i64 as u64;
        let h = splitmix(self.seed ^ splitmix(face ^ splitmix(ca ^ splitmix(cb))));
        let span = self.high.saturating_sub(self.low) as u64 + 1;
        let i = (self.low as u64 + h % span) as f64;
        self.tint.map(|t| (i * t).round().clamp(0.0, 255.0) as u8)
    }
}

/// Axis-aligned box in world coordinates with its texture origin.
#[derive(Debug, Clone, Copy)]
struct Solid<'a> {
    min: Vector3<f64>,
    max: Vector3<f64>,
    texture: &'a Texture,
    dynamic: bool,
}

/// Entry distance along the ray and the axis of the entered face.
pub fn ray_box(origin: &Vector3<f64>, dir: &Vector3<f64>, min: &Vector3<f64>, max: &Vector3<f64>) -> Option<(f64, usize)> {
    let mut t_enter = f64::NEG_INFINITY;
    let mut t_exit = f64::INFINITY;
    let mut axis = 0;
    for i in 0..3 {
        if dir[i].abs() < 1e-15 {
            if origin[i] < min[i] || origin[i] > max[i] {
                return None;
            }
            continue;
        }
        let a = (min[i] - origin[i]) / dir[i];
        let b = (max[i] - origin[i]) / dir[i];
        let (near, far) = if a < b { (a, b) } else { (b, a) };
        if near > t_enter {
            t_enter = near;
            axis = i;
        }
        t_exit = t_exit.min(far);
    }
    (t_enter <= t_exit && t_enter > 1e-9).then_some((t_enter, axis))
}

fn lerp3(a: &[f64; 3], b: &[f64; 3], t: f64) -> [f64; 3] {
    [0, 1, 2].map(|i| a[i] + (b[i] - a[i]) * t)
}

/// Bracketing keys and blend factor for a piecewise-linear path.
fn bracket<T>(keys: &[T], frame: f64, key_frame: impl Fn(&T) -> f64) -> (usize, usize, f64) {
    if frame <= key_frame(&keys[0]) || keys.len() == 1 {
        return (0, 0, 0.0);
    }
    for i in 1..keys.len() {
        let (f0, f1) = (key_frame(&keys[i - 1]), key_frame(&keys[i]));
        if frame <= f1 {
            let t = if f1 > f0 { (frame - f0) / (f1 - f0) } else { 1.0 };
            return (i - 1, i, t);
        }
    }
    let last = keys.len() - 1;
    (last, last, 0.0)
}

impl CameraKey {
    fn pose(&self) -> Pose {
        let yaw = UnitQuaternion::from_axis_angle(&Vector3::y_axis(), self.yaw_deg.to_radians());
        let pitch = UnitQuaternion::from_axis_angle(&Vector3::x_axis(), self.pitch_deg.to_radians());
        Pose::from_parts(yaw * pitch, Vector3::from(self.position))
    }
}

impl DynamicBox {
    pub fn center_at(&self, frame: f64) -> [f64; 3] {
        let (a, b, t) = bracket(&self.path, frame, |k| k.frame);
        lerp3(&self.path[a].center, &self.path[b].center, t)
    }

    fn bounds_at(&self, frame: f64) -> (Vector3<f64>, Vector3<f64>) {
        let c = Vector3::from(self.center_at(frame));
        let h = Vector3::from(self.size) * 0.5;
        (c - h, c + h)
    }
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidScene(m));
        self.intrinsics
            .validate()
            .map_err(|e| Error::InvalidScene(format!("intrinsics: {e}")))?;
        if self.intrinsics.width < 64 || self.intrinsics.height < 64 {
            return bad(format!(
                "intrinsics: resolution {}x{} below 64x64",
                self.intrinsics.width, self.intrinsics.height
            ));
        }
        if self.frames == 0 {
            return bad("frames: must be at least 1".into());
        }
        if !(self.fps > 0.0) {
            return bad(format!("fps: must be positive, got {}", self.fps));
        }
        if self.camera_path.is_empty() {
            return bad("camera_path: empty".into());
        }
        if self.camera_path.windows(2).any(|w| w[1].frame < w[0].frame) {
            return bad("camera_path: keys must be ordered by frame".into());
        }
        if !(self.depth_noise >= 0.0 && self.pixel_noise >= 0.0) {
            return bad("noise: standard deviations must be non-negative".into());
        }
        for (i, b) in self.static_boxes.iter().enumerate() {
            if (0..3).any(|a| b.min[a] > b.max[a]) {
                return bad(format!("static_boxes[{i}]: min exceeds max"));
            }
            check_texture(&b.texture, &format!("static_boxes[{i}]"))?;
        }
        for (i, d) in self.dynamic_boxes.iter().enumerate() {
            if d.size.iter().any(|&s| !(s >= 0.0)) {
                return bad(format!("dynamic_boxes[{i}]: negative size"));
            }
            if d.path.is_empty() {
                return bad(format!("dynamic_boxes[{i}]: empty path"));
            }
            if d.path.windows(2).any(|w| w[1].frame < w[0].frame) {
                return bad(format!("dynamic_boxes[{i}]: path keys must be ordered by frame"));
            }
            check_texture(&d.texture, &format!("dynamic_boxes[{i}]"))?;
        }
        for f in 0..self.frames {
            let c = self.camera_pose(f).translation().to_owned();
            let inside = |min: &Vector3<f64>, max: &Vector3<f64>| (0..3).all(|a| c[a] >= min[a] && c[a] <= max[a]);
            for (i, b) in self.static_boxes.iter().enumerate() {
                if inside(&Vector3::from(b.min), &Vector3::from(b.max)) {
                    return bad(format!("camera_path: camera inside static_boxes[{i}] at frame {f}"));
                }
            }
            for (i, d) in self.dynamic_boxes.iter().enumerate() {
                let (min, max) = d.bounds_at(f as f64);
                if inside(&min, &max) {
                    return bad(format!("camera_path: camera inside dynamic_boxes[{i}] at frame {f}"));
                }
            }
        }
        Ok(())
    }

    pub fn timestamp(&self, frame: usize) -> f64 {
        self.start_time + frame as f64 / self.fps
    }

    pub fn camera_pose(&self, frame: usize) -> Pose {
        let (a, b, t) = bracket(&self.camera_path, frame as f64, |k| k.frame);
        let (pa, pb) = (self.camera_path[a].pose(), self.camera_path[b].pose());
        pa.interpolate(&pb, t)
    }

    fn solids(&self, frame: usize, with_dynamic: bool) -> Vec<Solid<'_>> {
        let mut out: Vec<Solid> = self
            .static_boxes
            .iter()
            .map(|b| Solid {
                min: Vector3::from(b.min),
                max: Vector3::from(b.max),
                texture: &b.texture,
                dynamic: false,
            })
            .collect();
        if with_dynamic {
            for d in &self.dynamic_boxes {
                let (min, max) = d.bounds_at(frame as f64);
                out.push(Solid {
                    min,
                    max,
                    texture: &d.texture,
                    dynamic: true,
                });
            }
        }
        out
    }

    /// Renders frame `index` as `(rgb, depth, dynamic mask)`, optionally
    /// without the moving boxes.
    fn raycast(&self, index: usize, with_dynamic: bool) -> (RgbImage, DepthMap, Mask) {
        let k = &self.intrinsics;
        let (w, h) = (k.width, k.height);
        let pose = self.camera_pose(index);
        let rot = pose.rotation_matrix();
        let origin = *pose.translation();
        let solids = self.solids(index, with_dynamic);
        let rows: Vec<Vec<([u8; 3], f32, bool)>> = (0..h)
            .into_par_iter()
            .map(|y| {
                (0..w)
                    .map(|x| {
                        // z component 1: the ray parameter is the camera depth.
                        let d_cam = Vector3::new((x as f64 - k.cx) / k.fx, (y as f64 - k.cy) / k.fy, 1.0);
                        let dir = rot * d_cam;
                        let mut best: Option<(f64, usize, &Solid)> = None;
                        for s in &solids {
                            if let Some((t, axis)) = ray_box(&origin, &dir, &s.min, &s.max) {
                                if best.is_none_or(|b| t < b.0) {
                                    best = Some((t, axis, s));
                                }
                            }
                        }
                        match best {
                            None => ([0, 0, 0], 0.0, false),
                            Some((t, axis, s)) => {
                                let p = origin + dir * t;
                                // Dynamic textures are anchored to the box.
                                let local = if s.dynamic { p - s.min } else { p };
                                let (a, b) = match axis {
                                    0 => (local.y, local.z),
                                    1 => (local.x, local.z),
                                    _ => (local.x, local.y),
                                };
                                let face = 2 * axis as u64 + u64::from(dir[axis] > 0.0);
                                (s.texture.color(face, a, b), t as f32, s.dynamic)
                            }
                        }
                    })
                    .collect()
            })
            .collect();
        let mut rgb = RgbImage::new(w, h);
        let mut depth = DepthMap::new(w, h);
        let mut mask = Mask::new(w, h);
        for (y, row) in rows.into_iter().enumerate() {
            for (x, (c, z, dynamic)) in row.into_iter().enumerate() {
                let (x, y) = (x as u32, y as u32);
                rgb.put_pixel(x, y, Rgb(c));
                depth.set(x, y, z);
                mask.set(x, y, dynamic);
            }
        }
        (rgb, depth, mask)
    }

    fn add_noise(&self, index: usize, rgb: &mut RgbImage, depth: &mut DepthMap) {
        if self.pixel_noise == 0.0 && self.depth_noise == 0.0 {
            return;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(splitmix(self.seed ^ index as u64));
        if self.pixel_noise > 0.0 {
            let n = Normal::new(0.0, self.pixel_noise).expect("validated sigma");
            for p in rgb.pixels_mut() {
                for c in p.0.iter_mut() {
                    *c = (*c as f64 + n.sample(&mut rng)).round().clamp(0.0, 255.0) as u8;
                }
            }
        }
        if self.depth_noise > 0.0 {
            let n = Normal::new(0.0, self.depth_noise).expect("validated sigma");
            let (w, h) = depth.dims();
            for y in 0..h {
                for x in 0..w {
                    let z = depth.get(x, y);
                    if z > 0.0 {
                        depth.set(x, y, (z as f64 + n.sample(&mut rng)).max(0.0) as f32);
                    }
                }
            }
        }
    }

    pub fn render_frame(&self, index: usize) -> SynthFrame {
        let (mut rgb, mut depth, mask) = self.raycast(index, true);
        let (background, background_depth, _) = if self.dynamic_boxes.is_empty() {
            (rgb.clone(), depth.clone(), Mask::new(1, 1))
        } else {
            self.raycast(index, false)
        };
        self.add_noise(index, &mut rgb, &mut depth);
        SynthFrame {
            index,
            timestamp: self.timestamp(index),
            rgb,
            depth,
            gt_pose: self.camera_pose(index),
            gt_dynamic_mask: mask,
            gt_background_rgb: background,
            gt_background_depth: background_depth,
        }
    }

    pub fn render(&self) -> Result<Vec<SynthFrame>> {
        self.validate()?;
        Ok((0..self.frames).map(|i| self.render_frame(i)).collect())
    }

    /// Writes a TUM-layout dataset: `rgb/`, `depth/`, `masks/` (ground-truth
    /// dynamic masks), `background/`, the three list files and `scene.json`.
    pub fn write_dataset(&self, dir: &Path) -> Result<()> {
        self.validate()?;
        for sub in ["rgb", "depth", "masks", "background"] {
            let p = dir.join(sub);
            std::fs::create_dir_all(&p).map_err(|e| Error::io(&p, e))?;
        }
        let mut rgb_list = Vec::new();
        let mut depth_list = Vec::new();
        let mut traj = Trajectory::new();
        for i in 0..self.frames {
            let f = self.render_frame(i);
            let name = format!("{:.6}.png", f.timestamp);
            raster::write_rgb(&dir.join("rgb").join(&name), &f.rgb)?;
            raster::write_depth(&dir.join("depth").join(&name), &f.depth, TUM_DEPTH_SCALE)?;
            raster::write_mask(&dir.join("masks").join(&name), &f.gt_dynamic_mask)?;
            raster::write_rgb(&dir.join("background").join(&name), &f.gt_background_rgb)?;
            rgb_list.push((f.timestamp, format!("rgb/{name}")));
            depth_list.push((f.timestamp, format!("depth/{name}")));
            traj.push(f.timestamp, f.gt_pose)?;
        }
        write_file_list(&dir.join("rgb.txt"), "color images", &rgb_list)?;
        write_file_list(&dir.join("depth.txt"), "depth maps", &depth_list)?;
        traj.write_tum(&dir.join("groundtruth.txt"))?;
        let scene = dir.join("scene.json");
        std::fs::write(&scene, serde_json::to_string_pretty(self)?).map_err(|e| Error::io(&scene, e))?;
        Ok(())
    }

    /// Camera-frame point where pixel `(u, v)` hits geometry at `frame`.
    pub fn hit_point(&self, frame: usize, u: f64, v: f64) -> Option<Point3> {
        let k = &self.intrinsics;
        let pose = self.camera_pose(frame);
        let dir = pose.rotation_matrix() * Vector3::new((u - k.cx) / k.fx, (v - k.cy) / k.fy, 1.0);
        let origin = *pose.translation();
        self.solids(frame, true)
            .iter()
            .filter_map(|s| ray_box(&origin, &dir, &s.min, &s.max).map(|h| h.0))
            .min_by(f64::total_cmp)
            .map(|t| Point3::new((u - k.cx) / k.fx * t, (v - k.cy) / k.fy * t, t))
    }
}

fn check_texture(t: &Texture, what: &str) -> Result<()> {
    if !(t.cell > 0.0) {
        return Err(Error::InvalidScene(format!("{what}: texture cell must be positive")));
    }
    if t.low > t.high {
        return Err(Error::InvalidScene(format!("{what}: texture low exceeds high")));
    }
    Ok(())
}

fn tex(cell: f64, low: u8, high: u8, tint: [f64; 3], seed: u64) -> Texture {
    Texture {
        cell,
        low,
        high,
        tint,
        seed,
    }
}

/// Static room: a back wall at 3 m, a box on the right, a side wall on the left.
fn room() -> Vec<BoxSpec> {
    vec![
        BoxSpec {
            min: [-4.0, -3.0, 3.0],
            max: [4.0, 3.0, 3.05],
            texture: tex(0.12, 90, 170, [1.0, 0.97, 0.9], 11),
        },
        BoxSpec {
            min: [0.35, 0.3, 1.9],
            max: [1.2, 1.5, 3.0],
            texture: tex(0.1, 80, 160, [0.95, 0.85, 0.7], 12),
        },
        BoxSpec {
            min: [-2.6, -3.0, 0.5],
            max: [-2.55, 3.0, 3.0],
            texture: tex(0.12, 90, 170, [0.9, 0.95, 1.0], 13),
        },
    ]
}

fn sweep_camera(frames: usize) -> Vec<CameraKey> {
    let last = frames.saturating_sub(1) as f64;
    vec![
        CameraKey {
            frame: 0.0,
            position: [-0.25, 0.0, 0.0],
            yaw_deg: 3.0,
            pitch_deg: 0.0,
        },
        CameraKey {
            frame: last,
            position: [0.25, 0.0, 0.0],
            yaw_deg: -3.0,
            pitch_deg: 1.0,
        },
    ]
}

/// 640×480, 60 frames: the camera translates 0.5 m with a few degrees of
/// rotation while a richly textured 0.3 m cuboid, tall enough to span the
/// image height, enters from the right and crosses the view at 0.02 m/frame
/// about 1 m away. The desk is flush with the back wall, so the only depth
/// discontinuities in view belong to the cuboid.
pub fn cuboid_walk() -> SceneSpec {
    let frames = 60;
    SceneSpec {
        intrinsics: Intrinsics {
            fx: 525.0,
            fy: 525.0,
            cx: 319.5,
            cy: 239.5,
            width: 640,
            height: 480,
        },
        frames,
        fps: 30.0,
        start_time: 1000.0,
        static_boxes: room(),
        dynamic_boxes: vec![DynamicBox {
            size: [0.3, 1.4, 0.3],
            texture: tex(0.025, 0, 255, [1.0, 0.8, 0.8], 21),
            path: vec![
                CenterKey {
                    frame: 0.0,
                    center: [0.8, 0.0, 1.0],
                },
                CenterKey {
                    frame: 60.0,
                    center: [-0.4, 0.0, 1.0],
                },
            ],
        }],
        camera_path: sweep_camera(frames),
        depth_noise: 0.0,
        pixel_noise: 0.0,
        seed: 0,
    }
}

/// The cuboid-walk room and camera path without the moving cuboid.
pub fn static_room() -> SceneSpec {
    SceneSpec {
        dynamic_boxes: Vec::new(),
        ..cuboid_walk()
    }
}

pub fn preset(name: &str) -> Option<SceneSpec> {
    match name {
        "cuboid-walk" => Some(cuboid_walk()),
        "static" => Some(static_room()),
        _ => None,
    }
}

pub const PRESETS: [&str; 2] = ["cuboid-walk", "static"];
