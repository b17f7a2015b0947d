//! Oriented FAST corners with rotated binary (BRIEF-style) descriptors,
//! Hamming matching, and mask-based keypoint rejection.
//!
//! Detection is single scale. Corners are found with the 9-of-16 segment
//! test, ranked by Harris response, thinned by 3×3 non-maximum suppression and
//! spread over a grid so that no cell holds more than `ceil(target / cells)`.

use std::sync::OnceLock;

use image::GrayImage;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::raster::Mask;

/// Keypoints keep this distance (pixels) from the image border so the whole
/// rotated sampling pattern stays inside the image.
pub const PATCH_MARGIN: u32 = 16;
const PATCH_RADIUS: i32 = 15;
const HARRIS_BLOCK: i32 = 3; // half-size of the 7×7 window
const HARRIS_K: f64 = 0.04;
const PATTERN_SEED: u64 = 0x0b5e_55ed;

pub type Descriptor = [u64; 4];

#[derive(Debug, Clone, PartialEq)]
pub struct Keypoint {
    pub u: f64,
    pub v: f64,
    pub response: f64,
    /// Orientation in degrees.
    pub angle: f64,
    pub descriptor: Descriptor,
}

impl Keypoint {
    pub fn pixel(&self) -> (u32, u32) {
        (self.u.round() as u32, self.v.round() as u32)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Match {
    pub index_a: usize,
    pub index_b: usize,
    pub hamming: u32,
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct DetectorParams {
    pub target_count: usize,
    pub grid_cols: u32,
    pub grid_rows: u32,
    pub fast_threshold: u8,
}

impl Default for DetectorParams {
    fn default() -> Self {
        Self {
            target_count: 1000,
            grid_cols: 8,
            grid_rows: 6,
            fast_threshold: 20,
        }
    }
}

#[inline]
pub fn hamming(a: &Descriptor, b: &Descriptor) -> u32 {
    a.iter().zip(b).map(|(x, y)| (x ^ y).count_ones()).sum()
}

/// Bresenham circle of radius 3, clockwise from 12 o'clock.
const CIRCLE: [(i32, i32); 16] = [
    (0, -3),
    (1, -3),
    (2, -2),
    (3, -1),
    (3, 0),
    (3, 1),
    (2, 2),
    (1, 3),
    (0, 3),
    (-1, 3),
    (-2, 2),
    (-3, 1),
    (-3, 0),
    (-3, -1),
    (-2, -2),
    (-1, -3),
];

fn is_fast_corner(img: &GrayImage, x: u32, y: u32, t: u8) -> bool {
    let c = img.get_pixel(x, y).0[0] as i32;
    let t = t as i32;
    let at = |i: usize| {
        let (dx, dy) = CIRCLE[i];
        img.get_pixel((x as i32 + dx) as u32, (y as i32 + dy) as u32).0[0] as i32
    };
    // Any 9-arc covers at least two of the four compass pixels.
    let compass = [at(0), at(4), at(8), at(12)];
    let brighter = compass.iter().filter(|&&p| p > c + t).count();
    let darker = compass.iter().filter(|&&p| p < c - t).count();
    if brighter < 2 && darker < 2 {
        return false;
    }
    let ring: [i32; 16] = std::array::from_fn(at);
    for sign in [1, -1] {
        let mut run = 0;
        for i in 0..32 {
            let p = ring[i % 16];
            if sign * (p - c) > t {
                run += 1;
                if run >= 9 {
                    return true;
                }
            } else {
                run = 0;
            }
        }
    }
    false
}

fn harris_response(img: &GrayImage, x: u32, y: u32) -> f64 {
    let px = |xx: i32, yy: i32| img.get_pixel(xx as u32, yy as u32).0[0] as f64;
    let (mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0);
    for dy in -HARRIS_BLOCK..=HARRIS_BLOCK {
        for dx in -HARRIS_BLOCK..=HARRIS_BLOCK {
            let (cx, cy) = (x as i32 + dx, y as i32 + dy);
            let gx = (px(cx + 1, cy - 1) + 2.0 * px(cx + 1, cy) + px(cx + 1, cy + 1))
                - (px(cx - 1, cy - 1) + 2.0 * px(cx - 1, cy) + px(cx - 1, cy + 1));
            let gy = (px(cx - 1, cy + 1) + 2.0 * px(cx, cy + 1) + px(cx + 1, cy + 1))
                - (px(cx - 1, cy - 1) + 2.0 * px(cx, cy - 1) + px(cx + 1, cy - 1));
            sxx += gx * gx;
            syy += gy * gy;
            sxy += gx * gy;
        }
    }
    // Normalize so the response is independent of the window area and the
    // Sobel gain (8 per axis).
    let norm = 1.0 / (64.0 * 49.0 * 255.0 * 255.0);
    let (sxx, syy, sxy) = (sxx * norm, syy * norm, sxy * norm);
    sxx * syy - sxy * sxy - HARRIS_K * (sxx + syy) * (sxx + syy)
}

/// Intensity-centroid orientation in degrees over a disc of radius 15.
fn orientation(img: &GrayImage, x: u32, y: u32) -> f64 {
    let (mut m10, mut m01) = (0i64, 0i64);
    for dy in -PATCH_RADIUS..=PATCH_RADIUS {
        let span = ((PATCH_RADIUS * PATCH_RADIUS - dy * dy) as f64).sqrt() as i32;
        for dx in -span..=span {
            let p = img.get_pixel((x as i32 + dx) as u32, (y as i32 + dy) as u32).0[0] as i64;
            m10 += dx as i64 * p;
            m01 += dy as i64 * p;
        }
    }
    (m01 as f64).atan2(m10 as f64).to_degrees()
}

/// Fixed sampling pattern: 256 point pairs inside a disc of radius 13, drawn
/// once from an isotropic Gaussian with a fixed seed.
fn pattern() -> &'static [[(f64, f64); 2]; 256] {
    static PATTERN: OnceLock<[[(f64, f64); 2]; 256]> = OnceLock::new();
    PATTERN.get_or_init(|| {
        let mut rng = ChaCha8Rng::seed_from_u64(PATTERN_SEED);
        let sigma = 31.0 / 5.0;
        let mut sample = move || loop {
            // Box-Muller
            let u1: f64 = rng.random::<f64>().max(1e-300);
            let u2: f64 = rng.random();
            let r = (-2.0 * u1.ln()).sqrt() * sigma;
            let (s, c) = (std::f64::consts::TAU * u2).sin_cos();
            let p = ((r * c).round(), (r * s).round());
            if p.0 * p.0 + p.1 * p.1 <= 13.0 * 13.0 {
                return p;
            }
        };
        let mut out = [[(0.0, 0.0); 2]; 256];
        for pair in out.iter_mut() {
            loop {
                let (a, b) = (sample(), sample());
                if a != b {
                    *pair = [a, b];
                    break;
                }
            }
        }
        out
    })
}

/// Separable 7-tap binomial blur in exact integer arithmetic (gain 64²), so
/// that comparisons between smoothed values are invariant to intensity offsets.
fn smooth(img: &GrayImage) -> Vec<u32> {
    const K: [u32; 7] = [1, 6, 15, 20, 15, 6, 1];
    let (w, h) = (img.width() as i64, img.height() as i64);
    let clamp = |v: i64, hi: i64| v.clamp(0, hi - 1);
    let mut tmp = vec![0u32; (w * h) as usize];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0;
            for (i, k) in K.iter().enumerate() {
                let xx = clamp(x + i as i64 - 3, w);
                acc += k * img.get_pixel(xx as u32, y as u32).0[0] as u32;
            }
            tmp[(y * w + x) as usize] = acc;
        }
    }
    let mut out = vec![0u32; (w * h) as usize];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0;
            for (i, k) in K.iter().enumerate() {
                let yy = clamp(y + i as i64 - 3, h);
                acc += k * tmp[(yy * w + x) as usize];
            }
            out[(y * w + x) as usize] = acc;
        }
    }
    out
}

fn describe(smoothed: &[u32], width: u32, x: u32, y: u32, angle_deg: f64) -> Descriptor {
    let (s, c) = angle_deg.to_radians().sin_cos();
    let at = |p: (f64, f64)| {
        let rx = (c * p.0 - s * p.1).round() as i64;
        let ry = (s * p.0 + c * p.1).round() as i64;
        smoothed[((y as i64 + ry) * width as i64 + x as i64 + rx) as usize]
    };
    let mut d = [0u64; 4];
    for (i, [a, b]) in pattern().iter().enumerate() {
        if at(*a) < at(*b) {
            d[i / 64] |= 1 << (i % 64);
        }
    }
    d
}

fn rank(a: &Keypoint, b: &Keypoint) -> std::cmp::Ordering {
    b.response
        .total_cmp(&a.response)
        .then(a.v.total_cmp(&b.v))
        .then(a.u.total_cmp(&b.u))
}

/// Detects up to `params.target_count` oriented keypoints, sorted by
/// `(response desc, v, u)`. Deterministic for a given image.
pub fn detect(gray: &GrayImage, params: &DetectorParams) -> Vec<Keypoint> {
    let (w, h) = gray.dimensions();
    if w < 2 * PATCH_MARGIN + 1 || h < 2 * PATCH_MARGIN + 1 || params.target_count == 0 {
        return Vec::new();
    }
    let m = PATCH_MARGIN;
    let idx = |x: u32, y: u32| (y * w + x) as usize;
    let mut response = vec![f64::NEG_INFINITY; (w * h) as usize];
    let mut candidates = Vec::new();
    for y in m..h - m {
        for x in m..w - m {
            if is_fast_corner(gray, x, y, params.fast_threshold) {
                let r = harris_response(gray, x, y);
                if r > 0.0 {
                    response[idx(x, y)] = r;
                    candidates.push((x, y));
                }
            }
        }
    }

    let cells = (params.grid_cols.max(1), params.grid_rows.max(1));
    let cap = params.target_count.div_ceil((cells.0 * cells.1) as usize);
    let mut buckets: Vec<Vec<(u32, u32, f64)>> = vec![Vec::new(); (cells.0 * cells.1) as usize];
    for &(x, y) in &candidates {
        let r = response[idx(x, y)];
        let suppressed = (-1i32..=1).any(|dy| {
            (-1i32..=1).any(|dx| {
                if dx == 0 && dy == 0 {
                    return false;
                }
                let (nx, ny) = ((x as i32 + dx) as u32, (y as i32 + dy) as u32);
                let rn = response[idx(nx, ny)];
                // Ties go to the earlier pixel in raster order.
                rn > r || (rn == r && idx(nx, ny) < idx(x, y))
            })
        });
        if !suppressed {
            let cx = (x * cells.0 / w).min(cells.0 - 1);
            let cy = (y * cells.1 / h).min(cells.1 - 1);
            buckets[(cy * cells.0 + cx) as usize].push((x, y, r));
        }
    }

    let mut selected: Vec<(u32, u32, f64)> = Vec::new();
    for mut bucket in buckets {
        bucket.sort_by(|a, b| b.2.total_cmp(&a.2).then(a.1.cmp(&b.1)).then(a.0.cmp(&b.0)));
        selected.extend(bucket.into_iter().take(cap));
    }
    selected.sort_by(|a, b| b.2.total_cmp(&a.2).then(a.1.cmp(&b.1)).then(a.0.cmp(&b.0)));
    selected.truncate(params.target_count);

    let smoothed = smooth(gray);
    let mut out: Vec<Keypoint> = selected
        .into_iter()
        .map(|(x, y, r)| {
            let angle = orientation(gray, x, y);
            Keypoint {
                u: x as f64,
                v: y as f64,
                response: r,
                angle,
                descriptor: describe(&smoothed, w, x, y, angle),
            }
        })
        .collect();
    out.sort_by(rank);
    out
}

/// Best and second-best Hamming distance of `d` against `others`.
fn two_nearest(d: &Descriptor, others: &[Keypoint]) -> Option<(usize, u32, Option<u32>)> {
    let mut best: Option<(usize, u32)> = None;
    let mut second: Option<u32> = None;
    for (j, o) in others.iter().enumerate() {
        let h = hamming(d, &o.descriptor);
        match best {
            Some((_, bh)) if h >= bh => {
                if second.is_none_or(|s| h < s) {
                    second = Some(h);
                }
            }
            _ => {
                second = best.map(|b| b.1);
                best = Some((j, h));
            }
        }
    }
    best.map(|(j, h)| (j, h, second))
}

fn passes_ratio(best: u32, second: Option<u32>, ratio: f64) -> bool {
    second.is_none_or(|s| (best as f64) < ratio * s as f64)
}

/// Mutual nearest neighbours under Hamming distance with a ratio test in both
/// directions and an absolute distance cap. The result mirrors exactly when
/// the arguments are swapped.
pub fn match_descriptors(a: &[Keypoint], b: &[Keypoint], max_hamming: u32, ratio: f64) -> Vec<Match> {
    let back: Vec<Option<(usize, u32, Option<u32>)>> =
        b.iter().map(|kb| two_nearest(&kb.descriptor, a)).collect();
    let mut out = Vec::new();
    for (i, ka) in a.iter().enumerate() {
        let Some((j, h, second)) = two_nearest(&ka.descriptor, b) else {
            continue;
        };
        if h > max_hamming || !passes_ratio(h, second, ratio) {
            continue;
        }
        match back[j] {
            Some((ib, _, second_b)) if ib == i && passes_ratio(h, second_b, ratio) => {
                out.push(Match {
                    index_a: i,
                    index_b: j,
                    hamming: h,
                });
            }
            _ => {}
        }
    }
    out
}

/// Indices of keypoints outside `mask` dilated by `contour_margin` pixels.
pub fn static_keypoint_indices(
    kps: &[Keypoint],
    mask: &Mask,
    contour_margin: u32,
    image_dims: (u32, u32),
) -> Result<Vec<usize>> {
    mask.ensure_dims(image_dims)?;
    let grown = mask.dilate(contour_margin);
    Ok(kps
        .iter()
        .enumerate()
        .filter(|(_, k)| !grown.get_checked(k.u.round() as i64, k.v.round() as i64))
        .map(|(i, _)| i)
        .collect())
}

/// Drops keypoints inside the mask or within `contour_margin` pixels of it.
pub fn filter_keypoints_by_mask(
    kps: &[Keypoint],
    mask: &Mask,
    contour_margin: u32,
    image_dims: (u32, u32),
) -> Result<Vec<Keypoint>> {
    Ok(static_keypoint_indices(kps, mask, contour_margin, image_dims)?
        .into_iter()
        .map(|i| kps[i].clone())
        .collect())
}
