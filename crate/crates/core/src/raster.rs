//! Depth maps, boolean masks and the PNG encodings used on disk.
//!
//! Depth PNGs are 16-bit single channel, `raw / scale` meters (TUM uses a
//! scale of 5000), raw 0 meaning invalid. Mask PNGs are 8-bit single channel,
//! 0 static and anything else dynamic.

use std::path::Path;

use image::{DynamicImage, GrayImage, ImageBuffer, Luma, RgbImage};

use crate::error::{Error, Result};

pub const TUM_DEPTH_SCALE: f64 = 5000.0;
/// Depths outside `(MIN_VALID_DEPTH, MAX_VALID_DEPTH)` are stored as invalid.
pub const MIN_VALID_DEPTH: f64 = 0.01;
pub const MAX_VALID_DEPTH: f64 = 100.0;

#[derive(Debug, Clone, PartialEq)]
pub struct DepthMap {
    width: u32,
    height: u32,
    data: Vec<f32>,
}

impl DepthMap {
    pub fn new(width: u32, height: u32) -> Self {
        Self {
            width,
            height,
            data: vec![0.0; (width * height) as usize],
        }
    }

    pub fn from_vec(width: u32, height: u32, data: Vec<f32>) -> Result<Self> {
        if data.len() != (width * height) as usize {
            return Err(Error::Config(format!(
                "depth buffer has {} values for {width}x{height}",
                data.len()
            )));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn dims(&self) -> (u32, u32) {
        (self.width, self.height)
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    #[inline]
    pub fn get(&self, x: u32, y: u32) -> f32 {
        self.data[(y * self.width + x) as usize]
    }

    #[inline]
    pub fn set(&mut self, x: u32, y: u32, z: f32) {
        self.data[(y * self.width + x) as usize] = z;
    }

    /// Depth at an integer pixel if valid (positive).
    #[inline]
    pub fn valid(&self, x: u32, y: u32) -> Option<f64> {
        let z = self.get(x, y);
        (z > 0.0).then_some(z as f64)
    }

    /// Depth at a sub-pixel location, bilinearly interpolated over the valid
    /// pixels among the four neighbours (weights renormalized). `None` when all
    /// four are invalid or the location is outside the image.
    pub fn bilinear_valid(&self, u: f64, v: f64) -> Option<f64> {
        if !(u >= 0.0 && v >= 0.0) {
            return None;
        }
        let (w, h) = (self.width as f64, self.height as f64);
        if u > w - 1.0 || v > h - 1.0 {
            // Last row/column: fall back to the nearest pixel.
            let (x, y) = (u.round(), v.round());
            if x >= w || y >= h {
                return None;
            }
            return self.valid(x as u32, y as u32);
        }
        let (x0, y0) = (u.floor(), v.floor());
        let (fx, fy) = (u - x0, v - y0);
        let (x0, y0) = (x0 as u32, y0 as u32);
        let x1 = (x0 + 1).min(self.width - 1);
        let y1 = (y0 + 1).min(self.height - 1);
        let taps = [
            (x0, y0, (1.0 - fx) * (1.0 - fy)),
            (x1, y0, fx * (1.0 - fy)),
            (x0, y1, (1.0 - fx) * fy),
            (x1, y1, fx * fy),
        ];
        let mut acc = 0.0;
        let mut wsum = 0.0;
        let mut any = false;
        for (x, y, wt) in taps {
            if let Some(z) = self.valid(x, y) {
                any = true;
                acc += wt * z;
                wsum += wt;
            }
        }
        if !any {
            return None;
        }
        if wsum <= 1e-12 {
            // Only zero-weight taps are valid: the sample sits exactly on an
            // invalid pixel's corner; use the nearest valid tap.
            let (x, y) = (u.round() as u32, v.round() as u32);
            return self.valid(x.min(self.width - 1), y.min(self.height - 1));
        }
        Some(acc / wsum)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Mask {
    width: u32,
    height: u32,
    data: Vec<bool>,
}

impl Mask {
    pub fn new(width: u32, height: u32) -> Self {
        Self {
            width,
            height,
            data: vec![false; (width * height) as usize],
        }
    }

    pub fn full(width: u32, height: u32) -> Self {
        Self {
            width,
            height,
            data: vec![true; (width * height) as usize],
        }
    }

    pub fn from_fn(width: u32, height: u32, f: impl Fn(u32, u32) -> bool) -> Self {
        let mut m = Self::new(width, height);
        for y in 0..height {
            for x in 0..width {
                m.data[(y * width + x) as usize] = f(x, y);
            }
        }
        m
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn dims(&self) -> (u32, u32) {
        (self.width, self.height)
    }

    pub fn data(&self) -> &[bool] {
        &self.data
    }

    #[inline]
    pub fn get(&self, x: u32, y: u32) -> bool {
        self.data[(y * self.width + x) as usize]
    }

    /// Like [`Mask::get`] but false outside the image.
    #[inline]
    pub fn get_checked(&self, x: i64, y: i64) -> bool {
        x >= 0
            && y >= 0
            && (x as u32) < self.width
            && (y as u32) < self.height
            && self.get(x as u32, y as u32)
    }

    #[inline]
    pub fn set(&mut self, x: u32, y: u32, value: bool) {
        self.data[(y * self.width + x) as usize] = value;
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.data.iter().any(|&b| b)
    }

    pub fn ensure_dims(&self, dims: (u32, u32)) -> Result<()> {
        if self.dims() != dims {
            return Err(Error::SizeMismatch {
                expected: dims,
                found: self.dims(),
            });
        }
        Ok(())
    }

    pub fn union(&self, other: &Mask) -> Result<Mask> {
        other.ensure_dims(self.dims())?;
        Ok(Mask {
            width: self.width,
            height: self.height,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| a || b)
                .collect(),
        })
    }

    /// `self ∧ ¬other`.
    pub fn subtract(&self, other: &Mask) -> Result<Mask> {
        other.ensure_dims(self.dims())?;
        Ok(Mask {
            width: self.width,
            height: self.height,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| a && !b)
                .collect(),
        })
    }

    pub fn intersection_count(&self, other: &Mask) -> usize {
        self.data
            .iter()
            .zip(&other.data)
            .filter(|(&a, &b)| a && b)
            .count()
    }

    /// Dilation by a Euclidean disc of the given radius (pixels).
    pub fn dilate(&self, radius: u32) -> Mask {
        if radius == 0 {
            return self.clone();
        }
        let r = radius as i64;
        let offsets: Vec<(i64, i64)> = (-r..=r)
            .flat_map(|dy| (-r..=r).map(move |dx| (dx, dy)))
            .filter(|(dx, dy)| dx * dx + dy * dy <= r * r)
            .collect();
        let mut out = self.clone();
        for y in 0..self.height {
            for x in 0..self.width {
                if !self.get(x, y) || !self.is_boundary(x, y) {
                    continue;
                }
                for &(dx, dy) in &offsets {
                    let (nx, ny) = (x as i64 + dx, y as i64 + dy);
                    if nx >= 0 && ny >= 0 && (nx as u32) < self.width && (ny as u32) < self.height
                    {
                        out.set(nx as u32, ny as u32, true);
                    }
                }
            }
        }
        out
    }

    /// A set pixel with at least one unset (or out-of-image) 4-neighbour.
    fn is_boundary(&self, x: u32, y: u32) -> bool {
        let (x, y) = (x as i64, y as i64);
        [(1, 0), (-1, 0), (0, 1), (0, -1)]
            .iter()
            .any(|(dx, dy)| !self.get_checked(x + dx, y + dy))
    }

    pub fn to_gray(&self) -> GrayImage {
        ImageBuffer::from_fn(self.width, self.height, |x, y| {
            Luma([if self.get(x, y) { 255 } else { 0 }])
        })
    }

    pub fn from_gray(img: &GrayImage) -> Mask {
        let (w, h) = img.dimensions();
        Mask {
            width: w,
            height: h,
            data: img.pixels().map(|p| p.0[0] != 0).collect(),
        }
    }
}

pub fn rgb_to_gray(rgb: &RgbImage) -> GrayImage {
    ImageBuffer::from_fn(rgb.width(), rgb.height(), |x, y| {
        let p = rgb.get_pixel(x, y).0;
        // ITU-R BT.601 integer weights
        let l = (299 * p[0] as u32 + 587 * p[1] as u32 + 114 * p[2] as u32 + 500) / 1000;
        Luma([l as u8])
    })
}

fn open_image(path: &Path) -> Result<DynamicImage> {
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    image::open(path).map_err(|source| Error::Image {
        path: path.to_path_buf(),
        source,
    })
}

fn save_image<P, C>(img: &ImageBuffer<P, C>, path: &Path) -> Result<()>
where
    P: image::Pixel + image::PixelWithColorType,
    [P::Subpixel]: image::EncodableLayout,
    C: std::ops::Deref<Target = [P::Subpixel]>,
{
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    img.save(path).map_err(|source| Error::Image {
        path: path.to_path_buf(),
        source,
    })
}

/// Reads a 16-bit single-channel depth PNG; `raw / scale` meters.
pub fn read_depth(path: &Path, scale: f64) -> Result<DepthMap> {
    let img = match open_image(path)? {
        DynamicImage::ImageLuma16(img) => img,
        other => {
            return Err(Error::Format {
                path: path.to_path_buf(),
                message: format!("expected 16-bit single-channel PNG, got {:?}", other.color()),
            })
        }
    };
    let (w, h) = img.dimensions();
    let data = img
        .pixels()
        .map(|p| {
            let z = p.0[0] as f64 / scale;
            if p.0[0] == 0 || z <= MIN_VALID_DEPTH || z >= MAX_VALID_DEPTH {
                0.0
            } else {
                z as f32
            }
        })
        .collect();
    DepthMap::from_vec(w, h, data)
}

/// Encodes depth as `round(z · scale)`; invalid or out-of-range depths as 0.
pub fn encode_depth(depth: &DepthMap, scale: f64) -> ImageBuffer<Luma<u16>, Vec<u16>> {
    ImageBuffer::from_fn(depth.width, depth.height, |x, y| {
        let z = depth.get(x, y) as f64;
        let raw = if z > 0.0 {
            (z * scale).round().clamp(0.0, u16::MAX as f64) as u16
        } else {
            0
        };
        Luma([raw])
    })
}

pub fn write_depth(path: &Path, depth: &DepthMap, scale: f64) -> Result<()> {
    save_image(&encode_depth(depth, scale), path)
}

pub fn read_mask(path: &Path) -> Result<Mask> {
    match open_image(path)? {
        DynamicImage::ImageLuma8(img) => Ok(Mask::from_gray(&img)),
        other => Err(Error::Format {
            path: path.to_path_buf(),
            message: format!("expected 8-bit single-channel mask, got {:?}", other.color()),
        }),
    }
}

pub fn write_mask(path: &Path, mask: &Mask) -> Result<()> {
    save_image(&mask.to_gray(), path)
}

pub fn read_rgb(path: &Path) -> Result<RgbImage> {
    Ok(open_image(path)?.to_rgb8())
}

pub fn write_rgb(path: &Path, rgb: &RgbImage) -> Result<()> {
    save_image(rgb, path)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn depth_png_scale_and_invalid() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.png");
        let img: ImageBuffer<Luma<u16>, Vec<u16>> =
            ImageBuffer::from_fn(3, 1, |x, _| Luma([[5000u16, 0, 12345][x as usize]]));
        img.save(&path).unwrap();
        let d = read_depth(&path, TUM_DEPTH_SCALE).unwrap();
        assert_eq!(d.get(0, 0), 1.0);
        assert_eq!(d.get(1, 0), 0.0);
        assert!(d.valid(1, 0).is_none());
        assert!((d.get(2, 0) as f64 - 2.469).abs() < 1e-6);
    }

    #[test]
    fn depth_png_rejects_8bit() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.png");
        GrayImage::new(4, 4).save(&path).unwrap();
        assert!(matches!(
            read_depth(&path, TUM_DEPTH_SCALE),
            Err(Error::Format { .. })
        ));
        assert!(matches!(
            read_depth(&dir.path().join("nope.png"), TUM_DEPTH_SCALE),
            Err(Error::MissingFile(_))
        ));
    }

    #[test]
    fn mask_png_nonzero_is_dynamic() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.png");
        let img = GrayImage::from_fn(3, 1, |x, _| Luma([[0u8, 7, 255][x as usize]]));
        img.save(&path).unwrap();
        let m = read_mask(&path).unwrap();
        assert_eq!(m.data(), &[false, true, true]);
        write_mask(&path, &m).unwrap();
        assert_eq!(read_mask(&path).unwrap(), m);
    }

    #[test]
    fn bilinear_skips_invalid_neighbours() {
        let mut d = DepthMap::new(2, 2);
        d.set(0, 0, 1.0);
        d.set(1, 0, 3.0);
        assert!((d.bilinear_valid(0.5, 0.0).unwrap() - 2.0).abs() < 1e-12);
        // bottom row invalid: renormalized over the top row
        assert!((d.bilinear_valid(0.5, 0.5).unwrap() - 2.0).abs() < 1e-12);
        let empty = DepthMap::new(2, 2);
        assert!(empty.bilinear_valid(0.5, 0.5).is_none());
        assert!(d.bilinear_valid(-0.1, 0.0).is_none());
    }

    #[test]
    fn dilation_matches_brute_force() {
        let mut m = Mask::new(20, 15);
        m.set(5, 5, true);
        m.set(6, 5, true);
        m.set(14, 10, true);
        let d = m.dilate(3);
        for y in 0..15i64 {
            for x in 0..20i64 {
                let expect = [(5i64, 5i64), (6, 5), (14, 10)]
                    .iter()
                    .any(|(px, py)| (x - px).pow(2) + (y - py).pow(2) <= 9);
                assert_eq!(d.get(x as u32, y as u32), expect, "({x},{y})");
            }
        }
    }
}
