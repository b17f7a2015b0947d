//! TUM RGB-D sequence ingestion: list files, timestamp association,
//! ground-truth trajectories and frame loading.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use image::RgbImage;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Intrinsics, Pose};
use crate::raster::{self, DepthMap, Mask};

pub const DEFAULT_MAX_DIFF: f64 = 0.02;

/// Result of [`associate`]: index pairs into the two inputs, time-sorted.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Association {
    pub pairs: Vec<(usize, usize)>,
    pub unmatched_a: usize,
    pub unmatched_b: usize,
}

/// Greedy association of two time-sorted timestamp lists: candidate pairs
/// with `|Δt| ≤ max_diff` are accepted in order of increasing `|Δt|`, each
/// entry at most once. Ties break on the pair's mean timestamp, which keeps
/// the result independent of argument order.
pub fn associate(a: &[f64], b: &[f64], max_diff: f64) -> Association {
    let mut candidates: Vec<(f64, f64, usize, usize)> = Vec::new();
    let mut lo = 0usize;
    for (i, &ta) in a.iter().enumerate() {
        while lo < b.len() && b[lo] < ta - max_diff {
            lo += 1;
        }
        let mut j = lo;
        while j < b.len() && b[j] <= ta + max_diff {
            let d = (ta - b[j]).abs();
            if d <= max_diff {
                candidates.push((d, ta + b[j], i, j));
            }
            j += 1;
        }
    }
    candidates.sort_by(|x, y| x.0.total_cmp(&y.0).then(x.1.total_cmp(&y.1)));
    let mut used_a = vec![false; a.len()];
    let mut used_b = vec![false; b.len()];
    let mut pairs = Vec::new();
    for (_, _, i, j) in candidates {
        if !used_a[i] && !used_b[j] {
            used_a[i] = true;
            used_b[j] = true;
            pairs.push((i, j));
        }
    }
    pairs.sort_by(|x, y| a[x.0].total_cmp(&a[y.0]));
    Association {
        unmatched_a: a.len() - pairs.len(),
        unmatched_b: b.len() - pairs.len(),
        pairs,
    }
}

fn read_text(path: &Path) -> Result<String> {
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

/// Non-comment, non-empty lines with their 1-based line numbers.
fn data_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'))
}

/// Parses a `timestamp filename` list (rgb.txt / depth.txt).
pub fn read_file_list(path: &Path) -> Result<Vec<(f64, String)>> {
    let text = read_text(path)?;
    let mut out: Vec<(f64, String)> = Vec::new();
    for (line, content) in data_lines(&text) {
        let mut parts = content.split_whitespace();
        let parse_err = |message: &str| Error::Parse {
            path: path.to_path_buf(),
            line,
            message: message.to_string(),
        };
        let t: f64 = parts
            .next()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| parse_err("expected a timestamp"))?;
        let name = parts.next().ok_or_else(|| parse_err("expected a filename"))?;
        out.push((t, name.to_string()));
    }
    out.sort_by(|x, y| x.0.total_cmp(&y.0));
    Ok(out)
}

/// Timestamped pose sequence with strictly increasing timestamps.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Trajectory {
    entries: Vec<(f64, Pose)>,
}

impl Trajectory {
    pub fn new() -> Self {
        Self::default()
    }

    /// Sorts the entries and rejects duplicate timestamps.
    pub fn from_entries(mut entries: Vec<(f64, Pose)>) -> Result<Self> {
        entries.sort_by(|a, b| a.0.total_cmp(&b.0));
        if entries.windows(2).any(|w| w[1].0 <= w[0].0) {
            return Err(Error::Config(
                "trajectory timestamps must be strictly increasing".to_string(),
            ));
        }
        Ok(Self { entries })
    }

    /// Appends a pose; the timestamp must exceed the last one.
    pub fn push(&mut self, t: f64, pose: Pose) -> Result<()> {
        if let Some(&(last, _)) = self.entries.last() {
            if t <= last {
                return Err(Error::Config(format!(
                    "timestamp {t} does not follow {last}"
                )));
            }
        }
        self.entries.push((t, pose));
        Ok(())
    }

    pub fn entries(&self) -> &[(f64, Pose)] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn timestamps(&self) -> Vec<f64> {
        self.entries.iter().map(|e| e.0).collect()
    }

    pub fn parse(text: &str, origin: &Path) -> Result<Self> {
        let mut entries = Vec::new();
        for (line, content) in data_lines(text) {
            let values: Vec<f64> = content
                .split_whitespace()
                .map(|s| s.parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::Parse {
                    path: origin.to_path_buf(),
                    line,
                    message: e.to_string(),
                })?;
            if values.len() != 8 {
                return Err(Error::Parse {
                    path: origin.to_path_buf(),
                    line,
                    message: format!("expected 8 values, found {}", values.len()),
                });
            }
            let mut pose = [0.0; 7];
            pose.copy_from_slice(&values[1..]);
            entries.push((values[0], Pose::from_tum(pose)));
        }
        Self::from_entries(entries)
    }

    pub fn read_tum(path: &Path) -> Result<Self> {
        Self::parse(&read_text(path)?, path)
    }

    pub fn to_tum_string(&self) -> String {
        let mut s = String::from("# timestamp tx ty tz qx qy qz qw\n");
        for (t, pose) in &self.entries {
            let v = pose.to_tum();
            let _ = writeln!(
                s,
                "{t:.6} {:.9} {:.9} {:.9} {:.9} {:.9} {:.9} {:.9}",
                v[0], v[1], v[2], v[3], v[4], v[5], v[6]
            );
        }
        s
    }

    pub fn write_tum(&self, path: &Path) -> Result<()> {
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        std::fs::write(path, self.to_tum_string()).map_err(|e| Error::io(path, e))
    }

    /// Interpolated pose at `t`, or `None` when the closest bracketing
    /// sample is more than `max_gap` seconds away.
    pub fn pose_at(&self, t: f64, max_gap: f64) -> Option<Pose> {
        let e = &self.entries;
        if e.is_empty() {
            return None;
        }
        let idx = e.partition_point(|(ts, _)| *ts < t);
        if idx < e.len() && e[idx].0 == t {
            return Some(e[idx].1);
        }
        if idx == 0 {
            return (e[0].0 - t <= max_gap).then_some(e[0].1);
        }
        if idx == e.len() {
            let last = e[e.len() - 1];
            return (t - last.0 <= max_gap).then_some(last.1);
        }
        let (t0, p0) = e[idx - 1];
        let (t1, p1) = e[idx];
        if (t - t0).min(t1 - t) > max_gap {
            return None;
        }
        Some(p0.interpolate(&p1, (t - t0) / (t1 - t0)))
    }
}

/// Ground-truth lookup; see [`Trajectory::pose_at`].
pub fn gt_pose_at(traj: &Trajectory, t: f64, max_gap: f64) -> Option<Pose> {
    traj.pose_at(t, max_gap)
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default)]
pub struct DatasetConfig {
    pub intrinsics: Intrinsics,
    pub depth_scale: f64,
    pub max_diff: f64,
    pub gt_max_gap: f64,
    /// Semantic mask directory; defaults to `<dataset>/masks` when present.
    pub masks_dir: Option<PathBuf>,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            intrinsics: Intrinsics::tum_fr3(),
            depth_scale: raster::TUM_DEPTH_SCALE,
            max_diff: DEFAULT_MAX_DIFF,
            gt_max_gap: 0.05,
            masks_dir: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrameRecord {
    pub index: usize,
    pub timestamp: f64,
    pub rgb_path: PathBuf,
    pub depth_path: PathBuf,
    pub mask_path: Option<PathBuf>,
    pub gt_pose: Option<Pose>,
}

impl FrameRecord {
    /// File stem of the RGB image, used to name per-frame outputs.
    pub fn stem(&self) -> String {
        self.rgb_path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| format!("{:06}", self.index))
    }
}

#[derive(Debug, Clone)]
pub struct Frame {
    pub record: FrameRecord,
    pub rgb: RgbImage,
    pub depth: DepthMap,
    pub semantic_mask: Option<Mask>,
    pub intrinsics: Intrinsics,
}

impl Frame {
    pub fn dims(&self) -> (u32, u32) {
        self.rgb.dimensions()
    }
}

/// An associated sequence; images are decoded on demand by [`Sequence::load_frame`].
#[derive(Debug, Clone)]
pub struct Sequence {
    pub dir: PathBuf,
    pub records: Vec<FrameRecord>,
    pub groundtruth: Option<Trajectory>,
    pub config: DatasetConfig,
    pub unmatched_rgb: usize,
}

impl Sequence {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn has_masks(&self) -> bool {
        !self.records.is_empty() && self.records.iter().all(|r| r.mask_path.is_some())
    }

    pub fn load_frame(&self, index: usize) -> Result<Frame> {
        let record = self.records[index].clone();
        let rgb = raster::read_rgb(&record.rgb_path)?;
        let depth = raster::read_depth(&record.depth_path, self.config.depth_scale)?;
        let dims = rgb.dimensions();
        if depth.dims() != dims {
            return Err(Error::SizeMismatch {
                expected: dims,
                found: depth.dims(),
            });
        }
        let semantic_mask = match &record.mask_path {
            Some(p) => {
                let m = raster::read_mask(p)?;
                m.ensure_dims(dims)?;
                Some(m)
            }
            None => None,
        };
        let k = self.config.intrinsics;
        if (k.width, k.height) != dims {
            return Err(Error::SizeMismatch {
                expected: (k.width, k.height),
                found: dims,
            });
        }
        Ok(Frame {
            record,
            rgb,
            depth,
            semantic_mask,
            intrinsics: k,
        })
    }
}

/// Loads `rgb.txt`/`depth.txt` (mandatory), `groundtruth.txt` and a mask
/// directory (optional) and associates them.
pub fn load_sequence(dir: &Path, config: &DatasetConfig) -> Result<Sequence> {
    config.intrinsics.validate()?;
    let rgb = read_file_list(&dir.join("rgb.txt"))?;
    let depth = read_file_list(&dir.join("depth.txt"))?;
    let rgb_t: Vec<f64> = rgb.iter().map(|e| e.0).collect();
    let depth_t: Vec<f64> = depth.iter().map(|e| e.0).collect();
    let assoc = associate(&rgb_t, &depth_t, config.max_diff);

    let gt_path = dir.join("groundtruth.txt");
    let groundtruth = if gt_path.exists() {
        Some(Trajectory::read_tum(&gt_path)?)
    } else {
        None
    };

    let masks_dir = match &config.masks_dir {
        Some(m) if m.is_absolute() => Some(m.clone()),
        Some(m) => Some(if m.exists() { m.clone() } else { dir.join(m) }),
        None => Some(dir.join("masks")).filter(|p| p.is_dir()),
    };
    if let Some(m) = &masks_dir {
        if !m.is_dir() {
            return Err(Error::MissingFile(m.clone()));
        }
    }

    let mut records = Vec::with_capacity(assoc.pairs.len());
    for (index, &(i, j)) in assoc.pairs.iter().enumerate() {
        let (t, rgb_name) = &rgb[i];
        let rgb_path = dir.join(rgb_name);
        let mask_path = masks_dir.as_ref().and_then(|m| {
            let stem = Path::new(rgb_name).file_stem()?;
            let p = m.join(format!("{}.png", stem.to_string_lossy()));
            p.exists().then_some(p)
        });
        records.push(FrameRecord {
            index,
            timestamp: *t,
            rgb_path,
            depth_path: dir.join(&depth[j].1),
            mask_path,
            gt_pose: groundtruth
                .as_ref()
                .and_then(|g| g.pose_at(*t, config.gt_max_gap)),
        });
    }
    if records.windows(2).any(|w| w[1].timestamp <= w[0].timestamp) {
        return Err(Error::Config(format!(
            "{}: duplicate RGB timestamps",
            dir.display()
        )));
    }
    Ok(Sequence {
        dir: dir.to_path_buf(),
        records,
        groundtruth,
        config: config.clone(),
        unmatched_rgb: assoc.unmatched_a,
    })
}

/// Writes a `timestamp filename` list file.
pub fn write_file_list(path: &Path, header: &str, entries: &[(f64, String)]) -> Result<()> {
    let mut s = format!("# {header}\n# timestamp filename\n");
    for (t, name) in entries {
        let _ = writeln!(s, "{t:.6} {name}");
    }
    std::fs::write(path, s).map_err(|e| Error::io(path, e))
}
