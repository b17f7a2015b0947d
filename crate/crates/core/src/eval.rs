//! Trajectory and mask metrics.

use nalgebra::{Matrix3, UnitQuaternion, Vector3};
use serde::Serialize;

use crate::dataset::{associate, Trajectory};
use crate::error::{Error, Result};
use crate::geometry::Pose;
use crate::raster::Mask;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AteReport {
    pub rmse: f64,
    pub mean: f64,
    pub median: f64,
    pub max: f64,
    /// Maps estimated positions onto ground truth (after `scale`).
    #[serde(serialize_with = "serialize_pose")]
    pub alignment: Pose,
    pub scale: f64,
    pub matched_pairs: usize,
    #[serde(skip)]
    pub errors: Vec<f64>,
}

fn serialize_pose<S: serde::Serializer>(p: &Pose, s: S) -> std::result::Result<S::Ok, S::Error> {
    p.to_tum().serialize(s)
}

/// Least-squares similarity (or rigid, when `with_scale` is false) transform
/// with `dst ≈ scale · R · src + t`.
pub fn align_umeyama(src: &[Vector3<f64>], dst: &[Vector3<f64>], with_scale: bool) -> Result<(Pose, f64)> {
    if src.len() != dst.len() {
        return Err(Error::Eval(format!("{} source vs {} target points", src.len(), dst.len())));
    }
    if src.len() < 2 {
        return Err(Error::Eval(format!("alignment needs at least 2 pairs, got {}", src.len())));
    }
    let n = src.len() as f64;
    let mu_s = src.iter().sum::<Vector3<f64>>() / n;
    let mu_d = dst.iter().sum::<Vector3<f64>>() / n;
    let mut cov = Matrix3::zeros();
    let mut var_s = 0.0;
    for (s, d) in src.iter().zip(dst) {
        let (a, b) = (s - mu_s, d - mu_d);
        cov += b * a.transpose();
        var_s += a.norm_squared();
    }
    cov /= n;
    var_s /= n;
    let svd = cov.svd(true, true);
    let (u, v_t) = (svd.u.expect("requested"), svd.v_t.expect("requested"));
    let mut sign = Matrix3::identity();
    if (u.determinant() * v_t.determinant()) < 0.0 {
        sign[(2, 2)] = -1.0;
    }
    let r = u * sign * v_t;
    let scale = if with_scale && var_s > 0.0 {
        (Matrix3::from_diagonal(&svd.singular_values) * sign).trace() / var_s
    } else {
        1.0
    };
    let t = mu_d - r * mu_s * scale;
    let rot = UnitQuaternion::from_matrix(&r);
    Ok((Pose::from_parts(rot, t), scale))
}

fn matched(est: &Trajectory, gt: &Trajectory, max_diff: f64) -> Vec<(Pose, Pose)> {
    let assoc = associate(&est.timestamps(), &gt.timestamps(), max_diff);
    let mut pairs = assoc.pairs;
    pairs.sort_unstable();
    pairs
        .into_iter()
        .map(|(i, j)| (est.entries()[i].1, gt.entries()[j].1))
        .collect()
}

/// Absolute trajectory error of translations after optimal alignment.
pub fn ate(est: &Trajectory, gt: &Trajectory, max_diff: f64, with_scale: bool) -> Result<AteReport> {
    let pairs = matched(est, gt, max_diff);
    if pairs.len() < 2 {
        return Err(Error::Eval(format!(
            "ATE needs at least 2 matched poses, got {}",
            pairs.len()
        )));
    }
    let src: Vec<Vector3<f64>> = pairs.iter().map(|p| *p.0.translation()).collect();
    let dst: Vec<Vector3<f64>> = pairs.iter().map(|p| *p.1.translation()).collect();
    let (alignment, scale) = align_umeyama(&src, &dst, with_scale)?;
    let errors: Vec<f64> = src
        .iter()
        .zip(&dst)
        .map(|(s, d)| (alignment.rotation() * s * scale + alignment.translation() - d).norm())
        .collect();
    let n = errors.len() as f64;
    let rmse = (errors.iter().map(|e| e * e).sum::<f64>() / n).sqrt();
    let mean = errors.iter().sum::<f64>() / n;
    let mut sorted = errors.clone();
    sorted.sort_by(f64::total_cmp);
    let median = if sorted.len() % 2 == 1 {
        sorted[sorted.len() / 2]
    } else {
        0.5 * (sorted[sorted.len() / 2 - 1] + sorted[sorted.len() / 2])
    };
    Ok(AteReport {
        rmse,
        mean,
        median,
        max: *sorted.last().expect("non-empty"),
        alignment,
        scale,
        matched_pairs: pairs.len(),
        errors,
    })
}

/// Estimated trajectory mapped into the ground-truth frame by an ATE alignment.
pub fn aligned_trajectory(est: &Trajectory, report: &AteReport) -> Result<Trajectory> {
    let a = &report.alignment;
    let entries = est
        .entries()
        .iter()
        .map(|(t, p)| {
            let pos = a.rotation() * p.translation() * report.scale + a.translation();
            (*t, Pose::from_parts(a.rotation() * p.rotation(), pos))
        })
        .collect();
    Trajectory::from_entries(entries)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RpeBucket {
    pub length: f64,
    pub segments: usize,
    pub translational_percent: f64,
    pub rotational_deg_per_100m: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RpeReport {
    pub translational_percent: f64,
    pub rotational_deg_per_100m: f64,
    pub segments: usize,
    pub per_length: Vec<RpeBucket>,
}

pub const DEFAULT_SEGMENT_LENGTHS: [f64; 4] = [0.1, 0.2, 0.5, 1.0];

/// Relative errors over path-length segments: for every start pose and
/// length `L`, the first later pose at least `L` further along the
/// ground-truth path closes the segment. Errors are normalized by `L` and
/// averaged over all segments.
pub fn rpe(est: &Trajectory, gt: &Trajectory, max_diff: f64, lengths: &[f64]) -> Result<RpeReport> {
    if lengths.iter().any(|&l| !(l > 0.0)) {
        return Err(Error::Eval("segment lengths must be positive".into()));
    }
    let pairs = matched(est, gt, max_diff);
    let mut dist = vec![0.0; pairs.len()];
    for i in 1..pairs.len() {
        dist[i] = dist[i - 1] + (pairs[i].1.translation() - pairs[i - 1].1.translation()).norm();
    }
    let mut buckets = Vec::new();
    let (mut t_sum, mut r_sum, mut total) = (0.0, 0.0, 0usize);
    for &len in lengths {
        let (mut bt, mut br, mut count) = (0.0, 0.0, 0usize);
        for i in 0..pairs.len() {
            let Some(j) = (i + 1..pairs.len()).find(|&j| dist[j] >= dist[i] + len) else {
                break;
            };
            let gt_rel = pairs[i].1.inverse().compose(&pairs[j].1);
            let est_rel = pairs[i].0.inverse().compose(&pairs[j].0);
            let err = gt_rel.inverse().compose(&est_rel);
            let te = err.translation().norm() / len;
            let re = err.rotation_angle().to_degrees() / len;
            bt += te;
            br += re;
            count += 1;
        }
        t_sum += bt;
        r_sum += br;
        total += count;
        buckets.push(RpeBucket {
            length: len,
            segments: count,
            translational_percent: if count > 0 { 100.0 * bt / count as f64 } else { 0.0 },
            rotational_deg_per_100m: if count > 0 { 100.0 * br / count as f64 } else { 0.0 },
        });
    }
    if total == 0 {
        return Err(Error::Eval(
            "no trajectory segment reaches any of the requested lengths".into(),
        ));
    }
    Ok(RpeReport {
        translational_percent: 100.0 * t_sum / total as f64,
        rotational_deg_per_100m: 100.0 * r_sum / total as f64,
        segments: total,
        per_length: buckets,
    })
}

/// Percentage of frames flagged as tracked.
pub fn tracked_fraction(tracked: &[bool]) -> f64 {
    if tracked.is_empty() {
        return 0.0;
    }
    100.0 * tracked.iter().filter(|&&t| t).count() as f64 / tracked.len() as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct MaskCounts {
    pub true_positives: u64,
    pub false_positives: u64,
    pub false_negatives: u64,
}

impl MaskCounts {
    pub fn between(pred: &Mask, gt: &Mask) -> Result<Self> {
        pred.ensure_dims(gt.dims())?;
        let mut c = Self::default();
        for (&p, &g) in pred.data().iter().zip(gt.data()) {
            match (p, g) {
                (true, true) => c.true_positives += 1,
                (true, false) => c.false_positives += 1,
                (false, true) => c.false_negatives += 1,
                _ => {}
            }
        }
        Ok(c)
    }

    /// 1 when nothing is predicted.
    pub fn precision(&self) -> f64 {
        let d = self.true_positives + self.false_positives;
        if d == 0 {
            1.0
        } else {
            self.true_positives as f64 / d as f64
        }
    }

    /// 1 when there is nothing to find.
    pub fn recall(&self) -> f64 {
        let d = self.true_positives + self.false_negatives;
        if d == 0 {
            1.0
        } else {
            self.true_positives as f64 / d as f64
        }
    }

    /// 1 when both masks are empty.
    pub fn iou(&self) -> f64 {
        let d = self.true_positives + self.false_positives + self.false_negatives;
        if d == 0 {
            1.0
        } else {
            self.true_positives as f64 / d as f64
        }
    }

    fn add(&mut self, o: &MaskCounts) {
        self.true_positives += o.true_positives;
        self.false_positives += o.false_positives;
        self.false_negatives += o.false_negatives;
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MaskReport {
    pub precision: f64,
    pub recall: f64,
    pub iou: f64,
    pub totals: MaskCounts,
    pub per_frame: Vec<MaskCounts>,
}

/// Streaming form of [`mask_metrics`].
#[derive(Debug, Clone, Default)]
pub struct MaskAccumulator {
    totals: MaskCounts,
    per_frame: Vec<MaskCounts>,
}

impl MaskAccumulator {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, pred: &Mask, gt: &Mask) -> Result<MaskCounts> {
        let c = MaskCounts::between(pred, gt)?;
        self.totals.add(&c);
        self.per_frame.push(c);
        Ok(c)
    }

    pub fn report(&self) -> MaskReport {
        MaskReport {
            precision: self.totals.precision(),
            recall: self.totals.recall(),
            iou: self.totals.iou(),
            totals: self.totals,
            per_frame: self.per_frame.clone(),
        }
    }
}

/// Pixel counts pooled over all frames.
pub fn mask_metrics(pred: &[Mask], gt: &[Mask]) -> Result<MaskReport> {
    if pred.len() != gt.len() {
        return Err(Error::Eval(format!("{} predicted vs {} ground-truth masks", pred.len(), gt.len())));
    }
    let per_frame = pred
        .iter()
        .zip(gt)
        .map(|(p, g)| MaskCounts::between(p, g))
        .collect::<Result<Vec<_>>>()?;
    let mut totals = MaskCounts::default();
    for c in &per_frame {
        totals.add(c);
    }
    Ok(MaskReport {
        precision: totals.precision(),
        recall: totals.recall(),
        iou: totals.iou(),
        totals,
        per_frame,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Twist;
    use proptest::prelude::*;

    fn wavy(n: usize) -> Trajectory {
        let entries = (0..n)
            .map(|i| {
                let s = i as f64 * 0.05;
                let tw = Twist::new(s.sin(), 0.3 * s, (2.0 * s).cos(), 0.1 * s, 0.05 * s.sin(), 0.02);
                (i as f64 / 30.0, Pose::exp(&tw))
            })
            .collect();
        Trajectory::from_entries(entries).unwrap()
    }

    fn transformed(t: &Trajectory, g: &Pose) -> Trajectory {
        Trajectory::from_entries(t.entries().iter().map(|(s, p)| (*s, g.compose(p))).collect()).unwrap()
    }

    #[test]
    fn identical_trajectories() {
        let t = wavy(50);
        let r = ate(&t, &t, 0.02, false).unwrap();
        assert!(r.rmse < 1e-12);
        assert_eq!(r.matched_pairs, 50);
        let p = rpe(&t, &t, 0.02, &DEFAULT_SEGMENT_LENGTHS).unwrap();
        assert!(p.translational_percent < 1e-9 && p.rotational_deg_per_100m < 1e-6);
    }

    #[test]
    fn too_few_pairs() {
        let t = Trajectory::from_entries(vec![(0.0, Pose::identity())]).unwrap();
        assert!(ate(&t, &t, 0.02, false).is_err());
        assert!(rpe(&t, &t, 0.02, &[0.1]).is_err());
    }

    #[test]
    fn scale_is_recovered() {
        let gt = wavy(40);
        let est = Trajectory::from_entries(
            gt.entries()
                .iter()
                .map(|(s, p)| (*s, Pose::from_parts(*p.rotation(), p.translation() * 0.5)))
                .collect(),
        )
        .unwrap();
        let r = ate(&est, &gt, 0.02, true).unwrap();
        assert!((r.scale - 2.0).abs() < 1e-9);
        assert!(r.rmse < 1e-9);
        assert!(ate(&est, &gt, 0.02, false).unwrap().rmse > 0.01);
    }

    #[test]
    fn tracked_fraction_arithmetic() {
        assert_eq!(tracked_fraction(&[true; 10]), 100.0);
        assert_eq!(tracked_fraction(&[false; 10]), 0.0);
        let v: Vec<bool> = (0..100).map(|i| i < 87).collect();
        assert!((tracked_fraction(&v) - 87.0).abs() < 1e-12);
    }

    #[test]
    fn mask_conventions_and_brute_force() {
        let gt = Mask::from_fn(16, 16, |_, _| true);
        let empty = Mask::new(16, 16);
        let r = mask_metrics(std::slice::from_ref(&gt), std::slice::from_ref(&gt)).unwrap();
        assert_eq!((r.precision, r.recall, r.iou), (1.0, 1.0, 1.0));
        let r = mask_metrics(std::slice::from_ref(&empty), std::slice::from_ref(&gt)).unwrap();
        assert_eq!((r.precision, r.recall), (1.0, 0.0));

        let checker = Mask::from_fn(16, 16, |x, y| (x + y) % 2 == 0);
        let solid = Mask::from_fn(16, 16, |x, _| x < 10);
        let r = mask_metrics(std::slice::from_ref(&checker), std::slice::from_ref(&solid)).unwrap();
        let (mut tp, mut fp, mut fn_) = (0.0, 0.0, 0.0);
        for y in 0..16 {
            for x in 0..16 {
                match (checker.get(x, y), solid.get(x, y)) {
                    (true, true) => tp += 1.0,
                    (true, false) => fp += 1.0,
                    (false, true) => fn_ += 1.0,
                    _ => {}
                }
            }
        }
        assert_eq!(r.precision, tp / (tp + fp));
        assert_eq!(r.recall, tp / (tp + fn_));
        assert_eq!(r.iou, tp / (tp + fp + fn_));
    }

    #[test]
    fn streaming_matches_batch() {
        let preds: Vec<Mask> = (0..5).map(|i| Mask::from_fn(20, 10, |x, y| (x * y + i) % 3 == 0)).collect();
        let gts: Vec<Mask> = (0..5).map(|i| Mask::from_fn(20, 10, |x, _| x < 5 + i)).collect();
        let batch = mask_metrics(&preds, &gts).unwrap();
        let mut acc = MaskAccumulator::new();
        for (p, g) in preds.iter().zip(&gts) {
            acc.add(p, g).unwrap();
        }
        assert_eq!(acc.report(), batch);
        assert!(mask_metrics(&preds[..2], &gts).is_err());
    }

    proptest! {
        #[test]
        fn ate_invariant_to_rigid_transform(tw in prop::array::uniform6(-2.0f64..2.0)) {
            let gt = wavy(60);
            let g = Pose::exp(&Twist::from(tw));
            let moved = transformed(&gt, &g);
            prop_assert!(ate(&moved, &gt, 0.02, false).unwrap().rmse < 1e-9);
            prop_assert!(ate(&gt, &moved, 0.02, false).unwrap().rmse < 1e-9);
        }

        #[test]
        fn rpe_invariant_to_global_transform(tw in prop::array::uniform6(-2.0f64..2.0), noise in 0.0f64..0.05) {
            let gt = wavy(60);
            let est = Trajectory::from_entries(
                gt.entries().iter().enumerate()
                    .map(|(i, (s, p))| (*s, p.compose(&Pose::from_translation(noise * (i as f64).sin(), 0.0, 0.0))))
                    .collect(),
            ).unwrap();
            let g = Pose::exp(&Twist::from(tw));
            let a = rpe(&est, &gt, 0.02, &DEFAULT_SEGMENT_LENGTHS).unwrap();
            let b = rpe(&transformed(&est, &g), &transformed(&gt, &g), 0.02, &DEFAULT_SEGMENT_LENGTHS).unwrap();
            prop_assert!((a.translational_percent - b.translational_percent).abs() < 1e-6);
            prop_assert!((a.rotational_deg_per_100m - b.rotational_deg_per_100m).abs() < 1e-4);
        }
    }
}
