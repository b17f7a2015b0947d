//! Rigid-body poses, the pinhole camera and the small amount of Lie algebra
//! the tracker needs.
//!
//! Poses are camera-to-world: `pose.transform_point(p_cam)` is the world point.
//! Twists are ordered `(v, ω)`, translation first.

use nalgebra::{Matrix2x6, Matrix3, Quaternion, UnitQuaternion, Vector3, Vector6};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Point3 = nalgebra::Point3<f64>;
pub type Twist = Vector6<f64>;

/// Below this rotation angle (radians) the closed forms switch to Taylor series.
const SMALL_ANGLE: f64 = 1e-8;
/// Points closer than this to the camera plane are not projected.
const MIN_PROJECT_DEPTH: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    rotation: UnitQuaternion<f64>,
    translation: Vector3<f64>,
}

impl Default for Pose {
    fn default() -> Self {
        Self::identity()
    }
}

impl Pose {
    pub fn identity() -> Self {
        Self {
            rotation: UnitQuaternion::identity(),
            translation: Vector3::zeros(),
        }
    }

    /// Builds a pose from a (not necessarily normalized) quaternion.
    pub fn new(rotation: Quaternion<f64>, translation: Vector3<f64>) -> Self {
        Self {
            rotation: UnitQuaternion::new_normalize(rotation),
            translation,
        }
    }

    pub fn from_parts(rotation: UnitQuaternion<f64>, translation: Vector3<f64>) -> Self {
        Self::new(rotation.into_inner(), translation)
    }

    pub fn from_translation(x: f64, y: f64, z: f64) -> Self {
        Self::from_parts(UnitQuaternion::identity(), Vector3::new(x, y, z))
    }

    /// TUM order: `tx ty tz qx qy qz qw`.
    pub fn from_tum(values: [f64; 7]) -> Self {
        let [tx, ty, tz, qx, qy, qz, qw] = values;
        Self::new(Quaternion::new(qw, qx, qy, qz), Vector3::new(tx, ty, tz))
    }

    pub fn to_tum(&self) -> [f64; 7] {
        let q = self.rotation.quaternion();
        let t = &self.translation;
        [t.x, t.y, t.z, q.i, q.j, q.k, q.w]
    }

    pub fn rotation(&self) -> &UnitQuaternion<f64> {
        &self.rotation
    }

    pub fn translation(&self) -> &Vector3<f64> {
        &self.translation
    }

    /// Camera center in the parent frame.
    pub fn center(&self) -> Point3 {
        Point3::from(self.translation)
    }

    pub fn rotation_matrix(&self) -> Matrix3<f64> {
        self.rotation.to_rotation_matrix().into_inner()
    }

    /// Rotation angle in radians, in `[0, π]`.
    pub fn rotation_angle(&self) -> f64 {
        let q = self.rotation.quaternion();
        2.0 * q.imag().norm().atan2(q.w.abs())
    }

    /// `self ∘ other`: applies `other` first.
    pub fn compose(&self, other: &Pose) -> Pose {
        Pose::from_parts(
            self.rotation * other.rotation,
            self.rotation * other.translation + self.translation,
        )
    }

    pub fn inverse(&self) -> Pose {
        let inv = self.rotation.inverse();
        Pose::from_parts(inv, -(inv * self.translation))
    }

    pub fn transform_point(&self, p: &Point3) -> Point3 {
        Point3::from(self.rotation * p.coords + self.translation)
    }

    pub fn exp(twist: &Twist) -> Pose {
        let v = Vector3::new(twist[0], twist[1], twist[2]);
        let w = Vector3::new(twist[3], twist[4], twist[5]);
        let rotation = so3_exp(&w);
        let translation = left_jacobian(&w) * v;
        Pose::from_parts(rotation, translation)
    }

    /// Inverse of [`Pose::exp`]. At exactly π the rotation axis sign is fixed
    /// so that its largest-magnitude component is positive.
    pub fn log(&self) -> Twist {
        let w = so3_log(&self.rotation);
        let v = inverse_left_jacobian(&w) * self.translation;
        Twist::new(v.x, v.y, v.z, w.x, w.y, w.z)
    }

    /// Geodesic interpolation: translation linearly, rotation by slerp.
    pub fn interpolate(&self, other: &Pose, t: f64) -> Pose {
        let delta = self.rotation.inverse() * other.rotation;
        let w = so3_log(&delta);
        let rotation = self.rotation * so3_exp(&(w * t));
        let translation = self.translation + (other.translation - self.translation) * t;
        Pose::from_parts(rotation, translation)
    }

    /// Rotation angle and translation norm of `self⁻¹ ∘ other`.
    pub fn distance(&self, other: &Pose) -> (f64, f64) {
        let rel = self.inverse().compose(other);
        (rel.rotation_angle(), rel.translation.norm())
    }
}

fn skew(w: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -w.z, w.y, w.z, 0.0, -w.x, -w.y, w.x, 0.0)
}

pub(crate) fn so3_exp(w: &Vector3<f64>) -> UnitQuaternion<f64> {
    let theta = w.norm();
    let (real, imag_scale) = if theta < SMALL_ANGLE {
        let t2 = theta * theta;
        (1.0 - t2 / 8.0, 0.5 - t2 / 48.0)
    } else {
        let half = 0.5 * theta;
        (half.cos(), half.sin() / theta)
    };
    UnitQuaternion::new_normalize(Quaternion::new(
        real,
        w.x * imag_scale,
        w.y * imag_scale,
        w.z * imag_scale,
    ))
}

pub(crate) fn so3_log(q: &UnitQuaternion<f64>) -> Vector3<f64> {
    let q = q.quaternion();
    let (mut w, mut v) = (q.w, q.imag());
    let flip = if w.abs() < 1e-15 {
        // Antipodal ambiguity: orient by the dominant axis component.
        let imax = v.iamax();
        v[imax] < 0.0
    } else {
        w < 0.0
    };
    if flip {
        w = -w;
        v = -v;
    }
    let n = v.norm();
    let theta = 2.0 * n.atan2(w);
    if theta < SMALL_ANGLE {
        // θ/n ≈ (2/w)(1 - n²/(3w²))
        v * (2.0 / w) * (1.0 - n * n / (3.0 * w * w))
    } else {
        v * (theta / n)
    }
}

/// SO(3) left Jacobian `V` mapping the translational twist part to `t`.
fn left_jacobian(w: &Vector3<f64>) -> Matrix3<f64> {
    let theta = w.norm();
    let k = skew(w);
    let (b, c) = if theta < SMALL_ANGLE {
        let t2 = theta * theta;
        (0.5 - t2 / 24.0, 1.0 / 6.0 - t2 / 120.0)
    } else {
        let s = (0.5 * theta).sin();
        let t2 = theta * theta;
        (2.0 * s * s / t2, (theta - theta.sin()) / (t2 * theta))
    };
    Matrix3::identity() + k * b + k * k * c
}

fn inverse_left_jacobian(w: &Vector3<f64>) -> Matrix3<f64> {
    let theta = w.norm();
    let k = skew(w);
    let d = if theta < 1e-3 {
        let t2 = theta * theta;
        1.0 / 12.0 + t2 / 720.0 + t2 * t2 / 30240.0
    } else {
        let half = 0.5 * theta;
        (1.0 - half / half.tan()) / (theta * theta)
    };
    Matrix3::identity() - k * 0.5 + k * k * d
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Intrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
}

impl Intrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, width: u32, height: u32) -> Result<Self> {
        let k = Self {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
        };
        k.validate()?;
        Ok(k)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.fx > 0.0 && self.fy > 0.0) {
            return Err(Error::InvalidIntrinsics(format!(
                "focal lengths must be positive (fx={}, fy={})",
                self.fx, self.fy
            )));
        }
        if !(self.cx > 0.0 && self.cx < self.width as f64) {
            return Err(Error::InvalidIntrinsics(format!(
                "cx={} outside (0, {})",
                self.cx, self.width
            )));
        }
        if !(self.cy > 0.0 && self.cy < self.height as f64) {
            return Err(Error::InvalidIntrinsics(format!(
                "cy={} outside (0, {})",
                self.cy, self.height
            )));
        }
        Ok(())
    }

    /// TUM freiburg3 Kinect, the default for real sequences.
    pub fn tum_fr3() -> Self {
        Self {
            fx: 535.4,
            fy: 539.2,
            cx: 320.1,
            cy: 247.6,
            width: 640,
            height: 480,
        }
    }

    pub fn contains(&self, u: f64, v: f64) -> bool {
        u >= 0.0 && v >= 0.0 && u < self.width as f64 && v < self.height as f64
    }
}

/// Pixel observation; pixel centers sit at integer coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PixelObs {
    pub u: f64,
    pub v: f64,
    pub depth: Option<f64>,
}

impl PixelObs {
    pub fn new(u: f64, v: f64, depth: f64) -> Self {
        Self {
            u,
            v,
            depth: Some(depth),
        }
    }

    /// Nearest integer pixel, if inside an image of the given size.
    pub fn pixel(&self, width: u32, height: u32) -> Option<(u32, u32)> {
        let (x, y) = (self.u.round(), self.v.round());
        (x >= 0.0 && y >= 0.0 && x < width as f64 && y < height as f64)
            .then_some((x as u32, y as u32))
    }
}

/// Pinhole projection of a camera-frame point. `None` when the point is
/// behind (or on) the camera plane or lands outside the image.
pub fn project(p: &Point3, k: &Intrinsics) -> Option<PixelObs> {
    let obs = project_unbounded(p, k)?;
    k.contains(obs.u, obs.v).then_some(obs)
}

/// Like [`project`] without the image-bounds check.
pub fn project_unbounded(p: &Point3, k: &Intrinsics) -> Option<PixelObs> {
    if p.z <= MIN_PROJECT_DEPTH {
        return None;
    }
    Some(PixelObs::new(
        k.fx * p.x / p.z + k.cx,
        k.fy * p.y / p.z + k.cy,
        p.z,
    ))
}

pub fn backproject(px: &PixelObs, k: &Intrinsics) -> Result<Point3> {
    match px.depth {
        Some(z) if z > 0.0 => Ok(backproject_raw(px.u, px.v, z, k)),
        Some(z) => Err(Error::NonPositiveDepth(z)),
        None => Err(Error::NonPositiveDepth(0.0)),
    }
}

#[inline]
pub(crate) fn backproject_raw(u: f64, v: f64, z: f64, k: &Intrinsics) -> Point3 {
    Point3::new((u - k.cx) * z / k.fx, (v - k.cy) * z / k.fy, z)
}

/// Angle in degrees at `x` between the rays towards `c1` and `c2`.
pub fn parallax_angle(x: &Point3, c1: &Point3, c2: &Point3) -> Result<f64> {
    let a = c1 - x;
    let b = c2 - x;
    let (na, nb) = (a.norm(), b.norm());
    if na < 1e-12 || nb < 1e-12 {
        return Err(Error::Degenerate(
            "parallax ray has zero length".to_string(),
        ));
    }
    // atan2 of |a×b| and a·b stays accurate near 0° and 180°.
    Ok(a.cross(&b).norm().atan2(a.dot(&b)).to_degrees())
}

/// Jacobian of `project(exp(δ) · p_cam)` w.r.t. the twist `δ` at `δ = 0`,
/// where `p_cam` is already in the camera frame.
pub fn projection_jacobian(p_cam: &Point3, k: &Intrinsics) -> Matrix2x6<f64> {
    let (x, y, z) = (p_cam.x, p_cam.y, p_cam.z);
    let iz = 1.0 / z;
    let iz2 = iz * iz;
    let jp = nalgebra::Matrix2x3::new(
        k.fx * iz,
        0.0,
        -k.fx * x * iz2,
        0.0,
        k.fy * iz,
        -k.fy * y * iz2,
    );
    let mut jg = nalgebra::Matrix3x6::zeros();
    jg.fixed_view_mut::<3, 3>(0, 0).copy_from(&Matrix3::identity());
    jg.fixed_view_mut::<3, 3>(0, 3)
        .copy_from(&(-skew(&p_cam.coords)));
    jp * jg
}
