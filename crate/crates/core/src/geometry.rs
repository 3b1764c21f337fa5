//! Rigid-body math: vectors, unit quaternions, rigid transforms and
//! interpolation.
//!
//! Conventions:
//! * A [`Pose`] acts on a point by rotating first, then translating.
//! * Quaternions are kept in canonical form with `w >= 0`.
//! * Poses serialize as `[tx, ty, tz, qw, qx, qy, qz]`.

use std::f64::consts::PI;
use std::fmt;
use std::ops::{Add, AddAssign, Div, Mul, Neg, Sub, SubAssign};

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

const AXIS_EPS: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("rotation axis has zero length")]
    ZeroAxis,
    #[error("pose array must hold 7 finite reals, got {0}")]
    BadPoseArray(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Vec3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Vec3 {
    pub const ZERO: Vec3 = Vec3::new(0.0, 0.0, 0.0);
    pub const X: Vec3 = Vec3::new(1.0, 0.0, 0.0);
    pub const Y: Vec3 = Vec3::new(0.0, 1.0, 0.0);
    pub const Z: Vec3 = Vec3::new(0.0, 0.0, 1.0);

    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Self { x, y, z }
    }

    pub fn from_array(a: [f64; 3]) -> Self {
        Self::new(a[0], a[1], a[2])
    }

    pub fn to_array(self) -> [f64; 3] {
        [self.x, self.y, self.z]
    }

    pub fn dot(self, o: Vec3) -> f64 {
        self.x * o.x + self.y * o.y + self.z * o.z
    }

    pub fn cross(self, o: Vec3) -> Vec3 {
        Vec3::new(
            self.y * o.z - self.z * o.y,
            self.z * o.x - self.x * o.z,
            self.x * o.y - self.y * o.x,
        )
    }

    pub fn norm_squared(self) -> f64 {
        self.dot(self)
    }

    pub fn norm(self) -> f64 {
        self.norm_squared().sqrt()
    }

    /// Unit vector in the same direction, or `None` for (near-)zero input.
    pub fn normalized(self) -> Option<Vec3> {
        let n = self.norm();
        if n < AXIS_EPS || !n.is_finite() {
            None
        } else {
            Some(self / n)
        }
    }

    pub fn distance(self, o: Vec3) -> f64 {
        (self - o).norm()
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }

    pub fn lerp(self, o: Vec3, t: f64) -> Vec3 {
        self + (o - self) * t
    }

    pub fn max_abs(self) -> f64 {
        self.x.abs().max(self.y.abs()).max(self.z.abs())
    }
}

impl Add for Vec3 {
    type Output = Vec3;
    fn add(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x + o.x, self.y + o.y, self.z + o.z)
    }
}

impl AddAssign for Vec3 {
    fn add_assign(&mut self, o: Vec3) {
        *self = *self + o;
    }
}

impl Sub for Vec3 {
    type Output = Vec3;
    fn sub(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x - o.x, self.y - o.y, self.z - o.z)
    }
}

impl SubAssign for Vec3 {
    fn sub_assign(&mut self, o: Vec3) {
        *self = *self - o;
    }
}

impl Neg for Vec3 {
    type Output = Vec3;
    fn neg(self) -> Vec3 {
        Vec3::new(-self.x, -self.y, -self.z)
    }
}

impl Mul<f64> for Vec3 {
    type Output = Vec3;
    fn mul(self, s: f64) -> Vec3 {
        Vec3::new(self.x * s, self.y * s, self.z * s)
    }
}

impl Mul<Vec3> for f64 {
    type Output = Vec3;
    fn mul(self, v: Vec3) -> Vec3 {
        v * self
    }
}

impl Div<f64> for Vec3 {
    type Output = Vec3;
    fn div(self, s: f64) -> Vec3 {
        Vec3::new(self.x / s, self.y / s, self.z / s)
    }
}

impl fmt::Display for Vec3 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{}, {}, {}]", self.x, self.y, self.z)
    }
}

impl Serialize for Vec3 {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        self.to_array().serialize(s)
    }
}

impl<'de> Deserialize<'de> for Vec3 {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        <[f64; 3]>::deserialize(d).map(Vec3::from_array)
    }
}

/// Unit quaternion in canonical (`w >= 0`) form.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UnitQuat {
    w: f64,
    x: f64,
    y: f64,
    z: f64,
}

impl Default for UnitQuat {
    fn default() -> Self {
        Self::IDENTITY
    }
}

impl UnitQuat {
    pub const IDENTITY: UnitQuat = UnitQuat {
        w: 1.0,
        x: 0.0,
        y: 0.0,
        z: 0.0,
    };

    /// Normalizes and canonicalizes. Returns `None` for a zero or non-finite
    /// quaternion.
    pub fn new(w: f64, x: f64, y: f64, z: f64) -> Option<Self> {
        let n = (w * w + x * x + y * y + z * z).sqrt();
        if !(n.is_finite() && n > AXIS_EPS) {
            return None;
        }
        Some(Self::canonical(w / n, x / n, y / n, z / n))
    }

    fn canonical(w: f64, x: f64, y: f64, z: f64) -> Self {
        if w < 0.0 {
            UnitQuat {
                w: -w,
                x: -x,
                y: -y,
                z: -z,
            }
        } else {
            UnitQuat { w, x, y, z }
        }
    }

    pub fn w(&self) -> f64 {
        self.w
    }
    pub fn x(&self) -> f64 {
        self.x
    }
    pub fn y(&self) -> f64 {
        self.y
    }
    pub fn z(&self) -> f64 {
        self.z
    }

    pub fn to_array(self) -> [f64; 4] {
        [self.w, self.x, self.y, self.z]
    }

    pub fn from_axis_angle(axis: Vec3, angle: f64) -> Result<Self, GeometryError> {
        let axis = axis.normalized().ok_or(GeometryError::ZeroAxis)?;
        let (s, c) = (angle / 2.0).sin_cos();
        Ok(Self::canonical(c, axis.x * s, axis.y * s, axis.z * s))
    }

    /// Exponential map of a rotation vector (axis * angle).
    pub fn from_scaled_axis(v: Vec3) -> Self {
        let angle = v.norm();
        if angle < 1e-12 {
            // second-order expansion keeps the map smooth at zero
            return Self::new(1.0, v.x / 2.0, v.y / 2.0, v.z / 2.0).unwrap_or(Self::IDENTITY);
        }
        let (s, c) = (angle / 2.0).sin_cos();
        let k = s / angle;
        Self::canonical(c, v.x * k, v.y * k, v.z * k)
    }

    /// Rotation vector (axis * angle) with angle in `[0, pi]`.
    pub fn to_scaled_axis(self) -> Vec3 {
        let v = Vec3::new(self.x, self.y, self.z);
        let s = v.norm();
        if s < 1e-12 {
            return v * 2.0;
        }
        let angle = 2.0 * s.atan2(self.w);
        v * (angle / s)
    }

    pub fn rot_x(angle: f64) -> Self {
        Self::from_scaled_axis(Vec3::X * angle)
    }
    pub fn rot_y(angle: f64) -> Self {
        Self::from_scaled_axis(Vec3::Y * angle)
    }
    pub fn rot_z(angle: f64) -> Self {
        Self::from_scaled_axis(Vec3::Z * angle)
    }

    /// Intrinsic Z-Y-X (yaw, pitch, roll) rotation.
    pub fn from_euler_zyx(yaw: f64, pitch: f64, roll: f64) -> Self {
        Self::rot_z(yaw) * Self::rot_y(pitch) * Self::rot_x(roll)
    }

    pub fn conjugate(self) -> Self {
        // conjugate of a canonical quaternion is canonical
        UnitQuat {
            w: self.w,
            x: -self.x,
            y: -self.y,
            z: -self.z,
        }
    }

    pub fn rotate(self, v: Vec3) -> Vec3 {
        // v' = v + 2w (q x v) + 2 q x (q x v)
        let q = Vec3::new(self.x, self.y, self.z);
        let t = q.cross(v) * 2.0;
        v + t * self.w + q.cross(t)
    }

    pub fn dot(self, o: UnitQuat) -> f64 {
        self.w * o.w + self.x * o.x + self.y * o.y + self.z * o.z
    }

    /// Geodesic angle between two rotations, in `[0, pi]`.
    pub fn angle_to(self, o: UnitQuat) -> f64 {
        let r = self.conjugate() * o;
        2.0 * Vec3::new(r.x, r.y, r.z).norm().atan2(r.w.abs())
    }

    /// Rotation matrix, row-major.
    pub fn to_matrix(self) -> [[f64; 3]; 3] {
        let (w, x, y, z) = (self.w, self.x, self.y, self.z);
        [
            [
                1.0 - 2.0 * (y * y + z * z),
                2.0 * (x * y - w * z),
                2.0 * (x * z + w * y),
            ],
            [
                2.0 * (x * y + w * z),
                1.0 - 2.0 * (x * x + z * z),
                2.0 * (y * z - w * x),
            ],
            [
                2.0 * (x * z - w * y),
                2.0 * (y * z + w * x),
                1.0 - 2.0 * (x * x + y * y),
            ],
        ]
    }

    /// Uniformly distributed rotation from three uniform samples in `[0, 1)`.
    pub fn from_uniform_samples(u1: f64, u2: f64, u3: f64) -> Self {
        let a = (1.0 - u1).sqrt();
        let b = u1.sqrt();
        let (s2, c2) = (2.0 * PI * u2).sin_cos();
        let (s3, c3) = (2.0 * PI * u3).sin_cos();
        Self::new(b * c3, a * s2, a * c2, b * s3).unwrap_or(Self::IDENTITY)
    }
}

impl Mul for UnitQuat {
    type Output = UnitQuat;
    fn mul(self, o: UnitQuat) -> UnitQuat {
        let (a, b) = (self, o);
        let w = a.w * b.w - a.x * b.x - a.y * b.y - a.z * b.z;
        let x = a.w * b.x + a.x * b.w + a.y * b.z - a.z * b.y;
        let y = a.w * b.y - a.x * b.z + a.y * b.w + a.z * b.x;
        let z = a.w * b.z + a.x * b.y - a.y * b.x + a.z * b.w;
        UnitQuat::new(w, x, y, z).unwrap_or(UnitQuat::IDENTITY)
    }
}

/// Spherical linear interpolation. The shorter arc is always taken, so
/// `q` and `-q` interpolate identically.
pub fn slerp(q0: UnitQuat, q1: UnitQuat, t: f64) -> UnitQuat {
    let mut d = q0.dot(q1);
    let mut q1v = q1.to_array();
    if d < 0.0 {
        d = -d;
        q1v = q1v.map(|c| -c);
    }
    let q0v = q0.to_array();
    let (k0, k1) = if d > 1.0 - 1e-12 {
        (1.0 - t, t)
    } else {
        let theta = d.min(1.0).acos();
        let s = theta.sin();
        (((1.0 - t) * theta).sin() / s, (t * theta).sin() / s)
    };
    let r: Vec<f64> = (0..4).map(|i| k0 * q0v[i] + k1 * q1v[i]).collect();
    UnitQuat::new(r[0], r[1], r[2], r[3]).unwrap_or(q0)
}

/// Rigid transform in SE(3).
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Pose {
    pub rotation: UnitQuat,
    pub translation: Vec3,
}

impl Pose {
    pub const IDENTITY: Pose = Pose {
        rotation: UnitQuat::IDENTITY,
        translation: Vec3::ZERO,
    };

    pub fn new(rotation: UnitQuat, translation: Vec3) -> Self {
        Self {
            rotation,
            translation,
        }
    }

    pub fn from_translation(t: Vec3) -> Self {
        Self::new(UnitQuat::IDENTITY, t)
    }

    pub fn from_rotation(r: UnitQuat) -> Self {
        Self::new(r, Vec3::ZERO)
    }

    pub fn translate_x(d: f64) -> Self {
        Self::from_translation(Vec3::X * d)
    }

    pub fn rot_z(angle: f64) -> Self {
        Self::from_rotation(UnitQuat::rot_z(angle))
    }

    /// `[tx, ty, tz, qw, qx, qy, qz]`
    pub fn to_array(self) -> [f64; 7] {
        let t = self.translation;
        let q = self.rotation;
        [t.x, t.y, t.z, q.w, q.x, q.y, q.z]
    }

    pub fn from_array(a: [f64; 7]) -> Result<Self, GeometryError> {
        if a.iter().any(|v| !v.is_finite()) {
            return Err(GeometryError::BadPoseArray(format!("{a:?}")));
        }
        let q = UnitQuat::new(a[3], a[4], a[5], a[6])
            .ok_or_else(|| GeometryError::BadPoseArray(format!("{a:?}")))?;
        Ok(Self::new(q, Vec3::new(a[0], a[1], a[2])))
    }

    pub fn to_f32_array(self) -> [f32; 7] {
        self.to_array().map(|v| v as f32)
    }

    pub fn transform_point(&self, p: Vec3) -> Vec3 {
        self.rotation.rotate(p) + self.translation
    }

    pub fn transform_vector(&self, v: Vec3) -> Vec3 {
        self.rotation.rotate(v)
    }

    pub fn inverse(&self) -> Pose {
        let r = self.rotation.conjugate();
        Pose::new(r, -r.rotate(self.translation))
    }

    pub fn is_finite(&self) -> bool {
        self.to_array().iter().all(|v| v.is_finite())
    }
}

/// `compose(a, b).transform_point(x) == a.transform_point(b.transform_point(x))`
pub fn compose(a: &Pose, b: &Pose) -> Pose {
    Pose::new(
        a.rotation * b.rotation,
        a.rotation.rotate(b.translation) + a.translation,
    )
}

impl Mul for Pose {
    type Output = Pose;
    fn mul(self, o: Pose) -> Pose {
        compose(&self, &o)
    }
}

impl Mul for &Pose {
    type Output = Pose;
    fn mul(self, o: &Pose) -> Pose {
        compose(self, o)
    }
}

pub fn inverse(p: &Pose) -> Pose {
    p.inverse()
}

pub fn transform_point(p: &Pose, x: Vec3) -> Vec3 {
    p.transform_point(x)
}

/// Rotation by `angle` about the line through `point_on_axis` along `axis`.
pub fn rotate_about_axis(axis: Vec3, point_on_axis: Vec3, angle: f64) -> Result<Pose, GeometryError> {
    let r = UnitQuat::from_axis_angle(axis, angle)?;
    // x -> R (x - p) + p
    Ok(Pose::new(r, point_on_axis - r.rotate(point_on_axis)))
}

/// Linear translation, geodesic rotation.
pub fn interpolate_pose(a: &Pose, b: &Pose, t: f64) -> Pose {
    Pose::new(
        slerp(a.rotation, b.rotation, t),
        a.translation.lerp(b.translation, t),
    )
}

impl Serialize for Pose {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        self.to_array().serialize(s)
    }
}

impl<'de> Deserialize<'de> for Pose {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let a = <[f64; 7]>::deserialize(d)?;
        Pose::from_array(a).map_err(serde::de::Error::custom)
    }
}
