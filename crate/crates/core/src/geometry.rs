//! Camera pose representation, ground-plane pinhole projection and pose
//! error metrics.
//!
//! # Conventions
//!
//! - World frame: `z` up, pedestrians walk on the plane `z = 0`. The camera
//!   sits at `(0, 0, height)`.
//! - Camera frame: `x` right, `y` down, `z` along the optical axis.
//! - With all angles zero the camera looks horizontally along world `+y`.
//! - Orientation is composed intrinsically as yaw about world `z`, then pitch
//!   about the camera `x` axis, then roll about the optical axis. In world
//!   terms at the reference attitude this is `Rz(yaw) * Rx(pitch) * Ry(roll)`.
//!   Positive pitch tilts the camera up; `pitch = -90°` looks straight down.
//! - Quaternions are stored `(w, x, y, z)` and canonicalized to `w >= 0`.
//!   The stored quaternion is the world rotation applied to the reference
//!   attitude, so the identity quaternion is the horizontal camera.

use std::f64::consts::FRAC_PI_2;
use std::ops::{Mul, Neg};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Distance from ±π/2 pitch inside which Euler angles are considered degenerate.
pub const GIMBAL_LOCK_MARGIN: f64 = 1e-6;

const YAW_TOLERANCE: f64 = 1e-9;

pub type Vec3 = [f64; 3];
pub type Mat3 = [[f64; 3]; 3];

fn mat_vec(m: &Mat3, v: &Vec3) -> Vec3 {
    [
        m[0][0] * v[0] + m[0][1] * v[1] + m[0][2] * v[2],
        m[1][0] * v[0] + m[1][1] * v[1] + m[1][2] * v[2],
        m[2][0] * v[0] + m[2][1] * v[1] + m[2][2] * v[2],
    ]
}

fn mat_t_vec(m: &Mat3, v: &Vec3) -> Vec3 {
    [
        m[0][0] * v[0] + m[1][0] * v[1] + m[2][0] * v[2],
        m[0][1] * v[0] + m[1][1] * v[1] + m[2][1] * v[2],
        m[0][2] * v[0] + m[1][2] * v[1] + m[2][2] * v[2],
    ]
}

/// Pinhole intrinsics, no distortion.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
}

impl CameraIntrinsics {
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
        let finite = [self.fx, self.fy, self.cx, self.cy]
            .iter()
            .all(|v| v.is_finite());
        if !finite || self.fx <= 0.0 || self.fy <= 0.0 {
            return Err(Error::Config(format!(
                "intrinsics need positive finite focal lengths, got fx={} fy={}",
                self.fx, self.fy
            )));
        }
        if !(self.cx > 0.0 && self.cx < self.width as f64) {
            return Err(Error::Config(format!(
                "principal point cx={} outside (0, {})",
                self.cx, self.width
            )));
        }
        if !(self.cy > 0.0 && self.cy < self.height as f64) {
            return Err(Error::Config(format!(
                "principal point cy={} outside (0, {})",
                self.cy, self.height
            )));
        }
        Ok(())
    }

    pub fn width_f(&self) -> f64 {
        self.width as f64
    }

    pub fn height_f(&self) -> f64 {
        self.height as f64
    }

    /// Half-open image domain `[0, width) x [0, height)`.
    pub fn contains(&self, u: f64, v: f64) -> bool {
        u >= 0.0 && u < self.width_f() && v >= 0.0 && v < self.height_f()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Quaternion {
    pub w: f64,
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Quaternion {
    pub const IDENTITY: Quaternion = Quaternion {
        w: 1.0,
        x: 0.0,
        y: 0.0,
        z: 0.0,
    };

    pub const fn new(w: f64, x: f64, y: f64, z: f64) -> Self {
        Self { w, x, y, z }
    }

    pub fn from_array(a: [f64; 4]) -> Self {
        Self::new(a[0], a[1], a[2], a[3])
    }

    pub fn to_array(self) -> [f64; 4] {
        [self.w, self.x, self.y, self.z]
    }

    /// Rotation by `angle` radians about the (not necessarily unit) `axis`.
    pub fn from_axis_angle(axis: Vec3, angle: f64) -> Self {
        let n = (axis[0] * axis[0] + axis[1] * axis[1] + axis[2] * axis[2]).sqrt();
        let (s, c) = (0.5 * angle).sin_cos();
        Self::new(c, s * axis[0] / n, s * axis[1] / n, s * axis[2] / n)
    }

    pub fn norm(&self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn dot(&self, other: &Quaternion) -> f64 {
        self.w * other.w + self.x * other.x + self.y * other.y + self.z * other.z
    }

    pub fn scale(self, s: f64) -> Self {
        Self::new(self.w * s, self.x * s, self.y * s, self.z * s)
    }

    pub fn normalized(self) -> Self {
        self.scale(1.0 / self.norm())
    }

    /// Sign representative with `w >= 0`.
    pub fn canonical(self) -> Self {
        if self.w < 0.0 {
            -self
        } else {
            self
        }
    }

    pub fn conjugate(self) -> Self {
        Self::new(self.w, -self.x, -self.y, -self.z)
    }

    pub fn rotation_matrix(&self) -> Mat3 {
        let Quaternion { w, x, y, z } = *self;
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

    pub fn rotate(&self, v: Vec3) -> Vec3 {
        mat_vec(&self.rotation_matrix(), &v)
    }
}

impl Mul for Quaternion {
    type Output = Quaternion;

    fn mul(self, r: Quaternion) -> Quaternion {
        Quaternion::new(
            self.w * r.w - self.x * r.x - self.y * r.y - self.z * r.z,
            self.w * r.x + self.x * r.w + self.y * r.z - self.z * r.y,
            self.w * r.y - self.x * r.z + self.y * r.w + self.z * r.x,
            self.w * r.z + self.x * r.y - self.y * r.x + self.z * r.w,
        )
    }
}

impl Neg for Quaternion {
    type Output = Quaternion;

    fn neg(self) -> Quaternion {
        self.scale(-1.0)
    }
}

/// Yaw/pitch/roll in radians, see the module conventions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EulerAngles {
    pub yaw: f64,
    pub pitch: f64,
    pub roll: f64,
}

impl EulerAngles {
    pub const fn new(yaw: f64, pitch: f64, roll: f64) -> Self {
        Self { yaw, pitch, roll }
    }

    pub fn from_degrees(yaw: f64, pitch: f64, roll: f64) -> Self {
        Self::new(yaw.to_radians(), pitch.to_radians(), roll.to_radians())
    }

    pub fn to_degrees(self) -> [f64; 3] {
        [
            self.yaw.to_degrees(),
            self.pitch.to_degrees(),
            self.roll.to_degrees(),
        ]
    }
}

pub fn euler_to_quat(e: EulerAngles) -> Quaternion {
    let yaw = Quaternion::from_axis_angle([0.0, 0.0, 1.0], e.yaw);
    let pitch = Quaternion::from_axis_angle([1.0, 0.0, 0.0], e.pitch);
    let roll = Quaternion::from_axis_angle([0.0, 1.0, 0.0], e.roll);
    (yaw * pitch * roll).normalized().canonical()
}

pub fn quat_to_euler(q: Quaternion) -> Result<EulerAngles> {
    let r = q.normalized().rotation_matrix();
    // R = Rz(yaw) Rx(pitch) Ry(roll): third row is (-cp sr, sp, cp cr).
    let pitch = r[2][1].atan2((r[2][0] * r[2][0] + r[2][2] * r[2][2]).sqrt());
    if FRAC_PI_2 - pitch.abs() < GIMBAL_LOCK_MARGIN {
        return Err(Error::DegenerateOrientation(format!(
            "pitch {pitch:.9} rad is within {GIMBAL_LOCK_MARGIN:e} of gimbal lock"
        )));
    }
    let roll = (-r[2][0]).atan2(r[2][2]);
    let yaw = (-r[0][1]).atan2(r[1][1]);
    Ok(EulerAngles::new(yaw, pitch, roll))
}

/// Columns are the camera axes expressed in world coordinates at the
/// reference attitude.
const REFERENCE_ATTITUDE: Mat3 = [[1.0, 0.0, 0.0], [0.0, 0.0, 1.0], [0.0, -1.0, 0.0]];

/// Camera height above the ground plus tilt; yaw is pinned to `yaw_ref`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraPose {
    pub height_m: f64,
    pub orientation: Quaternion,
    pub yaw_ref: f64,
}

impl CameraPose {
    /// Checks `height > 0`, unit norm and (away from gimbal lock) that the
    /// orientation's yaw equals `yaw_ref`.
    pub fn new(height_m: f64, orientation: Quaternion, yaw_ref: f64) -> Result<Self> {
        if !(height_m.is_finite() && height_m > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "camera height must be positive, got {height_m}"
            )));
        }
        if (orientation.norm() - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidArgument(format!(
                "orientation is not unit norm ({})",
                orientation.norm()
            )));
        }
        if let Ok(e) = quat_to_euler(orientation) {
            let d = wrap_angle(e.yaw - yaw_ref);
            if d.abs() > YAW_TOLERANCE {
                return Err(Error::InvalidArgument(format!(
                    "orientation yaw {} differs from reference yaw {yaw_ref}",
                    e.yaw
                )));
            }
        }
        Ok(Self {
            height_m,
            orientation: orientation.canonical(),
            yaw_ref,
        })
    }

    pub fn from_euler(height_m: f64, e: EulerAngles) -> Result<Self> {
        Self::new(height_m, euler_to_quat(e), e.yaw)
    }

    pub fn euler(&self) -> Result<EulerAngles> {
        quat_to_euler(self.orientation)
    }

    pub fn center(&self) -> Vec3 {
        [0.0, 0.0, self.height_m]
    }

    /// World-from-camera rotation.
    pub fn world_from_camera(&self) -> Mat3 {
        let r = self.orientation.rotation_matrix();
        let mut out = [[0.0; 3]; 3];
        for (i, row) in out.iter_mut().enumerate() {
            for (j, cell) in row.iter_mut().enumerate() {
                *cell = (0..3).map(|k| r[i][k] * REFERENCE_ATTITUDE[k][j]).sum();
            }
        }
        out
    }

    /// Horizontal unit vector along which the camera faces at zero pitch.
    pub fn forward_ground_dir(&self) -> [f64; 2] {
        [-self.yaw_ref.sin(), self.yaw_ref.cos()]
    }

    /// World-frame direction of the ray through pixel `(u, v)` (not unit).
    pub fn pixel_ray(&self, k: &CameraIntrinsics, u: f64, v: f64) -> Vec3 {
        let d_cam = [(u - k.cx) / k.fx, (v - k.cy) / k.fy, 1.0];
        mat_vec(&self.world_from_camera(), &d_cam)
    }
}

fn wrap_angle(a: f64) -> f64 {
    let two_pi = 2.0 * std::f64::consts::PI;
    let r = a.rem_euclid(two_pi);
    if r > std::f64::consts::PI {
        r - two_pi
    } else {
        r
    }
}

pub fn project_ground_point(
    pose: &CameraPose,
    k: &CameraIntrinsics,
    ground: [f64; 2],
) -> Result<[f64; 2]> {
    project_world_point(pose, k, [ground[0], ground[1], 0.0])
}

pub fn project_world_point(pose: &CameraPose, k: &CameraIntrinsics, p: Vec3) -> Result<[f64; 2]> {
    let c = pose.center();
    let rel = [p[0] - c[0], p[1] - c[1], p[2] - c[2]];
    let pc = mat_t_vec(&pose.world_from_camera(), &rel);
    if pc[2] <= 1e-9 {
        return Err(Error::BehindCamera { depth: pc[2] });
    }
    Ok([k.fx * pc[0] / pc[2] + k.cx, k.fy * pc[1] / pc[2] + k.cy])
}

pub fn backproject_pixel(
    pose: &CameraPose,
    k: &CameraIntrinsics,
    pixel: [f64; 2],
) -> Result<[f64; 2]> {
    let d = pose.pixel_ray(k, pixel[0], pixel[1]);
    let len = (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt();
    if d[2] >= -1e-12 * len {
        return Err(Error::Horizon {
            u: pixel[0],
            v: pixel[1],
        });
    }
    let s = -pose.height_m / d[2];
    Ok([s * d[0], s * d[1]])
}

pub fn position_error(t_true: f64, t_pred: f64) -> f64 {
    (t_true - t_pred).abs()
}

/// Rotation angle between two orientations, in `[0, π]`.
pub fn orientation_error(q_true: Quaternion, q_pred: Quaternion) -> f64 {
    // atan2 of chord lengths stays accurate near 0 and π, unlike acos.
    let a = q_true.normalized().to_array();
    let mut b = q_pred.normalized().to_array();
    if q_true.dot(&q_pred) < 0.0 {
        b = b.map(|x| -x);
    }
    let diff = (0..4).map(|i| (a[i] - b[i]).powi(2)).sum::<f64>().sqrt();
    let sum = (0..4).map(|i| (a[i] + b[i]).powi(2)).sum::<f64>().sqrt();
    4.0 * diff.atan2(sum)
}

/// Sign-aligned component mean, renormalized and canonicalized.
pub fn aggregate_quaternions(qs: &[Quaternion]) -> Result<Quaternion> {
    let first = *qs
        .first()
        .ok_or_else(|| Error::InvalidArgument("cannot aggregate zero quaternions".into()))?;
    // Accumulate deviations from the first element so identical inputs
    // reproduce it bit for bit.
    let base = first.to_array();
    let mut acc = [0.0; 4];
    for q in qs {
        let aligned = if q.dot(&first) < 0.0 { -*q } else { *q };
        for ((a, c), b) in acc.iter_mut().zip(aligned.to_array()).zip(base) {
            *a += c - b;
        }
    }
    let n = qs.len() as f64;
    let mut mean = [0.0; 4];
    for i in 0..4 {
        mean[i] = base[i] + acc[i] / n;
    }
    let mean = Quaternion::from_array(mean);
    let norm = mean.norm();
    if norm < 1e-9 {
        return Err(Error::DegenerateMean { norm });
    }
    if (norm - 1.0).abs() <= 2.0 * f64::EPSILON {
        return Ok(mean.canonical());
    }
    Ok(mean.scale(1.0 / norm).canonical())
}
