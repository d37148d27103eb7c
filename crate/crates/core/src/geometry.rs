//! Rigid transforms, the pinhole camera and the projections shared by the
//! tracker, the rasterizer and the mapper.
//!
//! Poses are stored world-from-camera. Twists are ordered `[ω; v]` and pose
//! updates are left-multiplicative: `T ← exp(ξ) · T`.

use std::fmt;

use nalgebra::{Matrix3, Rotation3, UnitQuaternion, Vector3, Vector6};

use crate::error::{Error, Result};

pub type Vec3 = Vector3<f64>;
pub type Mat3 = Matrix3<f64>;
pub type Twist = Vector6<f64>;

/// Camera-frame depths at or below this value have no defined projection.
pub const MIN_PROJECTION_DEPTH: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PixelCoord {
    pub u: f64,
    pub v: f64,
}

impl PixelCoord {
    pub fn new(u: f64, v: f64) -> Self {
        Self { u, v }
    }

    pub fn distance(&self, other: &PixelCoord) -> f64 {
        ((self.u - other.u).powi(2) + (self.v - other.v).powi(2)).sqrt()
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
}

impl CameraIntrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, width: usize, height: usize) -> Result<Self> {
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
        let ok = self.fx > 0.0
            && self.fy > 0.0
            && self.cx > 0.0
            && self.cx < self.width as f64
            && self.cy > 0.0
            && self.cy < self.height as f64;
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid camera intrinsics {self:?}")))
        }
    }

    /// Intrinsics for an image downsampled by an integer factor, keeping
    /// pixel centres at integer coordinates.
    pub fn downsampled(&self, factor: usize) -> Self {
        let s = factor as f64;
        Self {
            fx: self.fx / s,
            fy: self.fy / s,
            cx: (self.cx + 0.5) / s - 0.5,
            cy: (self.cy + 0.5) / s - 0.5,
            width: self.width / factor,
            height: self.height / factor,
        }
    }

    pub fn contains(&self, p: &PixelCoord) -> bool {
        p.u >= 0.0 && p.v >= 0.0 && p.u <= (self.width - 1) as f64 && p.v <= (self.height - 1) as f64
    }

    pub fn pixel_count(&self) -> usize {
        self.width * self.height
    }

    /// Pinhole projection of a camera-frame point. `None` when behind the camera.
    pub fn project_camera(&self, pc: &Vec3) -> Option<PixelCoord> {
        if pc.z <= MIN_PROJECTION_DEPTH {
            return None;
        }
        Some(PixelCoord::new(
            self.fx * pc.x / pc.z + self.cx,
            self.fy * pc.y / pc.z + self.cy,
        ))
    }

    /// ∂(u, v)/∂(x, y, z) for a camera-frame point.
    pub fn projection_jacobian(&self, pc: &Vec3) -> [[f64; 3]; 2] {
        let iz = 1.0 / pc.z;
        let iz2 = iz * iz;
        [
            [self.fx * iz, 0.0, -self.fx * pc.x * iz2],
            [0.0, self.fy * iz, -self.fy * pc.y * iz2],
        ]
    }
}

/// Rigid transform. As a camera pose it maps camera coordinates to world.
#[derive(Clone, Copy, PartialEq)]
pub struct SE3Pose {
    pub rotation: Mat3,
    pub translation: Vec3,
}

impl fmt::Debug for SE3Pose {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let q = self.quaternion();
        write!(
            f,
            "SE3Pose(t: [{:.6}, {:.6}, {:.6}], q: [{:.6}, {:.6}, {:.6}, {:.6}])",
            self.translation.x,
            self.translation.y,
            self.translation.z,
            q.i,
            q.j,
            q.k,
            q.w
        )
    }
}

impl Default for SE3Pose {
    fn default() -> Self {
        Self::identity()
    }
}

impl SE3Pose {
    pub fn identity() -> Self {
        Self {
            rotation: Mat3::identity(),
            translation: Vec3::zeros(),
        }
    }

    pub fn new(rotation: Mat3, translation: Vec3) -> Self {
        Self {
            rotation,
            translation,
        }
    }

    pub fn from_quaternion(translation: Vec3, qx: f64, qy: f64, qz: f64, qw: f64) -> Self {
        let q = UnitQuaternion::from_quaternion(nalgebra::Quaternion::new(qw, qx, qy, qz));
        Self::new(q.to_rotation_matrix().into_inner(), translation)
    }

    /// Unit quaternion with non-negative `w`.
    pub fn quaternion(&self) -> nalgebra::Quaternion<f64> {
        let q = UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix_unchecked(self.rotation));
        let q = q.into_inner();
        if q.w < 0.0 {
            -q
        } else {
            q
        }
    }

    /// Camera pose at `eye` looking at `target`, with image rows pointing
    /// roughly along `down` (camera convention: x right, y down, z forward).
    pub fn look_at(eye: Vec3, target: Vec3, down: Vec3) -> Self {
        let z = (target - eye).normalize();
        let x = down.cross(&z).normalize();
        let y = z.cross(&x);
        let r = Mat3::from_columns(&[x, y, z]);
        Self::new(r, eye)
    }

    pub fn compose(&self, other: &SE3Pose) -> SE3Pose {
        SE3Pose {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    pub fn inverse(&self) -> SE3Pose {
        let rt = self.rotation.transpose();
        SE3Pose {
            rotation: rt,
            translation: -(rt * self.translation),
        }
    }

    pub fn transform_point(&self, p: &Vec3) -> Vec3 {
        self.rotation * p + self.translation
    }

    /// Applies the inverse transform without forming it.
    pub fn inverse_transform_point(&self, p: &Vec3) -> Vec3 {
        self.rotation.transpose() * (p - self.translation)
    }

    /// `exp(ξ) · self`.
    pub fn retract(&self, twist: &Twist) -> SE3Pose {
        se3_exp(twist).compose(self).renormalized()
    }

    /// Projects the rotation back onto SO(3).
    pub fn renormalized(&self) -> SE3Pose {
        // Newton iteration for the polar factor; converges quadratically
        // from a nearly orthonormal matrix.
        let mut r = self.rotation;
        for _ in 0..2 {
            r = r * (Mat3::identity() * 3.0 - r.transpose() * r) * 0.5;
        }
        SE3Pose::new(r, self.translation)
    }

    pub fn orthonormality_error(&self) -> f64 {
        (self.rotation.transpose() * self.rotation - Mat3::identity()).norm()
    }

    /// Norm of `log(self · other⁻¹)`; zero iff the poses coincide.
    pub fn twist_distance(&self, other: &SE3Pose) -> f64 {
        se3_log(&self.compose(&other.inverse())).norm()
    }

    pub fn is_finite(&self) -> bool {
        self.rotation.iter().all(|v| v.is_finite()) && self.translation.iter().all(|v| v.is_finite())
    }
}

pub fn skew(w: &Vec3) -> Mat3 {
    Mat3::new(0.0, -w.z, w.y, w.z, 0.0, -w.x, -w.y, w.x, 0.0)
}

pub fn twist(omega: Vec3, v: Vec3) -> Twist {
    Twist::new(omega.x, omega.y, omega.z, v.x, v.y, v.z)
}

fn split(xi: &Twist) -> (Vec3, Vec3) {
    (Vec3::new(xi[0], xi[1], xi[2]), Vec3::new(xi[3], xi[4], xi[5]))
}

/// Left Jacobian of SO(3); maps the translational part of a twist.
fn so3_left_jacobian(omega: &Vec3) -> Mat3 {
    let theta2 = omega.norm_squared();
    let w = skew(omega);
    let (a, b) = if theta2 < 1e-10 {
        (0.5 - theta2 / 24.0, 1.0 / 6.0 - theta2 / 120.0)
    } else {
        let theta = theta2.sqrt();
        ((1.0 - theta.cos()) / theta2, (theta - theta.sin()) / (theta2 * theta))
    };
    Mat3::identity() + w * a + w * w * b
}

fn so3_left_jacobian_inv(omega: &Vec3) -> Mat3 {
    let theta2 = omega.norm_squared();
    let w = skew(omega);
    let c = if theta2 < 1e-10 {
        1.0 / 12.0 + theta2 / 720.0
    } else {
        let theta = theta2.sqrt();
        (1.0 - theta * theta.sin() / (2.0 * (1.0 - theta.cos()))) / theta2
    };
    Mat3::identity() - w * 0.5 + w * w * c
}

pub fn so3_exp(omega: &Vec3) -> Mat3 {
    Rotation3::new(*omega).into_inner()
}

/// Rotation vector of a rotation matrix, robust near 0 and π.
pub fn so3_log(r: &Mat3) -> Vec3 {
    let vee = Vec3::new(r[(2, 1)] - r[(1, 2)], r[(0, 2)] - r[(2, 0)], r[(1, 0)] - r[(0, 1)]) * 0.5;
    let cos = ((r.trace() - 1.0) * 0.5).clamp(-1.0, 1.0);
    let sin = vee.norm();
    let theta = sin.atan2(cos);
    if theta < 1e-6 {
        return vee * (1.0 + theta * theta / 6.0);
    }
    if theta < std::f64::consts::PI - 1e-3 {
        return vee * (theta / sin);
    }
    // Near π: the axis comes from the symmetric part, aaᵀ = (S − cos·I)/(1 − cos).
    let sym = (r + r.transpose()) * 0.5 - Mat3::identity() * cos;
    let mut best = 0;
    for i in 1..3 {
        if sym[(i, i)] > sym[(best, best)] {
            best = i;
        }
    }
    let mut axis = Vec3::new(sym[(0, best)], sym[(1, best)], sym[(2, best)]).normalize();
    if axis.dot(&vee) < 0.0 {
        axis = -axis;
    }
    axis * theta
}

pub fn se3_exp(xi: &Twist) -> SE3Pose {
    let (omega, v) = split(xi);
    SE3Pose::new(so3_exp(&omega), so3_left_jacobian(&omega) * v)
}

pub fn se3_log(pose: &SE3Pose) -> Twist {
    let omega = so3_log(&pose.rotation);
    let v = so3_left_jacobian_inv(&omega) * pose.translation;
    twist(omega, v)
}

/// Pinhole projection of a world point seen from `world_from_camera`.
/// Returns the pixel and the camera-frame depth.
pub fn project_point(
    k: &CameraIntrinsics,
    world_from_camera: &SE3Pose,
    p: &Vec3,
) -> Result<(PixelCoord, f64)> {
    let pc = world_from_camera.inverse_transform_point(p);
    match k.project_camera(&pc) {
        Some(px) => Ok((px, pc.z)),
        None => Err(Error::BehindCamera { z: pc.z }),
    }
}

/// Lifts a pixel with known z-depth to a world point.
pub fn backproject(
    k: &CameraIntrinsics,
    world_from_camera: &SE3Pose,
    p: &PixelCoord,
    depth: f64,
) -> Result<Vec3> {
    if !(depth > 0.0) || !depth.is_finite() {
        return Err(Error::InvalidDepth(depth));
    }
    let pc = Vec3::new(
        (p.u - k.cx) / k.fx * depth,
        (p.v - k.cy) / k.fy * depth,
        depth,
    );
    Ok(world_from_camera.transform_point(&pc))
}

/// ∂p_c/∂ξ for a world point under a left perturbation of the camera pose:
/// `p_c(ξ) = (exp(ξ)·T)⁻¹ p`, giving `[Rᵀ[p]×, −Rᵀ]`.
pub fn camera_point_twist_jacobian(world_from_camera: &SE3Pose, p_world: &Vec3) -> [[f64; 6]; 3] {
    let rt = world_from_camera.rotation.transpose();
    let a = rt * skew(p_world);
    let mut j = [[0.0; 6]; 3];
    for r in 0..3 {
        for c in 0..3 {
            j[r][c] = a[(r, c)];
            j[r][c + 3] = -rt[(r, c)];
        }
    }
    j
}
