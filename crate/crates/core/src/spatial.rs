//! Spatial algebra for the two fixed-base chains and the held object.
//!
//! Every 6-vector in this crate is ordered (angular; linear): twists are
//! (ω; v) and wrenches are (τ; f). Pose errors use the same layout with the
//! orientation part given by the rotation logarithm.

use std::ops::Mul;

use nalgebra::{Matrix3, Matrix6, Rotation3, Unit, UnitQuaternion, Vector3, Vector6};
use serde::{Deserialize, Serialize};

pub type Rotation = Rotation3<f64>;

/// Skew-symmetric matrix such that `skew(v) * u == v.cross(&u)`.
#[inline]
pub fn skew(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// Rigid transform. Maps points of the child frame into the parent frame:
/// `x_parent = rotation * x_child + translation`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Pose {
    pub rotation: Rotation,
    pub translation: Vector3<f64>,
}

impl Default for Pose {
    fn default() -> Self {
        Self::identity()
    }
}

impl Pose {
    pub fn identity() -> Self {
        Self { rotation: Rotation::identity(), translation: Vector3::zeros() }
    }

    pub fn new(rotation: Rotation, translation: Vector3<f64>) -> Self {
        Self { rotation, translation }
    }

    pub fn from_translation(translation: Vector3<f64>) -> Self {
        Self { rotation: Rotation::identity(), translation }
    }

    pub fn from_rotation(rotation: Rotation) -> Self {
        Self { rotation, translation: Vector3::zeros() }
    }

    /// Quaternion given as (w, x, y, z); normalized on the way in.
    pub fn from_quaternion(wxyz: [f64; 4], translation: Vector3<f64>) -> Self {
        let q = UnitQuaternion::from_quaternion(nalgebra::Quaternion::new(
            wxyz[0], wxyz[1], wxyz[2], wxyz[3],
        ));
        Self { rotation: q.to_rotation_matrix(), translation }
    }

    /// Quaternion (w, x, y, z) with non-negative w.
    pub fn quaternion(&self) -> [f64; 4] {
        let q = UnitQuaternion::from_rotation_matrix(&self.rotation);
        let s = if q.w < 0.0 { -1.0 } else { 1.0 };
        [s * q.w, s * q.i, s * q.j, s * q.k]
    }

    pub fn inverse(&self) -> Self {
        let r_inv = self.rotation.inverse();
        Self { rotation: r_inv, translation: -(r_inv * self.translation) }
    }

    pub fn transform_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    /// Apply a world-frame increment `(δω; δp)`: the rotation is pre-multiplied
    /// by `exp(δω)` and the translation shifted by `δp`.
    pub fn perturbed(&self, delta: &Vector6<f64>) -> Self {
        let dr = Rotation::new(Vector3::new(delta[0], delta[1], delta[2]));
        Self {
            rotation: dr * self.rotation,
            translation: self.translation + Vector3::new(delta[3], delta[4], delta[5]),
        }
    }

    /// Rotation about `axis` through the origin.
    pub fn rotation_about(axis: &Vector3<f64>, angle: f64) -> Rotation {
        Rotation::from_axis_angle(&Unit::new_normalize(*axis), angle)
    }

    pub fn is_finite(&self) -> bool {
        self.translation.iter().all(|v| v.is_finite())
            && self.rotation.matrix().iter().all(|v| v.is_finite())
    }

    /// Orthonormality and handedness within `tol`.
    pub fn is_valid(&self, tol: f64) -> bool {
        let r = self.rotation.matrix();
        self.is_finite()
            && (r * r.transpose() - Matrix3::identity()).amax() <= tol
            && (r.determinant() - 1.0).abs() <= tol
    }
}

impl Mul for Pose {
    type Output = Pose;

    fn mul(self, rhs: Pose) -> Pose {
        Pose {
            rotation: self.rotation * rhs.rotation,
            translation: self.rotation * rhs.translation + self.translation,
        }
    }
}

impl<'a> Mul<&'a Pose> for &'a Pose {
    type Output = Pose;

    fn mul(self, rhs: &Pose) -> Pose {
        *self * *rhs
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Twist {
    pub angular: Vector3<f64>,
    pub linear: Vector3<f64>,
}

impl Twist {
    pub fn zero() -> Self {
        Self::default()
    }

    pub fn from_vector(v: &Vector6<f64>) -> Self {
        Self { angular: v.fixed_rows::<3>(0).into(), linear: v.fixed_rows::<3>(3).into() }
    }

    pub fn to_vector(&self) -> Vector6<f64> {
        stack(&self.angular, &self.linear)
    }

    pub fn is_finite(&self) -> bool {
        self.angular.iter().chain(self.linear.iter()).all(|v| v.is_finite())
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Wrench {
    pub torque: Vector3<f64>,
    pub force: Vector3<f64>,
}

impl Wrench {
    pub fn zero() -> Self {
        Self::default()
    }

    pub fn new(torque: Vector3<f64>, force: Vector3<f64>) -> Self {
        Self { torque, force }
    }

    pub fn from_force(force: Vector3<f64>) -> Self {
        Self { torque: Vector3::zeros(), force }
    }

    pub fn from_vector(v: &Vector6<f64>) -> Self {
        Self { torque: v.fixed_rows::<3>(0).into(), force: v.fixed_rows::<3>(3).into() }
    }

    pub fn to_vector(&self) -> Vector6<f64> {
        stack(&self.torque, &self.force)
    }

    pub fn is_finite(&self) -> bool {
        self.torque.iter().chain(self.force.iter()).all(|v| v.is_finite())
    }

    /// Re-express in a frame rotated by `r` about the same reference point.
    pub fn rotated(&self, r: &Rotation) -> Self {
        Self { torque: r * self.torque, force: r * self.force }
    }
}

impl std::ops::Add for Wrench {
    type Output = Wrench;

    fn add(self, rhs: Wrench) -> Wrench {
        Wrench { torque: self.torque + rhs.torque, force: self.force + rhs.force }
    }
}

impl std::ops::Sub for Wrench {
    type Output = Wrench;

    fn sub(self, rhs: Wrench) -> Wrench {
        Wrench { torque: self.torque - rhs.torque, force: self.force - rhs.force }
    }
}

/// 6×6 map re-expressing a wrench given in a source frame in a destination frame.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct WrenchTransform(pub Matrix6<f64>);

impl WrenchTransform {
    pub fn identity() -> Self {
        Self(Matrix6::identity())
    }

    pub fn matrix(&self) -> &Matrix6<f64> {
        &self.0
    }

    pub fn apply(&self, w: &Wrench) -> Wrench {
        Wrench::from_vector(&(self.0 * w.to_vector()))
    }
}

impl Mul for WrenchTransform {
    type Output = WrenchTransform;

    fn mul(self, rhs: WrenchTransform) -> WrenchTransform {
        WrenchTransform(self.0 * rhs.0)
    }
}

fn stack(top: &Vector3<f64>, bottom: &Vector3<f64>) -> Vector6<f64> {
    Vector6::new(top.x, top.y, top.z, bottom.x, bottom.y, bottom.z)
}

/// Wrench transform for `pose` = pose of the source frame in the destination
/// frame: `τ' = R τ + p × (R f)`, `f' = R f`.
pub fn wrench_transform(pose: &Pose) -> WrenchTransform {
    let r = *pose.rotation.matrix();
    let mut m = Matrix6::zeros();
    m.fixed_view_mut::<3, 3>(0, 0).copy_from(&r);
    m.fixed_view_mut::<3, 3>(0, 3).copy_from(&(skew(&pose.translation) * r));
    m.fixed_view_mut::<3, 3>(3, 3).copy_from(&r);
    WrenchTransform(m)
}

/// Motion (twist) transform for the same convention; `wrench_transform` is its
/// inverse transpose.
pub fn motion_transform(pose: &Pose) -> Matrix6<f64> {
    let r = *pose.rotation.matrix();
    let mut m = Matrix6::zeros();
    m.fixed_view_mut::<3, 3>(0, 0).copy_from(&r);
    m.fixed_view_mut::<3, 3>(3, 0).copy_from(&(skew(&pose.translation) * r));
    m.fixed_view_mut::<3, 3>(3, 3).copy_from(&r);
    m
}

/// Transform for a torque-free wrench applied at the destination origin: only
/// the rotation acts, on the force block.
pub fn gravity_only_wrench_transform(pose: &Pose) -> WrenchTransform {
    let mut m = Matrix6::zeros();
    m.fixed_view_mut::<3, 3>(3, 3).copy_from(pose.rotation.matrix());
    WrenchTransform(m)
}

/// Error of `desired` relative to `actual`, world-aligned:
/// `(log(R_d R_aᵀ); p_d − p_a)`.
pub fn pose_error(actual: &Pose, desired: &Pose) -> Vector6<f64> {
    let rot = rotation_log(&(desired.rotation * actual.rotation.inverse()));
    stack(&rot, &(desired.translation - actual.translation))
}

/// Rotation log as an axis·angle vector.
pub fn rotation_log(r: &Rotation) -> Vector3<f64> {
    let m = r.matrix();
    let c = 0.5 * (m.trace() - 1.0);
    if c < -0.5 {
        // Near a half turn the skew part vanishes; the quaternion keeps the axis.
        return nalgebra::UnitQuaternion::from_rotation_matrix(r).scaled_axis();
    }
    // atan2 keeps full precision near identity.
    let v = 0.5 * Vector3::new(m[(2, 1)] - m[(1, 2)], m[(0, 2)] - m[(2, 0)], m[(1, 0)] - m[(0, 1)]);
    let s = v.norm();
    if s < 1e-300 {
        return Vector3::zeros();
    }
    v * (s.atan2(c) / s)
}
