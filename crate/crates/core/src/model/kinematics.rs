use nalgebra::{DMatrix, DVector, Matrix3, Vector3};

use super::ArmModel;
use crate::spatial::{pose_error, skew, Pose};

/// World-frame quantities of one arm at a configuration. Computed once and
/// shared by the Jacobian and dynamics routines.
#[derive(Clone, Debug)]
pub struct ChainState {
    /// Joint origins.
    pub origins: Vec<Vector3<f64>>,
    /// Unit joint axes.
    pub axes: Vec<Vector3<f64>>,
    /// Link frames after each joint rotation.
    pub frames: Vec<Pose>,
    pub coms: Vec<Vector3<f64>>,
    pub end_effector: Pose,
}

impl ChainState {
    pub fn compute(arm: &ArmModel, q: &[f64]) -> Self {
        assert_eq!(q.len(), arm.dof(), "joint vector length does not match the chain");
        let n = arm.dof();
        let mut origins = Vec::with_capacity(n);
        let mut axes = Vec::with_capacity(n);
        let mut frames = Vec::with_capacity(n);
        let mut coms = Vec::with_capacity(n);
        let mut t = arm.base_pose;
        for (joint, &qi) in arm.joints.iter().zip(q) {
            let pre = t * joint.parent_offset;
            let axis = pre.rotation * joint.axis;
            origins.push(pre.translation);
            axes.push(axis);
            t = pre * Pose::from_rotation(Pose::rotation_about(&joint.axis, qi));
            coms.push(t.transform_point(&joint.link_com));
            frames.push(t);
        }
        let end_effector = t * arm.end_effector_offset;
        Self { origins, axes, frames, coms, end_effector }
    }

    pub fn dof(&self) -> usize {
        self.axes.len()
    }

    /// 6×n Jacobian giving the end-effector twist (ω; v) at the end-effector
    /// origin, in world axes.
    pub fn jacobian_world(&self) -> DMatrix<f64> {
        let p = self.end_effector.translation;
        let mut j = DMatrix::zeros(6, self.dof());
        for (i, (z, o)) in self.axes.iter().zip(&self.origins).enumerate() {
            let lin = z.cross(&(p - o));
            j.fixed_view_mut::<3, 1>(0, i).copy_from(z);
            j.fixed_view_mut::<3, 1>(3, i).copy_from(&lin);
        }
        j
    }

    /// Same twist expressed in the end-effector axes.
    pub fn jacobian_local(&self) -> DMatrix<f64> {
        let rt = self.end_effector.rotation.inverse();
        let mut j = self.jacobian_world();
        for i in 0..j.ncols() {
            let w = rt * Vector3::new(j[(0, i)], j[(1, i)], j[(2, i)]);
            let v = rt * Vector3::new(j[(3, i)], j[(4, i)], j[(5, i)]);
            j.fixed_view_mut::<3, 1>(0, i).copy_from(&w);
            j.fixed_view_mut::<3, 1>(3, i).copy_from(&v);
        }
        j
    }

    /// Angular block of `jacobian_world`.
    pub fn jacobian_rotational(&self) -> DMatrix<f64> {
        let mut j = DMatrix::zeros(3, self.dof());
        for (i, z) in self.axes.iter().enumerate() {
            j.fixed_view_mut::<3, 1>(0, i).copy_from(z);
        }
        j
    }

    /// Jacobian of a point rigidly attached to the end effector (world
    /// position `point`): angular rows unchanged, linear rows shifted.
    pub fn jacobian_of_point(&self, point: &Vector3<f64>) -> DMatrix<f64> {
        let mut j = DMatrix::zeros(6, self.dof());
        for (i, (z, o)) in self.axes.iter().zip(&self.origins).enumerate() {
            j.fixed_view_mut::<3, 1>(0, i).copy_from(z);
            j.fixed_view_mut::<3, 1>(3, i).copy_from(&z.cross(&(point - o)));
        }
        j
    }

    pub fn link_inertia_world(&self, arm: &ArmModel, i: usize) -> Matrix3<f64> {
        let r = self.frames[i].rotation.matrix();
        r * arm.joints[i].link_inertia * r.transpose()
    }
}

/// Relative Jacobian of the right hand with respect to the left hand, in the
/// left-hand frame. Columns: left arm joints, then right arm joints.
pub fn relative_jacobian_of(left: &ChainState, right: &ChainState) -> DMatrix<f64> {
    let n_l = left.dof();
    let n_r = right.dof();
    let rlt = *left.end_effector.rotation.inverse().matrix();
    let jl = left.jacobian_world();
    let jr = right.jacobian_world();
    let d = skew(&(right.end_effector.translation - left.end_effector.translation));

    let mut j = DMatrix::zeros(6, n_l + n_r);
    for i in 0..n_l {
        let w = Vector3::new(jl[(0, i)], jl[(1, i)], jl[(2, i)]);
        let v = Vector3::new(jl[(3, i)], jl[(4, i)], jl[(5, i)]);
        j.fixed_view_mut::<3, 1>(0, i).copy_from(&(-(rlt * w)));
        j.fixed_view_mut::<3, 1>(3, i).copy_from(&(rlt * (-v + d * w)));
    }
    for i in 0..n_r {
        let w = Vector3::new(jr[(0, i)], jr[(1, i)], jr[(2, i)]);
        let v = Vector3::new(jr[(3, i)], jr[(4, i)], jr[(5, i)]);
        j.fixed_view_mut::<3, 1>(0, n_l + i).copy_from(&(rlt * w));
        j.fixed_view_mut::<3, 1>(3, n_l + i).copy_from(&(rlt * v));
    }
    j
}

/// Damped least-squares inverse kinematics with joint limits, from `seed`.
/// Returns `None` when the pose error is still above `tol` (rad, m) after
/// `max_iterations`.
pub fn inverse_kinematics(
    arm: &ArmModel,
    target: &Pose,
    seed: &[f64],
    tol: f64,
    max_iterations: usize,
) -> Option<Vec<f64>> {
    let mut q = seed.to_vec();
    let damping = 1e-4;
    for _ in 0..max_iterations {
        let state = arm.state(&q);
        let e = pose_error(&state.end_effector, target);
        if e.amax() <= tol {
            return Some(q);
        }
        let j = state.jacobian_world();
        let jjt = &j * j.transpose() + DMatrix::identity(6, 6) * damping;
        let y = jjt.cholesky()?.solve(&DVector::from_column_slice(e.as_slice()));
        let dq = j.transpose() * y;
        let scale = (0.2 / dq.amax()).min(1.0);
        for (i, joint) in arm.joints.iter().enumerate() {
            q[i] = (q[i] + scale * dq[i]).clamp(joint.q_min, joint.q_max);
        }
    }
    (pose_error(&arm.forward_kinematics(&q), target).amax() <= tol).then_some(q)
}
