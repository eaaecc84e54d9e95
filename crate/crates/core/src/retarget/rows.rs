//! Inequality rows and the quadratic cost of one retargeting step.

use std::fmt;

use nalgebra::{DMatrix, DVector, Vector6};

use crate::model::{ChainState, DualArmModel, ObjectModel};
use crate::spatial::{pose_error, Pose};

use super::{DecisionState, Linearization, RetargetConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Side {
    Left,
    Right,
}

impl Side {
    pub fn as_str(&self) -> &'static str {
        match self {
            Side::Left => "left",
            Side::Right => "right",
        }
    }
}

/// Contact-stability rows, in emission order for each contact.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ContactRow {
    NormalMin,
    NormalMax,
    FrictionXPos,
    FrictionXNeg,
    FrictionYPos,
    FrictionYNeg,
    CopXPos,
    CopXNeg,
    CopYPos,
    CopYNeg,
    TorsionPos,
    TorsionNeg,
    /// Two-sided bound on the per-cycle change of one wrench component.
    Rate(usize),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RowLabel {
    PositionUpper(usize),
    PositionLower(usize),
    TorqueUpper(usize),
    TorqueLower(usize),
    Contact(Side, ContactRow),
}

impl RowLabel {
    pub fn is_torque(&self) -> bool {
        matches!(self, RowLabel::TorqueUpper(_) | RowLabel::TorqueLower(_))
    }
}

impl fmt::Display for RowLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        const COMPONENTS: [&str; 6] = ["tx", "ty", "tz", "fx", "fy", "fz"];
        match self {
            RowLabel::PositionUpper(j) => write!(f, "q_upper[{j}]"),
            RowLabel::PositionLower(j) => write!(f, "q_lower[{j}]"),
            RowLabel::TorqueUpper(j) => write!(f, "tau_upper[{j}]"),
            RowLabel::TorqueLower(j) => write!(f, "tau_lower[{j}]"),
            RowLabel::Contact(side, row) => {
                let name = match row {
                    ContactRow::NormalMin => "normal_min".to_string(),
                    ContactRow::NormalMax => "normal_max".to_string(),
                    ContactRow::FrictionXPos => "friction_x+".to_string(),
                    ContactRow::FrictionXNeg => "friction_x-".to_string(),
                    ContactRow::FrictionYPos => "friction_y+".to_string(),
                    ContactRow::FrictionYNeg => "friction_y-".to_string(),
                    ContactRow::CopXPos => "cop_x+".to_string(),
                    ContactRow::CopXNeg => "cop_x-".to_string(),
                    ContactRow::CopYPos => "cop_y+".to_string(),
                    ContactRow::CopYNeg => "cop_y-".to_string(),
                    ContactRow::TorsionPos => "torsion+".to_string(),
                    ContactRow::TorsionNeg => "torsion-".to_string(),
                    ContactRow::Rate(k) => format!("rate_{}", COMPONENTS[*k]),
                };
                write!(f, "{}.{name}", side.as_str())
            }
        }
    }
}

/// Rows `0 ≤ A Δx + b ≤ range` over the decision increment.
#[derive(Clone, Debug)]
pub struct InequalityRows {
    pub a: DMatrix<f64>,
    pub b: DVector<f64>,
    pub range: DVector<f64>,
    pub labels: Vec<RowLabel>,
    pub joint_rows: usize,
    pub contact_rows: usize,
}

impl InequalityRows {
    pub fn len(&self) -> usize {
        self.b.len()
    }

    pub fn is_empty(&self) -> bool {
        self.b.is_empty()
    }

    /// Largest violation at `Δx`, in row units.
    pub fn violation(&self, dx: &DVector<f64>) -> f64 {
        let s = &self.a * dx + &self.b;
        s.iter().zip(self.range.iter()).map(|(s, r)| (-s).max(s - r).max(0.0)).fold(0.0, f64::max)
    }
}

/// Contact rows without the rate block, as coefficient rows over the six
/// wrench components `(τx, τy, τz, fx, fy, fz)`.
pub(crate) fn contact_stability_rows(object: &ObjectModel, config: &RetargetConfig) -> [(ContactRow, [f64; 6], f64); 12] {
    let s = config.contact_safety;
    let mu = s * object.friction_mu / std::f64::consts::SQRT_2;
    let [hx, hy] = object.contact_halfwidths;
    let (hx, hy) = (s * hx, s * hy);
    let mt = s * object.torsional_mu;
    // Row value = coeffs · λ + offset.
    [
        (ContactRow::NormalMin, [0.0, 0.0, 0.0, 0.0, 0.0, 1.0], -object.f_normal_min),
        (ContactRow::NormalMax, [0.0, 0.0, 0.0, 0.0, 0.0, -1.0], object.f_normal_max),
        (ContactRow::FrictionXPos, [0.0, 0.0, 0.0, -1.0, 0.0, mu], 0.0),
        (ContactRow::FrictionXNeg, [0.0, 0.0, 0.0, 1.0, 0.0, mu], 0.0),
        (ContactRow::FrictionYPos, [0.0, 0.0, 0.0, 0.0, -1.0, mu], 0.0),
        (ContactRow::FrictionYNeg, [0.0, 0.0, 0.0, 0.0, 1.0, mu], 0.0),
        // Centre of pressure: τx = p_y f_z, τy = −p_x f_z.
        (ContactRow::CopXPos, [-1.0, 0.0, 0.0, 0.0, 0.0, hy], 0.0),
        (ContactRow::CopXNeg, [1.0, 0.0, 0.0, 0.0, 0.0, hy], 0.0),
        (ContactRow::CopYPos, [0.0, -1.0, 0.0, 0.0, 0.0, hx], 0.0),
        (ContactRow::CopYNeg, [0.0, 1.0, 0.0, 0.0, 0.0, hx], 0.0),
        (ContactRow::TorsionPos, [0.0, 0.0, -1.0, 0.0, 0.0, mt], 0.0),
        (ContactRow::TorsionNeg, [0.0, 0.0, 1.0, 0.0, 0.0, mt], 0.0),
    ]
}

/// Joint rows (four per joint: position/velocity upper and lower, torque
/// upper and lower) followed by eighteen rows per contact.
pub fn build_inequalities(
    dual: &DualArmModel,
    object: &ObjectModel,
    state: &DecisionState,
    lin: &Linearization,
    config: &RetargetConfig,
) -> InequalityRows {
    let n = dual.dof();
    let d = n + 12;
    let rows = 4 * n + 36;
    let mut a = DMatrix::zeros(rows, d);
    let mut b = DVector::zeros(rows);
    let mut range = DVector::from_element(rows, f64::INFINITY);
    let mut labels = Vec::with_capacity(rows);

    let mut r = 0;
    for (j, joint) in dual.joints().enumerate() {
        let q = state.q[j];
        let step = joint.dq_max * config.dt;
        let hi = (joint.q_max - config.position_margin - q).min(step);
        let lo = (joint.q_min + config.position_margin - q).max(-step);
        // hi − Δq ≥ 0
        a[(r, j)] = -1.0;
        b[r] = hi;
        labels.push(RowLabel::PositionUpper(j));
        r += 1;
        // Δq − lo ≥ 0
        a[(r, j)] = 1.0;
        b[r] = -lo;
        labels.push(RowLabel::PositionLower(j));
        r += 1;
    }
    let limit = config.torque_limits(dual);
    for j in 0..n {
        // τ_lim − (τ + T_q Δq + T_λ Δλ) ≥ 0
        for c in 0..n {
            a[(r, c)] = -lin.torque_q[(j, c)];
            a[(r + 1, c)] = lin.torque_q[(j, c)];
        }
        for c in 0..12 {
            a[(r, n + c)] = -lin.torque_lambda[(j, c)];
            a[(r + 1, n + c)] = lin.torque_lambda[(j, c)];
        }
        b[r] = limit[j] - lin.torque[j];
        b[r + 1] = limit[j] + lin.torque[j];
        labels.push(RowLabel::TorqueUpper(j));
        labels.push(RowLabel::TorqueLower(j));
        r += 2;
    }
    let joint_rows = r;

    let stability = contact_stability_rows(object, config);
    let rates = config.rate_per_cycle();
    for (side, lambda, off) in [(Side::Left, &state.lambda_l, n), (Side::Right, &state.lambda_r, n + 6)] {
        let lv = lambda.to_vector();
        for (kind, coeffs, offset) in &stability {
            for c in 0..6 {
                a[(r, off + c)] = coeffs[c];
            }
            b[r] = coeffs.iter().zip(lv.iter()).map(|(k, l)| k * l).sum::<f64>() + offset;
            labels.push(RowLabel::Contact(side, *kind));
            r += 1;
        }
        for c in 0..6 {
            // −rate ≤ Δλ_c ≤ rate
            a[(r, off + c)] = 1.0;
            b[r] = rates[c];
            range[r] = 2.0 * rates[c];
            labels.push(RowLabel::Contact(side, ContactRow::Rate(c)));
            r += 1;
        }
    }
    debug_assert_eq!(r, rows);
    InequalityRows { a, b, range, labels, joint_rows, contact_rows: r - joint_rows }
}

/// Twist Jacobian of the object frame carried by the left hand, world axes,
/// reference point at the object origin.
pub fn object_jacobian(left: &ChainState, object_pose: &Pose) -> DMatrix<f64> {
    left.jacobian_of_point(&object_pose.translation)
}

/// Weighted least-squares terms stacked as `‖C Δx − c‖²_w`, expanded to
/// `½ Δxᵀ H Δx + gᵀ Δx` with `H = 2CᵀWC`, `g = −2CᵀWc`.
pub fn build_cost(
    dual: &DualArmModel,
    object: &ObjectModel,
    state: &DecisionState,
    lin: &Linearization,
    target: &Pose,
    config: &RetargetConfig,
) -> (DMatrix<f64>, DVector<f64>) {
    let n = dual.dof();
    let d = n + 12;
    let mut h = DMatrix::zeros(d, d);
    let mut g = DVector::zeros(d);

    let mut add_rows = |rows: &DMatrix<f64>, cols: usize, err: &Vector6<f64>, w: &[f64; 6]| {
        // rows: 6×cols acting on the first `cols` decision entries.
        for k in 0..6 {
            if w[k] == 0.0 {
                continue;
            }
            let row = rows.row(k);
            for i in 0..cols {
                let ri = row[i];
                if ri == 0.0 {
                    continue;
                }
                g[i] -= 2.0 * w[k] * ri * err[k];
                for j in 0..cols {
                    h[(i, j)] += 2.0 * w[k] * ri * row[j];
                }
            }
        }
    };

    // Object pose task through the left grasp.
    let x_o = object.pose_from_left(&lin.left.end_effector);
    let mut jo = DMatrix::zeros(6, n);
    jo.view_mut((0, 0), (6, dual.left.dof())).copy_from(&object_jacobian(&lin.left, &x_o));
    let err = config.clamp_task_error(pose_error(&x_o, target));
    add_rows(&jo, n, &err, &config.w_pose);

    // Keep the right hand at the grasp relative to the left hand.
    let rel = lin.left.end_effector.inverse() * lin.right.end_effector;
    let jr = crate::model::relative_jacobian_of(&lin.left, &lin.right);
    let err = pose_error(&rel, &object.relative_grasp());
    add_rows(&jr, n, &err, &[config.w_grasp; 6]);

    for i in 0..n {
        h[(i, i)] += 2.0 * (config.w_reg_q + config.w_posture);
        if let Some(nominal) = config.nominal_q.get(i) {
            g[i] -= 2.0 * config.w_posture * (nominal - state.q[i]);
        }
    }
    for i in n..d {
        h[(i, i)] += 2.0 * config.w_reg_lambda;
    }
    for i in 0..d {
        h[(i, i)] += config.tikhonov;
    }
    // Symmetrize away round-off from the accumulation order.
    let ht = h.transpose();
    h = 0.5 * (h + ht);
    (h, g)
}
