//! Contact oracles on the simulator's wrenches. Unlike the retargeter's
//! rows, these use the true friction cone and the full contact patch.

use crate::model::ObjectModel;
use crate::spatial::Wrench;

/// Signed distances to the contact-stability boundaries; negative means
/// violated. `friction` is in N, `cop` and `torsion` in N·m.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ContactMargins {
    pub friction: f64,
    pub cop: f64,
    pub torsion: f64,
}

impl ContactMargins {
    pub fn min(&self) -> f64 {
        self.friction.min(self.cop).min(self.torsion)
    }

    /// Margins shifted by how much bounded sensor noise can move them.
    pub fn noise_allowance(object: &ObjectModel, force_noise: f64, torque_noise: f64) -> ContactMargins {
        let [hx, hy] = object.contact_halfwidths;
        ContactMargins {
            friction: (object.friction_mu + std::f64::consts::SQRT_2) * force_noise,
            cop: hx.max(hy) * force_noise + torque_noise,
            torsion: object.torsional_mu * force_noise + torque_noise,
        }
    }

    /// True when some margin is below `−allowance`.
    pub fn violated(&self, allowance: &ContactMargins) -> bool {
        const TOL: f64 = 1e-9;
        self.friction < -allowance.friction - TOL
            || self.cop < -allowance.cop - TOL
            || self.torsion < -allowance.torsion - TOL
    }
}

/// Margins of a contact-frame wrench the object exerts on a hand.
pub fn contact_margins(w: &Wrench, object: &ObjectModel) -> ContactMargins {
    let fz = w.force.z;
    let [hx, hy] = object.contact_halfwidths;
    ContactMargins {
        friction: object.friction_mu * fz - w.force.x.hypot(w.force.y),
        // τx = p_y f_z and τy = −p_x f_z.
        cop: (hy * fz - w.torque.x.abs()).min(hx * fz - w.torque.y.abs()),
        torsion: object.torsional_mu * fz - w.torque.z.abs(),
    }
}

/// Smallest of the friction, centre-of-pressure and torsion margins;
/// negative means the contact slips or tips.
pub fn slippage_oracle(w: &Wrench, object: &ObjectModel) -> f64 {
    contact_margins(w, object).min()
}
