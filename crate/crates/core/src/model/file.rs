//! TOML model files.
//!
//! ```toml
//! [left]
//! base = { translation = [0.0, 0.0, 0.0], quaternion = [1.0, 0.0, 0.0, 0.0] }
//! end_effector = { translation = [0.0, 0.0, 0.2], quaternion = [0.0, 1.0, 0.0, 0.0] }
//!
//! [[left.joints]]
//! name = "joint1"
//! axis = [0.0, 0.0, 1.0]
//! offset = { translation = [0.0, 0.0, 0.333] }
//! q_min = -2.8973
//! q_max = 2.8973
//! dq_max = 2.175
//! tau_max = 87.0
//! mass = 4.97
//! com = [0.0, 0.0, -0.17]
//! inertia = [0.03, 0.03, 0.01, 0.0, 0.0, 0.0]   # xx, yy, zz, xy, xz, yz
//!
//! [right]   # same layout
//!
//! [object]
//! mass = 2.0
//! grasp_left = { translation = [0.0, 0.15, 0.0], quaternion = [...] }
//! grasp_right = { translation = [0.0, -0.15, 0.0], quaternion = [...] }
//! friction_mu = 0.6
//! contact_halfwidths = [0.03, 0.03]
//! torsional_mu = 0.01
//! f_normal_min = 5.0
//! f_normal_max = 200.0
//! inertia_diag = [0.02, 0.02, 0.02]
//! ```
//!
//! Quaternions are (w, x, y, z). Missing pose fields default to identity.

use std::path::Path;

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use super::{ArmModel, DualArmModel, JointDef, ModelError, ObjectModel};
use crate::spatial::Pose;

/// Both arms and the object, as loaded from one file.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelFile {
    pub dual: DualArmModel,
    pub object: ObjectModel,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Document {
    left: ArmDoc,
    right: ArmDoc,
    object: ObjectDoc,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PoseDoc {
    #[serde(default)]
    translation: [f64; 3],
    #[serde(default = "identity_quaternion")]
    quaternion: [f64; 4],
}

fn identity_quaternion() -> [f64; 4] {
    [1.0, 0.0, 0.0, 0.0]
}

impl Default for PoseDoc {
    fn default() -> Self {
        Self { translation: [0.0; 3], quaternion: identity_quaternion() }
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ArmDoc {
    #[serde(default)]
    base: PoseDoc,
    #[serde(default)]
    end_effector: PoseDoc,
    joints: Vec<JointDoc>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct JointDoc {
    #[serde(default)]
    name: String,
    axis: [f64; 3],
    #[serde(default)]
    offset: PoseDoc,
    q_min: f64,
    q_max: f64,
    dq_max: f64,
    tau_max: f64,
    #[serde(default)]
    mass: f64,
    #[serde(default)]
    com: [f64; 3],
    #[serde(default)]
    inertia: [f64; 6],
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ObjectDoc {
    mass: f64,
    grasp_left: PoseDoc,
    grasp_right: PoseDoc,
    friction_mu: f64,
    contact_halfwidths: [f64; 2],
    torsional_mu: f64,
    f_normal_min: f64,
    f_normal_max: f64,
    inertia_diag: [f64; 3],
}

impl PoseDoc {
    fn to_pose(&self, field: &str) -> Result<Pose, ModelError> {
        let q = self.quaternion;
        let norm = q.iter().map(|v| v * v).sum::<f64>().sqrt();
        if !norm.is_finite() || (norm - 1.0).abs() > 1e-6 {
            return Err(ModelError::invalid(
                format!("{field}.quaternion"),
                format!("must be a unit quaternion (norm {norm})"),
            ));
        }
        if self.translation.iter().any(|v| !v.is_finite()) {
            return Err(ModelError::invalid(format!("{field}.translation"), "must be finite"));
        }
        Ok(Pose::from_quaternion(q, Vector3::from(self.translation)))
    }

    fn from_pose(p: &Pose) -> Self {
        Self { translation: p.translation.into(), quaternion: p.quaternion() }
    }
}

impl ArmDoc {
    fn to_arm(&self, name: &str) -> Result<ArmModel, ModelError> {
        let mut joints = Vec::with_capacity(self.joints.len());
        for (k, j) in self.joints.iter().enumerate() {
            let field = format!("{name}.joints[{k}]");
            let axis = Vector3::from(j.axis);
            if !(axis.norm() > 0.0) {
                return Err(ModelError::invalid(format!("{field}.axis"), "must be non-zero"));
            }
            let [xx, yy, zz, xy, xz, yz] = j.inertia;
            joints.push(JointDef {
                name: j.name.clone(),
                axis: axis.normalize(),
                parent_offset: j.offset.to_pose(&format!("{field}.offset"))?,
                q_min: j.q_min,
                q_max: j.q_max,
                dq_max: j.dq_max,
                tau_max: j.tau_max,
                link_mass: j.mass,
                link_com: Vector3::from(j.com),
                link_inertia: Matrix3::new(xx, xy, xz, xy, yy, yz, xz, yz, zz),
            });
        }
        Ok(ArmModel {
            joints,
            base_pose: self.base.to_pose(&format!("{name}.base"))?,
            end_effector_offset: self.end_effector.to_pose(&format!("{name}.end_effector"))?,
        })
    }

    fn from_arm(arm: &ArmModel) -> Self {
        Self {
            base: PoseDoc::from_pose(&arm.base_pose),
            end_effector: PoseDoc::from_pose(&arm.end_effector_offset),
            joints: arm
                .joints
                .iter()
                .map(|j| {
                    let i = &j.link_inertia;
                    JointDoc {
                        name: j.name.clone(),
                        axis: j.axis.into(),
                        offset: PoseDoc::from_pose(&j.parent_offset),
                        q_min: j.q_min,
                        q_max: j.q_max,
                        dq_max: j.dq_max,
                        tau_max: j.tau_max,
                        mass: j.link_mass,
                        com: j.link_com.into(),
                        inertia: [i[(0, 0)], i[(1, 1)], i[(2, 2)], i[(0, 1)], i[(0, 2)], i[(1, 2)]],
                    }
                })
                .collect(),
        }
    }
}

/// Parse and validate a model from TOML text.
pub fn parse_model(text: &str) -> Result<ModelFile, ModelError> {
    let doc: Document = toml::from_str(text).map_err(|e| ModelError::Parse(e.to_string()))?;
    let dual = DualArmModel::new(doc.left.to_arm("left")?, doc.right.to_arm("right")?);
    dual.validate()?;
    let o = &doc.object;
    let object = ObjectModel {
        mass: o.mass,
        grasp_left: o.grasp_left.to_pose("object.grasp_left")?,
        grasp_right: o.grasp_right.to_pose("object.grasp_right")?,
        friction_mu: o.friction_mu,
        contact_halfwidths: o.contact_halfwidths,
        torsional_mu: o.torsional_mu,
        f_normal_min: o.f_normal_min,
        f_normal_max: o.f_normal_max,
        inertia_diag: Vector3::from(o.inertia_diag),
    };
    object.validate()?;
    Ok(ModelFile { dual, object })
}

pub fn load_model(path: impl AsRef<Path>) -> Result<ModelFile, ModelError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)
        .map_err(|source| ModelError::Io { path: path.display().to_string(), source })?;
    parse_model(&text)
}

pub fn to_toml_string(model: &ModelFile) -> String {
    let o = &model.object;
    let doc = Document {
        left: ArmDoc::from_arm(&model.dual.left),
        right: ArmDoc::from_arm(&model.dual.right),
        object: ObjectDoc {
            mass: o.mass,
            grasp_left: PoseDoc::from_pose(&o.grasp_left),
            grasp_right: PoseDoc::from_pose(&o.grasp_right),
            friction_mu: o.friction_mu,
            contact_halfwidths: o.contact_halfwidths,
            torsional_mu: o.torsional_mu,
            f_normal_min: o.f_normal_min,
            f_normal_max: o.f_normal_max,
            inertia_diag: o.inertia_diag.into(),
        },
    };
    toml::to_string_pretty(&doc).expect("model document is always serializable")
}
