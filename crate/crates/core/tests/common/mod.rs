//! Fixtures shared by the integration suites.
#![allow(dead_code)]

pub mod fd;
pub mod qp;

use std::path::{Path, PathBuf};

use bimanual::model::{load_model, ModelFile};
use bimanual::retarget::{DecisionState, Retargeter};
use bimanual::sim::{Pipeline, Scenario};
use bimanual::spatial::{Pose, Rotation};
use nalgebra::{DVector, Vector3};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub fn repo_root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

pub fn scenario_path(name: &str) -> PathBuf {
    repo_root().join("scenarios").join(format!("{name}.toml"))
}

pub fn scenario(name: &str) -> Scenario {
    Scenario::load(scenario_path(name)).unwrap_or_else(|e| panic!("scenario {name}: {e}"))
}

/// Scenario text parsed as if it lived in the scenarios directory.
pub fn scenario_from_str(text: &str) -> Scenario {
    Scenario::parse(text, &repo_root().join("scenarios")).unwrap_or_else(|e| panic!("{e}"))
}

pub fn model() -> ModelFile {
    load_model(repo_root().join("models/franka-like.toml")).expect("bundled model loads")
}

/// Retargeter at the settled start of the static scenario.
pub fn grasp() -> Retargeter {
    let p = Pipeline::new(&scenario("static")).expect("static scenario starts");
    p.retargeter().expect("adaptation is on").clone()
}

pub fn random_q(rng: &mut ChaCha8Rng, lo: &DVector<f64>, hi: &DVector<f64>) -> Vec<f64> {
    lo.iter().zip(hi.iter()).map(|(a, b)| rng.random_range(*a..*b)).collect()
}

pub fn random_vec3(rng: &mut ChaCha8Rng, scale: f64) -> Vector3<f64> {
    Vector3::new(rng.random_range(-scale..scale), rng.random_range(-scale..scale), rng.random_range(-scale..scale))
}

pub fn random_pose(rng: &mut ChaCha8Rng) -> Pose {
    let axis = random_vec3(rng, 1.0);
    let angle = rng.random_range(-3.0..3.0);
    Pose::new(Rotation::from_scaled_axis(axis.normalize() * angle), random_vec3(rng, 1.0))
}

/// A state near `base` with joints and wrenches perturbed.
pub fn perturbed_state(rng: &mut ChaCha8Rng, base: &DecisionState, dq: f64, dl: f64) -> DecisionState {
    let mut x = base.to_vector();
    let n = base.q.len();
    for i in 0..x.len() {
        x[i] += if i < n { rng.random_range(-dq..dq) } else { rng.random_range(-dl..dl) };
    }
    DecisionState::from_vector(&x, n)
}

/// Relative error with an absolute floor.
pub fn rel_err(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / b.abs().max(a.abs()).max(floor)
}
