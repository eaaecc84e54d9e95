//! Fixtures for the benchmarks.

use std::path::{Path, PathBuf};

use bimanual::{Pipeline, Retargeter, Scenario};

pub fn repo_root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

pub fn scenario(name: &str) -> Scenario {
    let path = repo_root().join("scenarios").join(format!("{name}.toml"));
    Scenario::load(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

/// Pipeline at the start of a bundled scenario.
pub fn pipeline(name: &str) -> Pipeline {
    Pipeline::new(&scenario(name)).unwrap_or_else(|e| panic!("{name}: {e}"))
}

/// Retargeter at the settled grasp of the static scenario.
pub fn retargeter() -> Retargeter {
    pipeline("static").retargeter().expect("static scenario has adaptation on").clone()
}
