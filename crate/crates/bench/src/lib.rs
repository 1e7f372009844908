//! Benchmark fixtures shared by the criterion targets.

use dampwave_core::damping::{build_global_damping, DampingField};
use dampwave_core::mesh::build_icosphere;
use dampwave_core::solver::{random_initial_data, WaveState};
use dampwave_core::SurfaceMesh;

/// Icosphere of the given level with uniform damping and a random state of
/// unit energy.
pub fn fixture(level: u32) -> (SurfaceMesh, DampingField, WaveState) {
    let mesh = build_icosphere(level).expect("icosphere");
    let damping = build_global_damping(&mesh, 1.0).expect("damping");
    let (u, v) = random_initial_data(&mesh, 0, 1.0).expect("initial data");
    (mesh, damping, WaveState::new(u, v))
}
