//! Shared fixtures for the pipeline benchmarks.

use gridjac_core::analytic::linearize;
use gridjac_core::swingsim::find_equilibrium;
use gridjac_core::{CoiModel, ContingencySchedule, Equilibrium, RawCase, SimConfig, StateMatrix, Trajectory};

/// A built-in case at its stable equilibrium.
pub fn operating_point(case: &str) -> (CoiModel, Equilibrium) {
    let case = RawCase::builtin(case).expect("built-in case");
    let (model, guess) = CoiModel::from_case(&case).expect("valid case");
    let eq = find_equilibrium(&model, &guess).expect("equilibrium");
    (model, eq)
}

pub fn state_matrix(case: &str) -> (StateMatrix, gridjac_core::analytic::InputMatrix) {
    let (model, eq) = operating_point(case);
    let (_, a, b) = linearize(&model, &eq);
    (a, b)
}

/// Ambient trajectory of `seconds` simulated seconds, recorded every 10 ms.
pub fn trajectory(case: &str, seconds: f64) -> Trajectory {
    let (model, eq) = operating_point(case);
    let cfg = SimConfig { dt: 1e-3, t_end: seconds, record_every: 10, seed: 1 };
    gridjac_core::swingsim::simulate(&model, &ContingencySchedule::empty(), &eq.state(&model), &cfg)
        .expect("simulation")
        .trajectory
}
