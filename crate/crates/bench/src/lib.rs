//! Shared fixtures for the criterion benches.

use drgp::{Problem, ProblemSpec};

/// The baseline experiment truncated at `n_modes`.
pub fn baseline(n_modes: usize) -> Problem {
    ProblemSpec::baseline()
        .with_modes(n_modes)
        .build()
        .expect("baseline problem builds")
}
