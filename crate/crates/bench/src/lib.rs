//! Shared fixtures for the benchmarks.

use beamtrack_core::{build_grid, build_markov, propagate_prior, Belief, Codebook, Result};

/// Codebook at the reference array size.
pub fn reference_codebook() -> Result<Codebook> {
    Codebook::new(build_grid(64)?, 32)
}

/// Prior one TTI after a perfectly known index, as seen by the tracker.
pub fn propagated_prior(beta: f64, index: usize) -> Result<Belief> {
    let model = build_markov(64, beta, 5)?;
    propagate_prior(&Belief::point_mass(64, index)?, &model)
}
