//! Beam tracking for a single-path mmWave MISO link whose angle of departure
//! hops on a uniform grid according to a windowed Markov chain.
//!
//! The crate is organised bottom-up:
//!
//! - [`array`]: angle grid, steering vectors, codebook, Markov dynamics and
//!   channel draws.
//! - [`tracker`]: training beams, sensing matrices, belief propagation and the
//!   MAP posterior/decision.
//! - [`bound`]: the closed-form union bound on the tracking error probability.
//! - [`optimizer`]: particle swarm design of unit-modulus training beams, the
//!   exhaustive directional baseline and a caching per-TTI scheduler.
//! - [`sim`]: Monte-Carlo experiment harness with common random numbers.
//! - [`linalg`]: small dense complex helpers (rank-one covariance closed
//!   forms, Jacobi Hermitian eigensolver).

pub mod array;
pub mod bound;
pub mod error;
pub mod linalg;
pub mod optimizer;
pub mod rng;
pub mod sim;
pub mod tracker;

pub use array::{
    build_grid, build_markov, evolve_state, physical_to_normalized, steering_vector, AngleGrid,
    ChannelState, Codebook, EdgeMode, MarkovModel,
};
pub use bound::{
    delta_threshold, mu_pair, pair_eigenvalues, tep_upper_bound, BoundObjective, PairTerm,
    TepBreakdown,
};
pub use error::{Error, Result};
pub use optimizer::{
    optimize_beams, select_directional_pair, BeamScheduler, DirectionalChoice,
    OptimizationResult, PsaConfig, SchedulePolicy,
};
pub use sim::{
    run_experiment, sweep, ExperimentConfig, ExperimentOutput, GroupKey, OneOrMany, Policy,
    SummaryRow, SummaryTable, SweepParam, TrialRecord,
};
pub use tracker::{
    map_estimate, posterior, propagate_prior, sensing_matrix, simulate_observation, track_frame,
    BeamMatrix, Belief, Noise, PilotObservation, SensingMatrix,
};

pub use num_complex::Complex64;

/// Converts a dB value to linear scale.
pub fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}
