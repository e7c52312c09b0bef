//! MAP tracking of the grid index across TTIs.
//!
//! Per tracking TTI the belief is pushed through the Markov transition, the
//! user observes `M` pilots through the training beams, and the posterior
//! over grid indices picks the estimate. All conjugations of the received
//! symbols are folded into the sensing matrix so that the observation model is
//! `y = α S[:, κ] + n`.

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::Rng;

use crate::array::{complex_gaussian, evolve_state, ChannelState, Codebook, MarkovModel};
use crate::error::{invalid, Error, Result};
use crate::linalg::RankOneCovariance;

/// `N_T × M` training beams with every entry of modulus `1/√N_T`,
/// parameterized by their phases.
#[derive(Debug, Clone, PartialEq)]
pub struct BeamMatrix {
    phases: DMatrix<f64>,
    matrix: DMatrix<Complex64>,
}

impl BeamMatrix {
    pub fn from_phases(phases: DMatrix<f64>) -> Result<Self> {
        if phases.nrows() == 0 || phases.ncols() == 0 {
            return invalid("beam matrix needs at least one antenna and one beam");
        }
        if phases.iter().any(|p| !p.is_finite()) {
            return invalid("beam phases must be finite");
        }
        let amp = 1.0 / (phases.nrows() as f64).sqrt();
        let matrix = phases.map(|p| Complex64::from_polar(amp, p));
        Ok(Self { phases, matrix })
    }

    /// Builds from a column-major phase slice (`beam * n_tx + antenna`).
    pub fn from_phase_slice(n_tx: usize, n_beams: usize, phases: &[f64]) -> Result<Self> {
        if phases.len() != n_tx * n_beams {
            return invalid(format!(
                "expected {} phases, got {}",
                n_tx * n_beams,
                phases.len()
            ));
        }
        Self::from_phases(DMatrix::from_column_slice(n_tx, n_beams, phases))
    }

    /// Codebook columns as beams.
    pub fn from_codewords(codebook: &Codebook, indices: &[usize]) -> Result<Self> {
        if let Some(&bad) = indices.iter().find(|&&i| i >= codebook.n_points()) {
            return invalid(format!("codeword index {bad} out of range"));
        }
        let n_tx = codebook.n_tx();
        let grid = codebook.grid();
        let phases = DMatrix::from_fn(n_tx, indices.len(), |k, m| {
            k as f64 * grid.angle(indices[m])
        });
        Self::from_phases(phases)
    }

    /// Steering-vector beams at arbitrary normalized angles.
    pub fn steering(n_tx: usize, angles: &[f64]) -> Result<Self> {
        let phases = DMatrix::from_fn(n_tx, angles.len(), |k, m| k as f64 * angles[m]);
        Self::from_phases(phases)
    }

    pub fn n_tx(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn n_beams(&self) -> usize {
        self.matrix.ncols()
    }

    pub fn phases(&self) -> &DMatrix<f64> {
        &self.phases
    }

    pub fn matrix(&self) -> &DMatrix<Complex64> {
        &self.matrix
    }

    pub fn beam(&self, m: usize) -> &[Complex64] {
        let n = self.n_tx();
        &self.matrix.as_slice()[m * n..(m + 1) * n]
    }
}

/// `S = √N_T F^H A_T` (`M × N`).
#[derive(Debug, Clone, PartialEq)]
pub struct SensingMatrix {
    matrix: DMatrix<Complex64>,
}

impl SensingMatrix {
    pub fn from_matrix(matrix: DMatrix<Complex64>) -> Self {
        Self { matrix }
    }

    pub fn n_beams(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn n_points(&self) -> usize {
        self.matrix.ncols()
    }

    pub fn matrix(&self) -> &DMatrix<Complex64> {
        &self.matrix
    }

    pub fn column(&self, n: usize) -> &[Complex64] {
        let m = self.n_beams();
        &self.matrix.as_slice()[n * m..(n + 1) * m]
    }
}

/// Writes `√N_T F^H a` into `out` (length `M`).
#[inline]
pub(crate) fn sensing_column(beams: &BeamMatrix, a: &[Complex64], out: &mut [Complex64]) {
    let scale = (beams.n_tx() as f64).sqrt();
    for (m, o) in out.iter_mut().enumerate() {
        let f = beams.beam(m);
        let mut acc = Complex64::new(0.0, 0.0);
        for (fk, ak) in f.iter().zip(a) {
            acc += fk.conj() * ak;
        }
        *o = acc * scale;
    }
}

pub fn sensing_matrix(beams: &BeamMatrix, codebook: &Codebook) -> Result<SensingMatrix> {
    if beams.n_tx() != codebook.n_tx() {
        return invalid(format!(
            "beams have {} antennas, codebook has {}",
            beams.n_tx(),
            codebook.n_tx()
        ));
    }
    let m = beams.n_beams();
    let mut matrix = DMatrix::zeros(m, codebook.n_points());
    for n in 0..codebook.n_points() {
        let col = &mut matrix.as_mut_slice()[n * m..(n + 1) * m];
        sensing_column(beams, codebook.column(n), col);
    }
    Ok(SensingMatrix { matrix })
}

/// Probability vector over grid indices.
#[derive(Debug, Clone, PartialEq)]
pub struct Belief {
    probs: Vec<f64>,
}

impl Belief {
    /// Accepts a vector that already sums to one (within 1e-9).
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() {
            return invalid("belief must not be empty");
        }
        if probs.iter().any(|p| !p.is_finite() || *p < 0.0) {
            return invalid("belief entries must be finite and nonnegative");
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return invalid(format!("belief sums to {total}, not 1"));
        }
        Ok(Self { probs })
    }

    /// Normalizes nonnegative weights.
    pub fn from_weights(weights: Vec<f64>) -> Result<Self> {
        if weights.iter().any(|p| !p.is_finite() || *p < 0.0) {
            return invalid("belief weights must be finite and nonnegative");
        }
        let total: f64 = weights.iter().sum();
        if total <= 0.0 {
            return Err(Error::DegenerateBelief);
        }
        Ok(Self {
            probs: weights.into_iter().map(|w| w / total).collect(),
        })
    }

    pub fn point_mass(n_points: usize, index: usize) -> Result<Self> {
        if index >= n_points {
            return invalid(format!("index {index} outside grid of {n_points}"));
        }
        let mut probs = vec![0.0; n_points];
        probs[index] = 1.0;
        Ok(Self { probs })
    }

    pub fn uniform(n_points: usize) -> Self {
        Self {
            probs: vec![1.0 / n_points as f64; n_points],
        }
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    pub fn support(&self) -> impl Iterator<Item = usize> + '_ {
        self.probs
            .iter()
            .enumerate()
            .filter(|(_, &p)| p > 0.0)
            .map(|(i, _)| i)
    }
}

/// Received pilot vector and the training SNR it was taken at.
#[derive(Debug, Clone, PartialEq)]
pub struct PilotObservation {
    pub y: Vec<Complex64>,
    pub snr: f64,
}

impl PilotObservation {
    pub fn new(y: Vec<Complex64>, snr: f64) -> Result<Self> {
        if !(snr.is_finite() && snr > 0.0) {
            return invalid(format!("snr must be positive and finite, got {snr}"));
        }
        if y.iter().any(|v| !v.re.is_finite() || !v.im.is_finite()) {
            return invalid("observation entries must be finite");
        }
        Ok(Self { y, snr })
    }
}

/// Whether receiver noise is drawn. `Off` gives the noiseless limit while the
/// tracker still assumes the nominal SNR.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Noise {
    Awgn,
    Off,
}

/// `y = α S[:, κ] + n`, `n ~ CN(0, I/γ)`.
pub fn simulate_observation<R: Rng + ?Sized>(
    state: &ChannelState,
    sensing: &SensingMatrix,
    snr: f64,
    noise: Noise,
    rng: &mut R,
) -> Result<PilotObservation> {
    if state.grid_index >= sensing.n_points() {
        return invalid("channel index outside the sensing matrix");
    }
    if !(snr.is_finite() && snr > 0.0) {
        return invalid(format!("snr must be positive and finite, got {snr}"));
    }
    let sigma = 1.0 / snr.sqrt();
    let col = sensing.column(state.grid_index);
    let y = col
        .iter()
        .map(|s| {
            let clean = state.gain * s;
            match noise {
                Noise::Awgn => clean + complex_gaussian(rng) * sigma,
                Noise::Off => clean,
            }
        })
        .collect();
    PilotObservation::new(y, snr)
}

/// `η^pri[κ] = Σ_ι P(κ | ι) η^post[ι]`.
pub fn propagate_prior(posterior_prev: &Belief, model: &MarkovModel) -> Result<Belief> {
    let n = model.n_points();
    if posterior_prev.len() != n {
        return invalid(format!(
            "belief has {} entries, model has {n}",
            posterior_prev.len()
        ));
    }
    let mut out = vec![0.0; n];
    for (from, &p) in posterior_prev.probs().iter().enumerate() {
        if p == 0.0 {
            continue;
        }
        for (o, &t) in out.iter_mut().zip(model.row(from)) {
            *o += t * p;
        }
    }
    let total: f64 = out.iter().sum();
    out.iter_mut().for_each(|v| *v /= total);
    Ok(Belief { probs: out })
}

/// Posterior over grid indices given the prior and one pilot vector.
///
/// Scores are `ln η^pri[κ] − y^H Σ_κ^{-1} y − ln|Σ_κ|`, shifted by their
/// maximum before exponentiation.
pub fn posterior(prior: &Belief, obs: &PilotObservation, sensing: &SensingMatrix) -> Result<Belief> {
    if prior.len() != sensing.n_points() {
        return invalid(format!(
            "prior has {} entries, sensing matrix has {} columns",
            prior.len(),
            sensing.n_points()
        ));
    }
    if obs.y.len() != sensing.n_beams() {
        return invalid(format!(
            "observation has {} pilots, sensing matrix has {} rows",
            obs.y.len(),
            sensing.n_beams()
        ));
    }
    let scores: Vec<f64> = prior
        .probs()
        .iter()
        .enumerate()
        .map(|(k, &p)| {
            if p > 0.0 {
                let cov = RankOneCovariance::new(sensing.column(k), obs.snr);
                p.ln() - cov.quad_inverse(&obs.y) - cov.log_det()
            } else {
                f64::NEG_INFINITY
            }
        })
        .collect();
    normalize_log_scores(scores)
}

pub(crate) fn normalize_log_scores(scores: Vec<f64>) -> Result<Belief> {
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return Err(Error::DegenerateBelief);
    }
    let weights: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
    let total: f64 = weights.iter().sum();
    Ok(Belief {
        probs: weights.into_iter().map(|w| w / total).collect(),
    })
}

/// Index of the largest posterior entry, lowest index on ties.
pub fn map_estimate(posterior: &Belief) -> usize {
    let mut best = 0;
    for (i, &p) in posterior.probs().iter().enumerate() {
        if p > posterior.probs()[best] {
            best = i;
        }
    }
    best
}

/// Supplies the training beams for each tracking TTI.
pub trait BeamSource {
    /// Number of TTIs this source can serve, if bounded.
    fn len_hint(&self) -> Option<usize> {
        None
    }

    fn beams_for(&mut self, tti: usize, prior: &Belief) -> Result<BeamMatrix>;
}

/// Precomputed beams for TTIs `2..=P`, in order.
pub struct FixedSchedule<'a>(pub &'a [BeamMatrix]);

impl BeamSource for FixedSchedule<'_> {
    fn len_hint(&self) -> Option<usize> {
        Some(self.0.len())
    }

    fn beams_for(&mut self, tti: usize, _prior: &Belief) -> Result<BeamMatrix> {
        self.0
            .get(tti - 2)
            .cloned()
            .ok_or_else(|| Error::InvalidArgument(format!("no beams scheduled for TTI {tti}")))
    }
}

#[derive(Debug, Clone)]
pub struct TrackStep {
    /// 1-based TTI index.
    pub tti: usize,
    pub true_index: usize,
    pub estimate: usize,
    pub prior: Belief,
    pub posterior: Belief,
}

/// Runs one frame of `p_ttis` TTIs. TTI 1 is known exactly; TTIs `2..=P`
/// evolve the channel, propagate the belief, observe, update and decide.
#[allow(clippy::too_many_arguments)]
pub fn track_frame<R: Rng + ?Sized>(
    model: &MarkovModel,
    codebook: &Codebook,
    schedule: &mut dyn BeamSource,
    initial_index: usize,
    snr: f64,
    p_ttis: usize,
    noise: Noise,
    rng: &mut R,
) -> Result<Vec<TrackStep>> {
    if p_ttis < 2 {
        return invalid("a frame needs at least two TTIs");
    }
    if model.n_points() != codebook.n_points() {
        return invalid("model and codebook disagree on the grid size");
    }
    if let Some(len) = schedule.len_hint() {
        if len != p_ttis - 1 {
            return invalid(format!(
                "schedule has {len} entries, frame needs {}",
                p_ttis - 1
            ));
        }
    }
    let n = codebook.n_points();
    let mut state = ChannelState::initial(initial_index, rng);
    let mut belief = Belief::point_mass(n, initial_index)?;
    let mut steps = vec![TrackStep {
        tti: 1,
        true_index: initial_index,
        estimate: initial_index,
        prior: belief.clone(),
        posterior: belief.clone(),
    }];
    for tti in 2..=p_ttis {
        state = evolve_state(&state, model, rng);
        let prior = propagate_prior(&belief, model)?;
        let beams = schedule.beams_for(tti, &prior)?;
        let sensing = sensing_matrix(&beams, codebook)?;
        let obs = simulate_observation(&state, &sensing, snr, noise, rng)?;
        belief = posterior(&prior, &obs, &sensing)?;
        steps.push(TrackStep {
            tti,
            true_index: state.grid_index,
            estimate: map_estimate(&belief),
            prior,
            posterior: belief.clone(),
        });
    }
    Ok(steps)
}
