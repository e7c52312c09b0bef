//! Uniform linear array model: angle grid, steering vectors, codebook,
//! windowed Markov dynamics of the angle of departure, and channel draws.

use std::f64::consts::PI;

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

/// Wraps an angle into `[-π, π)`.
pub fn wrap_angle(theta: f64) -> f64 {
    let w = (theta + PI).rem_euclid(2.0 * PI) - PI;
    // rem_euclid can round up to exactly 2π.
    if w >= PI {
        w - 2.0 * PI
    } else {
        w
    }
}

/// Uniform grid of normalized angles `π/N + 2πn/N`, stored wrapped into
/// `[-π, π)` and always addressed by grid index.
#[derive(Debug, Clone, PartialEq)]
pub struct AngleGrid {
    angles: Vec<f64>,
}

impl AngleGrid {
    pub fn n_points(&self) -> usize {
        self.angles.len()
    }

    /// Wrapped angle of grid point `n`.
    pub fn angle(&self, n: usize) -> f64 {
        self.angles[n]
    }

    pub fn angles(&self) -> &[f64] {
        &self.angles
    }

    /// Unwrapped grid value `π/N + 2πn/N` in `(0, 2π)`.
    pub fn raw(&self, n: usize) -> f64 {
        let big_n = self.n_points() as f64;
        PI / big_n + 2.0 * PI * n as f64 / big_n
    }

    pub fn sorted_angles(&self) -> Vec<f64> {
        let mut v = self.angles.clone();
        v.sort_by(f64::total_cmp);
        v
    }
}

pub fn build_grid(n_points: usize) -> Result<AngleGrid> {
    if n_points < 2 {
        return invalid(format!("grid needs at least 2 points, got {n_points}"));
    }
    let big_n = n_points as f64;
    let angles = (0..n_points)
        .map(|n| wrap_angle(PI / big_n + 2.0 * PI * n as f64 / big_n))
        .collect();
    Ok(AngleGrid { angles })
}

/// `(1/√N_T) [1, e^{jθ}, …, e^{j(N_T−1)θ}]`.
pub fn steering_vector(theta: f64, n_tx: usize) -> Result<Vec<Complex64>> {
    if n_tx == 0 {
        return invalid("steering vector needs at least one antenna");
    }
    if !theta.is_finite() {
        return invalid("steering angle must be finite");
    }
    let amp = 1.0 / (n_tx as f64).sqrt();
    Ok((0..n_tx)
        .map(|k| Complex64::from_polar(amp, k as f64 * theta))
        .collect())
}

/// Maps a physical departure angle `φ ∈ [0, π]` to the normalized angle
/// `2π (d/λ) cos φ`.
pub fn physical_to_normalized(phi: f64, spacing_ratio: f64) -> Result<f64> {
    if !(0.0..=PI).contains(&phi) {
        return invalid(format!("physical angle {phi} outside [0, π]"));
    }
    if !(spacing_ratio.is_finite() && spacing_ratio > 0.0) {
        return invalid("antenna spacing ratio must be positive");
    }
    Ok(2.0 * PI * spacing_ratio * phi.cos())
}

/// Steering vectors at every grid angle, one per column (`N_T × N`).
#[derive(Debug, Clone)]
pub struct Codebook {
    grid: AngleGrid,
    matrix: DMatrix<Complex64>,
}

impl Codebook {
    pub fn new(grid: AngleGrid, n_tx: usize) -> Result<Self> {
        if n_tx == 0 {
            return invalid("codebook needs at least one antenna");
        }
        let mut matrix = DMatrix::zeros(n_tx, grid.n_points());
        for n in 0..grid.n_points() {
            let a = steering_vector(grid.angle(n), n_tx)?;
            matrix.column_mut(n).copy_from_slice(&a);
        }
        Ok(Self { grid, matrix })
    }

    pub fn n_tx(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn n_points(&self) -> usize {
        self.matrix.ncols()
    }

    pub fn grid(&self) -> &AngleGrid {
        &self.grid
    }

    pub fn matrix(&self) -> &DMatrix<Complex64> {
        &self.matrix
    }

    pub fn column(&self, n: usize) -> &[Complex64] {
        let m = self.n_tx();
        &self.matrix.as_slice()[n * m..(n + 1) * m]
    }
}

/// How the Markov window behaves at the grid edges.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EdgeMode {
    /// Circular index distance; the normalization is the same for every row.
    #[default]
    Wrap,
    /// Plain `|κ − ι|`; each row is renormalized over its clipped window.
    Truncate,
}

/// Windowed transition model `P(κ | ι) ∝ β^{d(ι,κ)}` for `d ≤ σ`.
#[derive(Debug, Clone)]
pub struct MarkovModel {
    beta: f64,
    sigma: usize,
    edge_mode: EdgeMode,
    n_points: usize,
    // Row-major: transition[from * n + to].
    transition: Vec<f64>,
}

impl MarkovModel {
    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn sigma(&self) -> usize {
        self.sigma
    }

    pub fn edge_mode(&self) -> EdgeMode {
        self.edge_mode
    }

    pub fn n_points(&self) -> usize {
        self.n_points
    }

    pub fn distance(&self, from: usize, to: usize) -> usize {
        let d = from.abs_diff(to);
        match self.edge_mode {
            EdgeMode::Wrap => d.min(self.n_points - d),
            EdgeMode::Truncate => d,
        }
    }

    pub fn prob(&self, from: usize, to: usize) -> f64 {
        self.transition[from * self.n_points + to]
    }

    pub fn row(&self, from: usize) -> &[f64] {
        &self.transition[from * self.n_points..(from + 1) * self.n_points]
    }

    /// The normalization constant `1 / (1 + 2 Σ_{k=1..σ} β^k)` of a full
    /// (unclipped) window.
    pub fn c0(&self) -> f64 {
        1.0 / (1.0 + 2.0 * (1..=self.sigma).map(|k| self.beta.powi(k as i32)).sum::<f64>())
    }
}

pub fn build_markov(n_points: usize, beta: f64, sigma: usize) -> Result<MarkovModel> {
    build_markov_with(n_points, beta, sigma, EdgeMode::Wrap)
}

pub fn build_markov_with(
    n_points: usize,
    beta: f64,
    sigma: usize,
    edge_mode: EdgeMode,
) -> Result<MarkovModel> {
    if !(0.0..=1.0).contains(&beta) {
        return invalid(format!("beta {beta} outside [0, 1]"));
    }
    if n_points < 2 * sigma + 1 {
        return invalid(format!(
            "window 2σ+1 = {} exceeds grid size {n_points}",
            2 * sigma + 1
        ));
    }
    let mut model = MarkovModel {
        beta,
        sigma,
        edge_mode,
        n_points,
        transition: vec![0.0; n_points * n_points],
    };
    for from in 0..n_points {
        let mut total = 0.0;
        for to in 0..n_points {
            let d = model.distance(from, to);
            if d <= sigma {
                // powi(0) is 1 for β = 0, so β = 0 keeps the state fixed.
                let w = beta.powi(d as i32);
                model.transition[from * n_points + to] = w;
                total += w;
            }
        }
        for to in 0..n_points {
            model.transition[from * n_points + to] /= total;
        }
    }
    Ok(model)
}

/// Draws a standard circularly-symmetric complex Gaussian `CN(0, 1)`.
pub fn complex_gaussian<R: Rng + ?Sized>(rng: &mut R) -> Complex64 {
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    Complex64::new(re, im) * std::f64::consts::FRAC_1_SQRT_2
}

/// Hidden channel state for one TTI: grid index of the path and its gain.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChannelState {
    pub grid_index: usize,
    pub gain: Complex64,
}

impl ChannelState {
    pub fn new(grid_index: usize, gain: Complex64) -> Self {
        Self { grid_index, gain }
    }

    pub fn initial<R: Rng + ?Sized>(grid_index: usize, rng: &mut R) -> Self {
        Self::new(grid_index, complex_gaussian(rng))
    }
}

/// Steps the channel one TTI: a new index from the transition row and an
/// independent `CN(0, 1)` gain.
pub fn evolve_state<R: Rng + ?Sized>(
    state: &ChannelState,
    model: &MarkovModel,
    rng: &mut R,
) -> ChannelState {
    let row = model.row(state.grid_index);
    let u: f64 = rng.random();
    let mut acc = 0.0;
    let mut next = state.grid_index;
    let mut last_positive = state.grid_index;
    let mut found = false;
    for (k, &p) in row.iter().enumerate() {
        if p > 0.0 {
            last_positive = k;
            acc += p;
            if u < acc {
                next = k;
                found = true;
                break;
            }
        }
    }
    if !found {
        // Rounding left the cumulative sum a hair below 1.
        next = last_positive;
    }
    ChannelState::new(next, complex_gaussian(rng))
}
