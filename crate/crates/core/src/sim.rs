//! Monte-Carlo experiment harness.
//!
//! Frames are independent and run in parallel. Each frame draws its channel
//! trajectory from a stream keyed by `(seed, frame)` and its receiver noise
//! from streams keyed by `(seed, frame, tti)`, so every policy in a run (and
//! every point of a sweep) sees the same trajectories and noise draws.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fmt;

use num_complex::Complex64;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::array::{
    build_grid, build_markov_with, complex_gaussian, evolve_state, ChannelState, Codebook,
    EdgeMode, MarkovModel,
};
use crate::bound::tep_upper_bound_value;
use crate::error::{invalid, Result};
use crate::linalg::inner;
use crate::optimizer::{BeamScheduler, PsaConfig, SchedulePolicy};
use crate::rng::{stream, Stream};
use crate::tracker::{
    map_estimate, posterior, propagate_prior, sensing_matrix, BeamMatrix, Belief,
    PilotObservation, SensingMatrix,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Policy {
    /// MAP tracking with swarm-optimized beams per TTI.
    PsaOptimized,
    /// MAP tracking with the best pair of codebook beams per TTI.
    DirectionalTep,
    /// `N_T` fixed steering probes per TTI and a matched-filter decision.
    BeamCycling,
}

impl Policy {
    pub const ALL: [Policy; 3] = [Policy::PsaOptimized, Policy::DirectionalTep, Policy::BeamCycling];

    pub fn as_str(self) -> &'static str {
        match self {
            Policy::PsaOptimized => "psa_optimized",
            Policy::DirectionalTep => "directional_tep",
            Policy::BeamCycling => "beam_cycling",
        }
    }
}

impl fmt::Display for Policy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// A config field that is either one value or a list.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum OneOrMany<T> {
    One(T),
    Many(Vec<T>),
}

impl<T: Clone> OneOrMany<T> {
    pub fn values(&self) -> Vec<T> {
        match self {
            OneOrMany::One(v) => vec![v.clone()],
            OneOrMany::Many(v) => v.clone(),
        }
    }

    pub fn is_list(&self) -> bool {
        matches!(self, OneOrMany::Many(_))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepParam {
    Beta,
    SnrDb,
}

impl SweepParam {
    pub fn key_name(self) -> &'static str {
        match self {
            SweepParam::Beta => "beta",
            SweepParam::SnrDb => "snr_db",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub n_tx: usize,
    pub n_grid: usize,
    pub m_beams: usize,
    pub sigma: usize,
    pub p_ttis: usize,
    pub beta: OneOrMany<f64>,
    pub snr_db: OneOrMany<f64>,
    pub n_frames: usize,
    pub policy: OneOrMany<Policy>,
    pub psa: PsaConfig,
    pub seed: u64,
    pub edge_mode: EdgeMode,
    /// Drop receiver noise while the tracker keeps assuming `snr_db`.
    pub noiseless: bool,
    /// TTI reported by sweeps.
    pub sweep_tti: usize,
    /// Prior quantization step for the beam design cache; 0 designs every
    /// distinct prior exactly.
    pub cache_quantum: f64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            n_tx: 32,
            n_grid: 64,
            m_beams: 2,
            sigma: 5,
            p_ttis: 10,
            beta: OneOrMany::One(0.2),
            snr_db: OneOrMany::One(10.0),
            n_frames: 10_000,
            policy: OneOrMany::Many(Policy::ALL.to_vec()),
            psa: PsaConfig::default(),
            seed: 1,
            edge_mode: EdgeMode::Wrap,
            noiseless: false,
            sweep_tti: 2,
            cache_quantum: 0.02,
        }
    }
}

impl ExperimentConfig {
    pub fn policies(&self) -> Vec<Policy> {
        self.policy.values()
    }

    /// Checks every field; list-valued `beta`/`snr_db` are allowed here and
    /// restricted by [`run_experiment`] and [`sweep`].
    pub fn validate(&self) -> Result<()> {
        if self.n_tx == 0 {
            return invalid("n_tx must be positive");
        }
        if self.n_grid < 2 {
            return invalid("n_grid must be at least 2");
        }
        if self.n_grid < 2 * self.sigma + 1 {
            return invalid("n_grid must be at least 2*sigma + 1");
        }
        if self.m_beams == 0 || self.m_beams > self.n_grid {
            return invalid("m_beams must lie in 1..=n_grid");
        }
        if self.p_ttis < 2 {
            return invalid("p_ttis must be at least 2");
        }
        if self.n_frames == 0 {
            return invalid("n_frames must be positive");
        }
        if !(2..=self.p_ttis).contains(&self.sweep_tti) {
            return invalid("sweep_tti must lie in 2..=p_ttis");
        }
        if !(self.cache_quantum >= 0.0 && self.cache_quantum < 1.0) {
            return invalid("cache_quantum must lie in [0, 1)");
        }
        let betas = self.beta.values();
        if betas.is_empty() {
            return invalid("beta list is empty");
        }
        if betas.iter().any(|b| !(0.0..=1.0).contains(b)) {
            return invalid("beta must lie in [0, 1]");
        }
        let snrs = self.snr_db.values();
        if snrs.is_empty() {
            return invalid("snr_db list is empty");
        }
        if snrs.iter().any(|s| !s.is_finite()) {
            return invalid("snr_db must be finite");
        }
        let policies = self.policies();
        if policies.is_empty() {
            return invalid("policy list is empty");
        }
        for (i, p) in policies.iter().enumerate() {
            if policies[..i].contains(p) {
                return invalid(format!("policy {p} listed twice"));
            }
        }
        self.psa.validate()
    }
}

/// One tracked TTI of one frame under one policy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub frame: u64,
    pub tti: usize,
    pub policy: Policy,
    pub beta: f64,
    pub snr_db: f64,
    pub true_index: usize,
    pub estimate: usize,
    pub error: bool,
    pub gamma_ub: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum GroupKey {
    Tti(usize),
    Beta(f64),
    SnrDb(f64),
}

impl fmt::Display for GroupKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            GroupKey::Tti(t) => write!(f, "{t}"),
            GroupKey::Beta(v) | GroupKey::SnrDb(v) => write!(f, "{v}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub group_key: GroupKey,
    pub policy: Policy,
    pub tep_mean: f64,
    pub tep_stderr: f64,
    pub mean_gamma_ub: f64,
    pub n_frames: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SummaryTable {
    /// `tti`, `beta` or `snr_db`.
    pub key_name: &'static str,
    pub rows: Vec<SummaryRow>,
}

impl SummaryTable {
    pub fn row(&self, key: GroupKey, policy: Policy) -> Option<&SummaryRow> {
        self.rows
            .iter()
            .find(|r| r.group_key == key && r.policy == policy)
    }
}

/// Design activity of the per-TTI schedulers.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SchedulerStats {
    pub designs: u64,
    pub cache_hits: u64,
    pub evaluations: u64,
}

#[derive(Debug, Clone)]
pub struct ExperimentOutput {
    pub trials: Vec<TrialRecord>,
    pub summary: SummaryTable,
    pub stats: SchedulerStats,
}

/// Probe angles of the beam-cycling baseline: `N_T` uniformly spaced angles
/// offset like the grid, so they land on grid points when `N_T` divides `N`.
pub fn cycling_angles(n_tx: usize, n_grid: usize) -> Vec<f64> {
    (0..n_tx)
        .map(|k| PI / n_grid as f64 + 2.0 * PI * k as f64 / n_tx as f64)
        .collect()
}

pub fn cycling_beams(n_tx: usize, n_grid: usize) -> Result<BeamMatrix> {
    BeamMatrix::steering(n_tx, &cycling_angles(n_tx, n_grid))
}

/// One-atom matched filter: the grid index whose sensing column correlates
/// best with the probe outputs, lowest index on ties.
pub fn beam_cycling_estimate(obs: &PilotObservation, sensing: &SensingMatrix) -> Result<usize> {
    if obs.y.len() != sensing.n_beams() {
        return invalid("observation length does not match the probe count");
    }
    let mut best = (0, f64::NEG_INFINITY);
    for n in 0..sensing.n_points() {
        let c = inner(sensing.column(n), &obs.y).norm_sqr();
        if c > best.1 {
            best = (n, c);
        }
    }
    Ok(best.0)
}

/// Everything one sweep point needs, shared by all frames.
struct Point<'a> {
    beta: f64,
    snr_db: f64,
    snr: f64,
    model: MarkovModel,
    codebook: &'a Codebook,
    runners: Vec<Runner<'a>>,
}

enum Runner<'a> {
    Map(Policy, &'a BeamScheduler),
    Cycling {
        sensing: SensingMatrix,
        gamma_ub: f64,
    },
}

struct Ctx {
    seed: u64,
    n_grid: usize,
    last_tti: usize,
    noise_len: usize,
    noiseless: bool,
}

fn noise_draws(ctx: &Ctx, frame: u64, tti: usize) -> Vec<Complex64> {
    let mut rng = stream(ctx.seed, Stream::Noise, frame, tti as u64);
    (0..ctx.noise_len).map(|_| complex_gaussian(&mut rng)).collect()
}

fn observe(ctx: &Ctx, state: &ChannelState, col: &[Complex64], noise: &[Complex64], snr: f64) -> Result<PilotObservation> {
    let scale = 1.0 / snr.sqrt();
    let y = col
        .iter()
        .zip(noise)
        .map(|(s, w)| {
            let clean = state.gain * s;
            if ctx.noiseless {
                clean
            } else {
                clean + w * scale
            }
        })
        .collect();
    PilotObservation::new(y, snr)
}

fn run_frame(ctx: &Ctx, point: &Point<'_>, frame: u64) -> Result<Vec<TrialRecord>> {
    let mut ch = stream(ctx.seed, Stream::Channel, frame, 0);
    let initial = ch.random_range(0..ctx.n_grid);
    let mut state = ChannelState::initial(initial, &mut ch);
    let mut trajectory = Vec::with_capacity(ctx.last_tti - 1);
    for _ in 2..=ctx.last_tti {
        state = evolve_state(&state, &point.model, &mut ch);
        trajectory.push(state);
    }
    let noise: Vec<Vec<Complex64>> = (2..=ctx.last_tti).map(|t| noise_draws(ctx, frame, t)).collect();

    let mut out = Vec::with_capacity(point.runners.len() * trajectory.len());
    for runner in &point.runners {
        let mut belief = Belief::point_mass(ctx.n_grid, initial)?;
        for (i, state) in trajectory.iter().enumerate() {
            let tti = i + 2;
            let (policy, estimate, gamma_ub) = match runner {
                Runner::Map(policy, scheduler) => {
                    let prior = propagate_prior(&belief, &point.model)?;
                    let beams = scheduler.beams_for(&prior)?.beams;
                    let sensing = sensing_matrix(&beams, point.codebook)?;
                    let obs = observe(ctx, state, sensing.column(state.grid_index), &noise[i], point.snr)?;
                    let gamma_ub = tep_upper_bound_value(&prior, &sensing, point.snr)?;
                    belief = posterior(&prior, &obs, &sensing)?;
                    (*policy, map_estimate(&belief), gamma_ub)
                }
                Runner::Cycling { sensing, gamma_ub } => {
                    let obs = observe(ctx, state, sensing.column(state.grid_index), &noise[i], point.snr)?;
                    (Policy::BeamCycling, beam_cycling_estimate(&obs, sensing)?, *gamma_ub)
                }
            };
            out.push(TrialRecord {
                frame,
                tti,
                policy,
                beta: point.beta,
                snr_db: point.snr_db,
                true_index: state.grid_index,
                estimate,
                error: estimate != state.grid_index,
                gamma_ub,
            });
        }
    }
    Ok(out)
}

/// Schedulers for one SNR value, shared across sweep points that only differ
/// in β (the design depends on the prior and the SNR alone).
fn build_schedulers(config: &ExperimentConfig, codebook: &Codebook, snr: f64) -> Result<Vec<(Policy, BeamScheduler)>> {
    config
        .policies()
        .into_iter()
        .filter_map(|p| {
            let policy = match p {
                Policy::PsaOptimized => SchedulePolicy::Psa(config.psa.clone()),
                Policy::DirectionalTep => SchedulePolicy::Directional,
                Policy::BeamCycling => return None,
            };
            Some(
                BeamScheduler::new(
                    codebook.clone(),
                    snr,
                    config.m_beams,
                    policy,
                    config.cache_quantum,
                    config.edge_mode,
                )
                .map(|s| (p, s)),
            )
        })
        .collect()
}

fn simulate_point(
    config: &ExperimentConfig,
    codebook: &Codebook,
    schedulers: &[(Policy, BeamScheduler)],
    beta: f64,
    snr_db: f64,
    last_tti: usize,
) -> Result<Vec<TrialRecord>> {
    let snr = crate::db_to_linear(snr_db);
    let model = build_markov_with(config.n_grid, beta, config.sigma, config.edge_mode)?;
    let mut runners = Vec::new();
    for p in config.policies() {
        match p {
            Policy::BeamCycling => {
                let beams = cycling_beams(config.n_tx, config.n_grid)?;
                let sensing = sensing_matrix(&beams, codebook)?;
                let gamma_ub = tep_upper_bound_value(&Belief::uniform(config.n_grid), &sensing, snr)?;
                runners.push(Runner::Cycling { sensing, gamma_ub });
            }
            _ => {
                let sched = &schedulers
                    .iter()
                    .find(|(q, _)| *q == p)
                    .expect("a scheduler exists for every tracking policy")
                    .1;
                runners.push(Runner::Map(p, sched));
            }
        }
    }
    let uses_cycling = config.policies().contains(&Policy::BeamCycling);
    let ctx = Ctx {
        seed: config.seed,
        n_grid: config.n_grid,
        last_tti,
        noise_len: if uses_cycling { config.m_beams.max(config.n_tx) } else { config.m_beams },
        noiseless: config.noiseless,
    };
    let point = Point {
        beta,
        snr_db,
        snr,
        model,
        codebook,
        runners,
    };
    let frames: Vec<Vec<TrialRecord>> = (0..config.n_frames as u64)
        .into_par_iter()
        .map(|f| run_frame(&ctx, &point, f))
        .collect::<Result<_>>()?;
    Ok(frames.into_iter().flatten().collect())
}

fn stats_of(schedulers: &[(Policy, BeamScheduler)], acc: &mut SchedulerStats) {
    for (_, s) in schedulers {
        acc.designs += s.designs();
        acc.cache_hits += s.cache_hits();
        acc.evaluations += s.evaluations();
    }
}

fn codebook_for(config: &ExperimentConfig) -> Result<Codebook> {
    Codebook::new(build_grid(config.n_grid)?, config.n_tx)
}

fn scalar(values: &OneOrMany<f64>, name: &str) -> Result<f64> {
    let v = values.values();
    if v.len() != 1 {
        return invalid(format!("{name} must be a single value here, got {} values", v.len()));
    }
    Ok(v[0])
}

/// Runs every configured policy over `n_frames` frames and summarizes the
/// error rate per (TTI, policy). `beta` and `snr_db` must be single values.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentOutput> {
    config.validate()?;
    let beta = scalar(&config.beta, "beta")?;
    let snr_db = scalar(&config.snr_db, "snr_db")?;
    let codebook = codebook_for(config)?;
    let schedulers = build_schedulers(config, &codebook, crate::db_to_linear(snr_db))?;
    let trials = simulate_point(config, &codebook, &schedulers, beta, snr_db, config.p_ttis)?;
    let summary = summarize(&trials, &config.policies(), "tti", |r| Some(GroupKey::Tti(r.tti)));
    let mut stats = SchedulerStats::default();
    stats_of(&schedulers, &mut stats);
    Ok(ExperimentOutput {
        trials,
        summary,
        stats,
    })
}

/// Runs one experiment per value of the swept parameter and reports TTI
/// `sweep_tti` of each. Frames stop at that TTI; because every TTI draws
/// from its own stream, the result equals the corresponding row of a full
/// run.
pub fn sweep_detailed(config: &ExperimentConfig, param: SweepParam) -> Result<ExperimentOutput> {
    config.validate()?;
    let (swept, other, other_name) = match param {
        SweepParam::Beta => (&config.beta, &config.snr_db, "snr_db"),
        SweepParam::SnrDb => (&config.snr_db, &config.beta, "beta"),
    };
    if !swept.is_list() {
        return invalid(format!("{} is not a list", param.key_name()));
    }
    if other.values().len() != 1 {
        return invalid(format!("only one parameter can be swept; {other_name} is also a list"));
    }
    let fixed = other.values()[0];
    let codebook = codebook_for(config)?;
    let mut trials = Vec::new();
    let mut stats = SchedulerStats::default();
    match param {
        SweepParam::Beta => {
            let snr_db = fixed;
            let schedulers = build_schedulers(config, &codebook, crate::db_to_linear(snr_db))?;
            for beta in swept.values() {
                trials.extend(simulate_point(config, &codebook, &schedulers, beta, snr_db, config.sweep_tti)?);
            }
            stats_of(&schedulers, &mut stats);
        }
        SweepParam::SnrDb => {
            let beta = fixed;
            for snr_db in swept.values() {
                let schedulers = build_schedulers(config, &codebook, crate::db_to_linear(snr_db))?;
                trials.extend(simulate_point(config, &codebook, &schedulers, beta, snr_db, config.sweep_tti)?);
                stats_of(&schedulers, &mut stats);
            }
        }
    }
    let tti = config.sweep_tti;
    let summary = summarize(&trials, &config.policies(), param.key_name(), |r| {
        (r.tti == tti).then_some(match param {
            SweepParam::Beta => GroupKey::Beta(r.beta),
            SweepParam::SnrDb => GroupKey::SnrDb(r.snr_db),
        })
    });
    Ok(ExperimentOutput {
        trials,
        summary,
        stats,
    })
}

pub fn sweep(config: &ExperimentConfig, param: SweepParam) -> Result<SummaryTable> {
    sweep_detailed(config, param).map(|o| o.summary)
}

#[derive(Default)]
struct Cell {
    n: usize,
    errors: usize,
    gamma_sum: f64,
}

/// Groups records by key (in first-seen order) and policy (in `policies`
/// order).
pub fn summarize(
    trials: &[TrialRecord],
    policies: &[Policy],
    key_name: &'static str,
    key: impl Fn(&TrialRecord) -> Option<GroupKey>,
) -> SummaryTable {
    let mut keys: Vec<GroupKey> = Vec::new();
    let mut cells: BTreeMap<(usize, usize), Cell> = BTreeMap::new();
    for r in trials {
        let Some(k) = key(r) else { continue };
        let ki = match keys.iter().position(|x| *x == k) {
            Some(i) => i,
            None => {
                keys.push(k);
                keys.len() - 1
            }
        };
        let Some(pi) = policies.iter().position(|p| *p == r.policy) else {
            continue;
        };
        let cell = cells.entry((ki, pi)).or_default();
        cell.n += 1;
        cell.errors += r.error as usize;
        cell.gamma_sum += r.gamma_ub;
    }
    let rows = cells
        .into_iter()
        .map(|((ki, pi), c)| {
            let p = c.errors as f64 / c.n as f64;
            SummaryRow {
                group_key: keys[ki],
                policy: policies[pi],
                tep_mean: p,
                tep_stderr: (p * (1.0 - p) / c.n as f64).sqrt(),
                mean_gamma_ub: c.gamma_sum / c.n as f64,
                n_frames: c.n,
            }
        })
        .collect();
    SummaryTable { key_name, rows }
}

/// Mean and standard error of a per-frame paired difference.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairedStat {
    pub mean: f64,
    pub stderr: f64,
    pub n: usize,
}

/// Per-frame difference `error(a) − error(b)` over the records accepted by
/// `select`. Frames must appear under both policies.
pub fn paired_error_difference(
    trials: &[TrialRecord],
    a: Policy,
    b: Policy,
    select: impl Fn(&TrialRecord) -> bool,
) -> Result<PairedStat> {
    let mut ea: BTreeMap<u64, f64> = BTreeMap::new();
    let mut eb: BTreeMap<u64, f64> = BTreeMap::new();
    for r in trials.iter().filter(|r| select(r)) {
        let target = if r.policy == a {
            &mut ea
        } else if r.policy == b {
            &mut eb
        } else {
            continue;
        };
        if target.insert(r.frame, r.error as u8 as f64).is_some() {
            return invalid(format!("frame {} selected twice for one policy", r.frame));
        }
    }
    if ea.len() != eb.len() || ea.keys().zip(eb.keys()).any(|(x, y)| x != y) {
        return invalid("policies cover different frames");
    }
    let diffs: Vec<f64> = ea.values().zip(eb.values()).map(|(x, y)| x - y).collect();
    Ok(mean_stderr(&diffs))
}

/// Sample mean and standard error (`s/√n`, unbiased variance).
pub fn mean_stderr(values: &[f64]) -> PairedStat {
    let n = values.len();
    if n == 0 {
        return PairedStat {
            mean: f64::NAN,
            stderr: f64::NAN,
            n,
        };
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    let var = if n > 1 {
        values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64
    } else {
        0.0
    };
    PairedStat {
        mean,
        stderr: (var / n as f64).sqrt(),
        n,
    }
}
