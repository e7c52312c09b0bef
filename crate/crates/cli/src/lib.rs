//! Command implementations behind the `beamtrack` binary.
//!
//! Every command reads a JSON [`ExperimentConfig`], writes its artifacts and
//! returns a [`Failure`] that maps onto the process exit code.

use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use beamtrack_core::optimizer::select_directional_greedy;
use beamtrack_core::sim::{sweep_detailed, ExperimentOutput, SchedulerStats};
use beamtrack_core::{
    array::build_markov_with, build_grid, db_to_linear, optimize_beams, propagate_prior,
    run_experiment, select_directional_pair, Belief, Codebook, ExperimentConfig, SummaryTable,
    SweepParam, TrialRecord,
};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub const SUMMARY_FILE: &str = "summary.csv";
pub const TRIALS_FILE: &str = "trials.csv";
pub const MANIFEST_FILE: &str = "manifest.json";

/// Exact header of every summary file.
pub const SUMMARY_COLUMNS: [&str; 6] = [
    "group_key",
    "policy",
    "tep_mean",
    "tep_stderr",
    "mean_gamma_ub",
    "n_frames",
];

#[derive(Debug)]
pub enum Failure {
    /// Unreadable or invalid configuration or arguments (exit 2).
    Config(String),
    /// Output could not be written (exit 3).
    Io(String),
}

impl Failure {
    pub fn exit_code(&self) -> i32 {
        match self {
            Failure::Config(_) => 2,
            Failure::Io(_) => 3,
        }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Failure::Config(m) => write!(f, "configuration error: {m}"),
            Failure::Io(m) => write!(f, "output error: {m}"),
        }
    }
}

impl std::error::Error for Failure {}

fn config_err(e: impl fmt::Display) -> Failure {
    Failure::Config(e.to_string())
}

fn io_err(path: &Path, e: impl fmt::Display) -> Failure {
    Failure::Io(format!("{}: {e}", path.display()))
}

pub fn load_config(path: &Path) -> Result<ExperimentConfig, Failure> {
    let text = fs::read_to_string(path).map_err(|e| Failure::Config(format!("{}: {e}", path.display())))?;
    let config: ExperimentConfig =
        serde_json::from_str(&text).map_err(|e| Failure::Config(format!("{}: {e}", path.display())))?;
    config.validate().map_err(config_err)?;
    Ok(config)
}

/// Reads `BEAMTRACK_THREADS` and sizes the global worker pool.
pub fn configure_threads() -> Result<Option<usize>, Failure> {
    let Ok(raw) = std::env::var("BEAMTRACK_THREADS") else {
        return Ok(None);
    };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| Failure::Config(format!("BEAMTRACK_THREADS must be a positive integer, got {raw:?}")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(config_err)?;
    Ok(Some(n))
}

fn single(values: Vec<f64>, name: &str) -> Result<f64, Failure> {
    match values.as_slice() {
        [v] => Ok(*v),
        _ => Err(Failure::Config(format!("{name} must be a single value for this command"))),
    }
}

/// Parses `point:<i>`, `propagated:<i>`, `uniform` or `file:<path>`.
///
/// `propagated:<i>` is the point mass at `i` pushed through one Markov step
/// with the config's β and σ. A prior file holds `n_grid` nonnegative
/// weights separated by whitespace or commas; they are normalized.
pub fn parse_prior(spec: &str, config: &ExperimentConfig) -> Result<Belief, Failure> {
    let n = config.n_grid;
    let index = |s: &str| -> Result<usize, Failure> {
        s.parse::<usize>()
            .map_err(|_| Failure::Config(format!("bad grid index {s:?}")))
    };
    let (kind, arg) = spec.split_once(':').unwrap_or((spec, ""));
    match kind {
        "uniform" if arg.is_empty() => Ok(Belief::uniform(n)),
        "point" => Belief::point_mass(n, index(arg)?).map_err(config_err),
        "propagated" => {
            let beta = single(config.beta.values(), "beta")?;
            let model = build_markov_with(n, beta, config.sigma, config.edge_mode).map_err(config_err)?;
            let start = Belief::point_mass(n, index(arg)?).map_err(config_err)?;
            propagate_prior(&start, &model).map_err(config_err)
        }
        "file" => {
            let text = fs::read_to_string(arg).map_err(|e| Failure::Config(format!("{arg}: {e}")))?;
            let weights = text
                .split(|c: char| c.is_whitespace() || c == ',')
                .filter(|t| !t.is_empty())
                .map(|t| t.parse::<f64>().map_err(|_| Failure::Config(format!("bad prior weight {t:?}"))))
                .collect::<Result<Vec<_>, _>>()?;
            if weights.len() != n {
                return Err(Failure::Config(format!(
                    "prior file has {} weights, grid has {n}",
                    weights.len()
                )));
            }
            Belief::from_weights(weights).map_err(config_err)
        }
        _ => Err(Failure::Config(format!(
            "unknown prior {spec:?}; expected point:<i>, propagated:<i>, uniform or file:<path>"
        ))),
    }
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), Failure> {
    let mut f = fs::File::create(path).map_err(|e| io_err(path, e))?;
    f.write_all(bytes).map_err(|e| io_err(path, e))
}

/// Designs beams for one prior and writes them with their bound and the
/// directional baseline's bound.
///
/// Format: `#`-prefixed `key value` header lines, then one line per antenna
/// holding the `m_beams` phases (radians in `[0, 2π)`) separated by spaces.
pub fn cmd_optimize(config_path: &Path, prior_spec: &str, out: &Path) -> Result<(), Failure> {
    let config = load_config(config_path)?;
    let prior = parse_prior(prior_spec, &config)?;
    let snr_db = single(config.snr_db.values(), "snr_db")?;
    let snr = db_to_linear(snr_db);
    let codebook = Codebook::new(build_grid(config.n_grid).map_err(config_err)?, config.n_tx).map_err(config_err)?;
    let result = optimize_beams(&prior, &codebook, snr, config.m_beams, &config.psa).map_err(config_err)?;
    let directional = select_directional_pair(&prior, &codebook, snr, config.m_beams)
        .or_else(|_| select_directional_greedy(&prior, &codebook, snr, config.m_beams))
        .map_err(config_err)?;

    let mut text = String::new();
    text.push_str("# beamtrack training beams, one row per antenna, phases in radians\n");
    text.push_str(&format!("# n_tx {}\n# m_beams {}\n", config.n_tx, config.m_beams));
    text.push_str(&format!("# snr_db {snr_db}\n# prior {prior_spec}\n"));
    text.push_str(&format!("# gamma_ub {}\n", result.score));
    text.push_str(&format!("# directional_gamma_ub {}\n", directional.score));
    let idx: Vec<String> = directional.indices.iter().map(|i| i.to_string()).collect();
    text.push_str(&format!("# directional_codewords {}\n", idx.join(" ")));
    text.push_str(&format!("# evaluations {}\n", result.evaluations));
    let phases = result.beams.phases();
    for k in 0..phases.nrows() {
        let row: Vec<String> = (0..phases.ncols())
            .map(|m| phases[(k, m)].rem_euclid(2.0 * std::f64::consts::PI).to_string())
            .collect();
        text.push_str(&row.join(" "));
        text.push('\n');
    }
    write_file(out, text.as_bytes())
}

/// Beams read back from a [`cmd_optimize`] output file.
#[derive(Debug, Clone, PartialEq)]
pub struct BeamFile {
    pub n_tx: usize,
    pub m_beams: usize,
    pub gamma_ub: f64,
    pub directional_gamma_ub: f64,
    /// `phases[k][m]`.
    pub phases: Vec<Vec<f64>>,
}

pub fn read_beam_file(text: &str) -> Result<BeamFile, String> {
    let mut header = std::collections::HashMap::new();
    let mut phases = Vec::new();
    for line in text.lines() {
        if let Some(rest) = line.strip_prefix('#') {
            if let Some((k, v)) = rest.trim().split_once(' ') {
                header.insert(k.to_string(), v.trim().to_string());
            }
        } else if !line.trim().is_empty() {
            let row = line
                .split_whitespace()
                .map(|t| t.parse::<f64>().map_err(|e| e.to_string()))
                .collect::<Result<Vec<_>, _>>()?;
            phases.push(row);
        }
    }
    let get = |k: &str| header.get(k).ok_or_else(|| format!("missing {k}"));
    let parse_f = |k: &str| -> Result<f64, String> { get(k)?.parse::<f64>().map_err(|e| e.to_string()) };
    let parse_u = |k: &str| -> Result<usize, String> { get(k)?.parse::<usize>().map_err(|e| e.to_string()) };
    Ok(BeamFile {
        n_tx: parse_u("n_tx")?,
        m_beams: parse_u("m_beams")?,
        gamma_ub: parse_f("gamma_ub")?,
        directional_gamma_ub: parse_f("directional_gamma_ub")?,
        phases,
    })
}

#[derive(Serialize)]
struct SummaryCsvRow<'a> {
    group_key: String,
    policy: &'a str,
    tep_mean: f64,
    tep_stderr: f64,
    mean_gamma_ub: f64,
    n_frames: usize,
}

pub fn summary_csv(table: &SummaryTable) -> Result<Vec<u8>, csv::Error> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in &table.rows {
        w.serialize(SummaryCsvRow {
            group_key: r.group_key.to_string(),
            policy: r.policy.as_str(),
            tep_mean: r.tep_mean,
            tep_stderr: r.tep_stderr,
            mean_gamma_ub: r.mean_gamma_ub,
            n_frames: r.n_frames,
        })?;
    }
    if table.rows.is_empty() {
        w.write_record(SUMMARY_COLUMNS)?;
    }
    w.into_inner().map_err(|e| e.into_error().into())
}

pub fn trials_csv(trials: &[TrialRecord]) -> Result<Vec<u8>, csv::Error> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for t in trials {
        w.serialize(t)?;
    }
    w.into_inner().map_err(|e| e.into_error().into())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutputDigest {
    pub file: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub seed: u64,
    /// `tti` for simulations, the swept field for sweeps.
    pub group_key: String,
    pub config: ExperimentConfig,
    pub duration_secs: f64,
    pub threads: usize,
    pub designs: u64,
    pub cache_hits: u64,
    pub objective_evaluations: u64,
    pub outputs: Vec<OutputDigest>,
}

fn digest(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn write_run(
    out_dir: &Path,
    command: &str,
    config: &ExperimentConfig,
    output: &ExperimentOutput,
    started: Instant,
) -> Result<Vec<PathBuf>, Failure> {
    fs::create_dir_all(out_dir).map_err(|e| io_err(out_dir, e))?;
    let summary = summary_csv(&output.summary).map_err(|e| io_err(out_dir, e))?;
    let trials = trials_csv(&output.trials).map_err(|e| io_err(out_dir, e))?;
    let mut written = Vec::new();
    let mut outputs = Vec::new();
    for (name, bytes) in [(SUMMARY_FILE, &summary), (TRIALS_FILE, &trials)] {
        let path = out_dir.join(name);
        write_file(&path, bytes)?;
        outputs.push(OutputDigest {
            file: name.to_string(),
            sha256: digest(bytes),
        });
        written.push(path);
    }
    let SchedulerStats {
        designs,
        cache_hits,
        evaluations,
    } = output.stats;
    let manifest = RunManifest {
        tool: "beamtrack".into(),
        version: env!("CARGO_PKG_VERSION").into(),
        command: command.into(),
        seed: config.seed,
        group_key: output.summary.key_name.into(),
        config: config.clone(),
        duration_secs: started.elapsed().as_secs_f64(),
        threads: rayon::current_num_threads(),
        designs,
        cache_hits,
        objective_evaluations: evaluations,
        outputs,
    };
    let path = out_dir.join(MANIFEST_FILE);
    let text = serde_json::to_string_pretty(&manifest).map_err(|e| io_err(&path, e))?;
    write_file(&path, text.as_bytes())?;
    written.push(path);
    Ok(written)
}

pub fn cmd_simulate(config_path: &Path, out_dir: &Path) -> Result<Vec<PathBuf>, Failure> {
    let started = Instant::now();
    let config = load_config(config_path)?;
    let output = run_experiment(&config).map_err(config_err)?;
    write_run(out_dir, "simulate", &config, &output, started)
}

pub fn parse_sweep_param(s: &str) -> Result<SweepParam, Failure> {
    match s {
        "beta" => Ok(SweepParam::Beta),
        "snr" | "snr_db" => Ok(SweepParam::SnrDb),
        _ => Err(Failure::Config(format!("unknown sweep parameter {s:?}; expected beta or snr"))),
    }
}

pub fn cmd_sweep(config_path: &Path, param: SweepParam, out_dir: &Path) -> Result<Vec<PathBuf>, Failure> {
    let started = Instant::now();
    let config = load_config(config_path)?;
    let output = sweep_detailed(&config, param).map_err(config_err)?;
    write_run(out_dir, "sweep", &config, &output, started)
}
