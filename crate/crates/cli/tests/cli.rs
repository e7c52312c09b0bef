//! End-to-end runs of the `beamtrack` binary.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use beamtrack_cli::{read_beam_file, RunManifest, SUMMARY_COLUMNS};
use beamtrack_core::ExperimentConfig;
use tempfile::TempDir;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_beamtrack"));
    c.env("BEAMTRACK_THREADS", "2");
    c
}

fn golden(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden").join(name)
}

fn write_config(dir: &TempDir, json: &str) -> PathBuf {
    let p = dir.path().join("config.json");
    fs::write(&p, json).unwrap();
    p
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn lines(path: &Path) -> Vec<String> {
    fs::read_to_string(path).unwrap().lines().map(String::from).collect()
}

#[test]
fn simulate_matches_golden_summary() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("run");
    let o = run(&["simulate", "--config", s(&golden("tiny.json")), "--out", s(&out)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let got = fs::read_to_string(out.join("summary.csv")).unwrap();
    let want = fs::read_to_string(golden("tiny_summary.csv")).unwrap();
    assert_eq!(got, want);
    assert_eq!(lines(&out.join("summary.csv"))[0], SUMMARY_COLUMNS.join(","));
}

#[test]
fn reruns_are_byte_identical_and_manifest_round_trips() {
    let dir = TempDir::new().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        assert!(run(&["simulate", "--config", s(&golden("tiny.json")), "--out", s(out)]).status.success());
    }
    for f in ["summary.csv", "trials.csv"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
    let ma: RunManifest = serde_json::from_slice(&fs::read(a.join("manifest.json")).unwrap()).unwrap();
    let mb: RunManifest = serde_json::from_slice(&fs::read(b.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(ma.outputs, mb.outputs);
    assert_eq!(ma.outputs.len(), 2);
    let original: ExperimentConfig = serde_json::from_str(&fs::read_to_string(golden("tiny.json")).unwrap()).unwrap();
    assert_eq!(ma.config, original);
    let again: ExperimentConfig = serde_json::from_str(&serde_json::to_string(&ma.config).unwrap()).unwrap();
    assert_eq!(again, original);
    assert_eq!(ma.threads, 2);
}

#[test]
fn one_frame_gives_one_record_per_tracked_tti() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(&dir, r#"{"n_frames": 1, "policy": "directional_tep"}"#);
    let out = dir.path().join("run");
    assert!(run(&["simulate", "--config", s(&cfg), "--out", s(&out)]).status.success());
    assert_eq!(lines(&out.join("trials.csv")).len() - 1, 9);
    let summary = lines(&out.join("summary.csv"));
    assert_eq!(summary.len() - 1, 9);
    assert!(summary[1..].iter().all(|l| l.contains(",directional_tep,")));
}

#[test]
fn default_length_frames_give_nine_rows_per_policy() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(&dir, r#"{"n_frames": 3, "psa": {"swarm_size": 6, "max_iters": 5}}"#);
    let out = dir.path().join("run");
    assert!(run(&["simulate", "--config", s(&cfg), "--out", s(&out)]).status.success());
    let summary = lines(&out.join("summary.csv"));
    for p in ["psa_optimized", "directional_tep", "beam_cycling"] {
        assert_eq!(summary.iter().filter(|l| l.contains(&format!(",{p},"))).count(), 9);
    }
}

#[test]
fn sweep_writes_one_row_per_value_and_policy() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(
        &dir,
        r#"{"n_tx": 8, "n_grid": 16, "sigma": 2, "n_frames": 20, "beta": [0.1, 0.3, 0.5, 0.7, 0.9],
            "policy": ["psa_optimized", "directional_tep"], "psa": {"swarm_size": 8, "max_iters": 10}}"#,
    );
    let out = dir.path().join("sweep");
    let o = run(&["sweep", "--config", s(&cfg), "--param", "beta", "--out", s(&out)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let summary = lines(&out.join("summary.csv"));
    assert_eq!(summary.len() - 1, 10);
    assert!(summary[1].starts_with("0.1,psa_optimized,"));
}

#[test]
fn config_errors_exit_2() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("x");
    let cases = [
        (r#"{"beta": []}"#, "beta"),
        (r#"{"beta": 0.2}"#, "beta"),
        (r#"{"snr_db": [10, 20], "beta": [0.1, 0.2]}"#, "beta"),
        (r#"{"n_frames": 0}"#, ""),
        (r#"{"unknown": 1}"#, ""),
        ("not json", ""),
    ];
    for (json, param) in cases {
        let cfg = write_config(&dir, json);
        let o = if param.is_empty() {
            run(&["simulate", "--config", s(&cfg), "--out", s(&out)])
        } else {
            run(&["sweep", "--config", s(&cfg), "--param", param, "--out", s(&out)])
        };
        assert_eq!(o.status.code(), Some(2), "{json}");
    }
    let o = run(&["simulate", "--config", "/nonexistent/config.json", "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(2));
    let o = run(&["sweep", "--config", s(&golden("tiny.json")), "--param", "sigma", "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(2));
    let o = bin()
        .env("BEAMTRACK_THREADS", "zero")
        .args(["simulate", "--config", s(&golden("tiny.json")), "--out", s(&out)])
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(2));
    assert_eq!(run(&["simulate"]).status.code(), Some(2));
}

#[test]
fn unwritable_output_exits_3() {
    let dir = TempDir::new().unwrap();
    let blocker = dir.path().join("file");
    fs::write(&blocker, "x").unwrap();
    let o = run(&["simulate", "--config", s(&golden("tiny.json")), "--out", s(&blocker.join("sub"))]);
    assert_eq!(o.status.code(), Some(3));
}

#[test]
fn optimize_writes_a_finite_phase_matrix() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(&dir, r#"{"psa": {"swarm_size": 10, "max_iters": 15}}"#);
    let out = dir.path().join("beams.txt");
    let o = run(&["optimize", "--config", s(&cfg), "--prior", "uniform", "--out", s(&out)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let beams = read_beam_file(&fs::read_to_string(&out).unwrap()).unwrap();
    assert_eq!((beams.n_tx, beams.m_beams), (32, 2));
    assert_eq!(beams.phases.len(), 32);
    assert!(beams.phases.iter().all(|r| r.len() == 2 && r.iter().all(|p| p.is_finite())));
}

#[test]
fn optimize_dominates_directional_and_is_reproducible() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(&dir, r#"{"beta": 0.2, "psa": {"swarm_size": 20, "max_iters": 40}}"#);
    let (a, b) = (dir.path().join("a.txt"), dir.path().join("b.txt"));
    for out in [&a, &b] {
        assert!(run(&["optimize", "--config", s(&cfg), "--prior", "propagated:0", "--out", s(out)]).status.success());
    }
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
    let beams = read_beam_file(&fs::read_to_string(&a).unwrap()).unwrap();
    assert!(beams.gamma_ub <= beams.directional_gamma_ub);
}

#[test]
fn optimize_reads_prior_files() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(&dir, r#"{"n_tx": 8, "n_grid": 16, "sigma": 2, "psa": {"swarm_size": 8, "max_iters": 5}}"#);
    let prior = dir.path().join("prior.txt");
    fs::write(&prior, "1 2 1 0 0 0 0 0\n0 0 0 0 0 0 0 1\n").unwrap();
    let out = dir.path().join("beams.txt");
    let spec = format!("file:{}", s(&prior));
    assert!(run(&["optimize", "--config", s(&cfg), "--prior", &spec, "--out", s(&out)]).status.success());
    fs::write(&prior, "1 2 3").unwrap();
    assert_eq!(run(&["optimize", "--config", s(&cfg), "--prior", &spec, "--out", s(&out)]).status.code(), Some(2));
}
