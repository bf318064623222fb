//! Experiment orchestration: configuration, presets, repeated runs, results
//! files and Bayes-factor paths.

pub mod bf;
pub mod config;
pub mod data;

pub use bf::{bf_paths, BfCell, BfConfig, BfReport, EstimatorChoice};
pub use config::{preset, run_estimator, AlphaSpec, DatasetSpec, ModelSpec, Preset, PriorSpec, RunConfig, Tuning, PRESET_NAMES};
pub use data::{checksum, generate_synthetic, ingest_dataset, parse_dataset, Dataset, SyntheticData, SyntheticSpec};

use crate::error::{EvidenceError, Result};
use crate::estimate::EvidenceEstimate;
use crate::rng::substream;
use rand::RngCore;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

pub const LIBRARY_VERSION: &str = env!("CARGO_PKG_VERSION");

/// Environment variable overriding the worker count.
pub const WORKERS_ENV: &str = "EVIDENCE_WORKERS";

pub const RECORD_HEADER: [&str; 6] = ["estimator", "log_evidence", "se_log", "seed", "wall_time_s", "tuning_json"];

/// One row of a results file. Failed repetitions keep an empty
/// `log_evidence` and carry the error message inside `tuning_json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub estimator: String,
    pub log_evidence: Option<f64>,
    pub se_log: Option<f64>,
    pub seed: u64,
    pub wall_time_s: f64,
    pub tuning_json: String,
}

impl RunRecord {
    pub fn from_estimate(est: &EvidenceEstimate, seed: u64) -> Self {
        RunRecord {
            estimator: est.estimator.to_string(),
            log_evidence: Some(est.log_evidence),
            se_log: est.se_log,
            seed,
            wall_time_s: est.wall_time,
            tuning_json: serde_json::to_string(&est.tuning).expect("map of f64 serializes"),
        }
    }

    pub fn from_error(estimator: &str, err: &EvidenceError, seed: u64, wall_time_s: f64) -> Self {
        RunRecord {
            estimator: estimator.to_string(),
            log_evidence: None,
            se_log: None,
            seed,
            wall_time_s,
            tuning_json: serde_json::json!({ "error": err.to_string() }).to_string(),
        }
    }

    pub fn error(&self) -> Option<String> {
        let v: serde_json::Value = serde_json::from_str(&self.tuning_json).ok()?;
        v.get("error")?.as_str().map(str::to_string)
    }
}

pub fn write_records<W: Write>(records: &[RunRecord], out: W) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
    w.write_record(RECORD_HEADER).map_err(csv_err)?;
    for r in records {
        w.serialize(r).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_records<R: Read>(input: R) -> Result<Vec<RunRecord>> {
    let mut rd = csv::Reader::from_reader(input);
    let header = rd.headers().map_err(csv_err)?.clone();
    if header.iter().ne(RECORD_HEADER) {
        return Err(EvidenceError::Parse { line: 1, message: format!("unexpected header {header:?}") });
    }
    rd.deserialize().map(|r| r.map_err(csv_err)).collect()
}

fn csv_err(e: csv::Error) -> EvidenceError {
    let line = e.position().map_or(0, |p| p.line() as usize);
    EvidenceError::Parse { line, message: e.to_string() }
}

/// Seed handed to repetition `rep` of a run with base seed `seed`.
pub fn repetition_seed(seed: u64, rep: usize) -> u64 {
    substream(seed, rep as u64).next_u64()
}

/// Worker count: explicit value, then `EVIDENCE_WORKERS`, then all cores.
pub fn resolve_workers(explicit: Option<usize>) -> Result<usize> {
    if let Some(w) = explicit {
        return if w == 0 { Err(EvidenceError::Config("workers must be positive".into())) } else { Ok(w) };
    }
    match std::env::var(WORKERS_ENV) {
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(w) if w > 0 => Ok(w),
            _ => Err(EvidenceError::Config(format!("{WORKERS_ENV} must be a positive integer, got '{v}'"))),
        },
        Err(_) => Ok(std::thread::available_parallelism().map_or(1, |n| n.get())),
    }
}

pub(crate) fn with_pool<T: Send>(workers: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T> {
    let n = resolve_workers(workers)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build()
        .map_err(|e| EvidenceError::Config(format!("thread pool: {e}")))?;
    Ok(pool.install(f))
}

/// Squared error against a reference and a log-log fit of error on time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MseReport {
    pub reference: f64,
    /// `(wall_time_s, squared_error)` per successful repetition.
    pub pairs: Vec<(f64, f64)>,
    pub mse: f64,
    /// Slope and intercept of `ln(sq err) ~ ln(time)`, when at least two
    /// distinct positive points exist.
    pub loglog_fit: Option<(f64, f64)>,
}

pub fn mse_vs_time(records: &[RunRecord], reference: f64) -> Option<MseReport> {
    let pairs: Vec<(f64, f64)> = records
        .iter()
        .filter_map(|r| r.log_evidence.map(|l| (r.wall_time_s, (l - reference).powi(2))))
        .collect();
    if pairs.is_empty() {
        return None;
    }
    let mse = pairs.iter().map(|p| p.1).sum::<f64>() / pairs.len() as f64;
    let pts: Vec<(f64, f64)> = pairs.iter().filter(|(t, e)| *t > 0.0 && *e > 0.0).map(|(t, e)| (t.ln(), e.ln())).collect();
    let loglog_fit = least_squares(&pts);
    Some(MseReport { reference, pairs, mse, loglog_fit })
}

fn least_squares(pts: &[(f64, f64)]) -> Option<(f64, f64)> {
    if pts.len() < 2 {
        return None;
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    if sxx <= 0.0 {
        return None;
    }
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let slope = sxy / sxx;
    Some((slope, my - slope * mx))
}

/// Everything a run produced.
#[derive(Debug, Clone, PartialEq)]
pub struct RunOutput {
    pub records: Vec<RunRecord>,
    pub dataset: Dataset,
    pub manifest: serde_json::Value,
    pub mse: Option<MseReport>,
}

/// Execute all repetitions of a config. Repetitions run in parallel and
/// records come back in repetition order; failures become error rows.
pub fn run(cfg: &RunConfig, workers: Option<usize>) -> Result<RunOutput> {
    cfg.validate()?;
    let dataset = cfg.load_dataset()?;
    let prior = cfg.resolve_prior(&dataset.values)?;
    let tuning = cfg.resolved_tuning()?;
    let records: Vec<RunRecord> = with_pool(workers, || {
        (0..cfg.repetitions)
            .into_par_iter()
            .map(|rep| {
                let seed = repetition_seed(cfg.seed, rep);
                let started = std::time::Instant::now();
                match run_estimator(cfg.model, cfg.estimator, &tuning, &dataset.values, &prior, &cfg.alpha, &cfg.gamma_prior, seed) {
                    Ok(est) => RunRecord::from_estimate(&est, seed),
                    Err(e) => RunRecord::from_error(cfg.estimator.as_str(), &e, seed, started.elapsed().as_secs_f64()),
                }
            })
            .collect()
    })?;
    let mse = cfg.reference.and_then(|r| mse_vs_time(&records, r));
    let failures = records.iter().filter(|r| r.log_evidence.is_none()).count();
    let manifest = serde_json::json!({
        "config": cfg,
        "resolved_tuning": tuning,
        "prior": prior,
        "dataset": { "n": dataset.len(), "sha256": dataset.checksum },
        "repetitions": records.len(),
        "failures": failures,
        "library_version": LIBRARY_VERSION,
        "mse_vs_time": mse,
    });
    Ok(RunOutput { records, dataset, manifest, mse })
}

/// Manifest path that accompanies a results file.
pub fn manifest_path(results: &Path) -> PathBuf {
    let mut s = results.as_os_str().to_owned();
    s.push(".manifest.json");
    PathBuf::from(s)
}

/// Write the results CSV, its manifest and, in MSE mode, the
/// `(time, squared error)` pairs next to it.
pub fn write_run(out: &RunOutput, path: &Path) -> Result<()> {
    write_records(&out.records, std::fs::File::create(path)?)?;
    let manifest = serde_json::to_string_pretty(&out.manifest).expect("manifest serializes");
    std::fs::write(manifest_path(path), manifest)?;
    if let Some(m) = &out.mse {
        let mut s = path.as_os_str().to_owned();
        s.push(".mse.csv");
        let mut w = csv::Writer::from_path(PathBuf::from(s)).map_err(csv_err)?;
        w.write_record(["wall_time_s", "squared_error"]).map_err(csv_err)?;
        for (t, e) in &m.pairs {
            w.write_record([t.to_string(), e.to_string()]).map_err(csv_err)?;
        }
        w.flush()?;
    }
    Ok(())
}
