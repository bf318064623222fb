//! Bayes factors of a finite mixture against a DPM along growing samples.

use super::config::{run_estimator, AlphaSpec, ModelSpec, Tuning};
use super::data::{generate_synthetic, SyntheticSpec};
use super::with_pool;
use crate::conjugate::hyperparams_from_data;
use crate::dpm::GammaPrior;
use crate::error::{EvidenceError, Result};
use crate::estimate::EstimatorId;
use crate::rng::substream;
use rand::RngCore;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::io::Write;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EstimatorChoice {
    pub estimator: EstimatorId,
    #[serde(default)]
    pub tuning: Tuning,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BfConfig {
    /// Generating mixture; its `n` is ignored and its `seed` is the base seed
    /// of the dataset streams.
    pub null: SyntheticSpec,
    pub grid: Vec<usize>,
    pub datasets: usize,
    /// Components of the finite mixture; defaults to the null's K0.
    #[serde(default)]
    pub k: Option<usize>,
    #[serde(default)]
    pub alpha: AlphaSpec,
    #[serde(default)]
    pub gamma_prior: GammaPrior,
    #[serde(default = "default_numerator")]
    pub numerator: EstimatorChoice,
    #[serde(default = "default_denominator")]
    pub denominator: EstimatorChoice,
    #[serde(default)]
    pub seed: u64,
}

fn default_numerator() -> EstimatorChoice {
    EstimatorChoice { estimator: EstimatorId::Sis, tuning: Tuning::new() }
}

fn default_denominator() -> EstimatorChoice {
    let tuning = [("T1", 2000.0), ("T2", 2000.0), ("burnin", 500.0)].iter().map(|(k, v)| (k.to_string(), *v)).collect();
    EstimatorChoice { estimator: EstimatorId::RlrSis, tuning }
}

impl BfConfig {
    pub fn new(null: SyntheticSpec, grid: Vec<usize>, datasets: usize, seed: u64) -> Self {
        BfConfig {
            null,
            grid,
            datasets,
            k: None,
            alpha: AlphaSpec::default(),
            gamma_prior: GammaPrior::default(),
            numerator: default_numerator(),
            denominator: default_denominator(),
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let mut null = self.null.clone();
        null.n = 0;
        null.validate()?;
        if self.grid.is_empty() || self.grid[0] < 2 || self.grid.windows(2).any(|w| w[0] >= w[1]) {
            return Err(EvidenceError::Config("grid must be strictly increasing and start at n >= 2".into()));
        }
        if self.datasets == 0 {
            return Err(EvidenceError::Config("need at least one dataset".into()));
        }
        if !EstimatorId::FINITE_MIXTURE.contains(&self.numerator.estimator) {
            return Err(EvidenceError::Config("numerator must be a finite-mixture estimator".into()));
        }
        if !EstimatorId::DPM.contains(&self.denominator.estimator) {
            return Err(EvidenceError::Config("denominator must be a DPM estimator".into()));
        }
        let k = self.k.unwrap_or(self.null.k0());
        if k == 0 {
            return Err(EvidenceError::Config("K must be positive".into()));
        }
        self.alpha.resolve(k)?;
        self.gamma_prior.validate().map_err(|e| EvidenceError::Config(e.to_string()))?;
        for c in [&self.numerator, &self.denominator] {
            let keys = super::config::tuning_keys(c.estimator);
            if let Some(bad) = c.tuning.keys().find(|k| !keys.contains(&k.as_str())) {
                return Err(EvidenceError::Config(format!("unknown tuning key '{bad}' for {}", c.estimator)));
            }
        }
        Ok(())
    }
}

/// One (dataset, n) cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BfCell {
    pub dataset: usize,
    pub n: usize,
    pub log_bf: Option<f64>,
    pub log_evidence_numerator: Option<f64>,
    pub log_evidence_denominator: Option<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BfReport {
    pub cells: Vec<BfCell>,
    /// `(n, fraction of successful paths with log BF > 0)`.
    pub positive_fraction: Vec<(usize, f64)>,
}

/// Every dataset is one stream of draws from the null; the cells use its
/// nested prefixes. Each prefix gets its own data-dependent prior, shared
/// by both models.
pub fn bf_paths(cfg: &BfConfig, workers: Option<usize>) -> Result<BfReport> {
    cfg.validate()?;
    let k = cfg.k.unwrap_or(cfg.null.k0());
    let n_max = *cfg.grid.last().expect("nonempty grid");
    let jobs: Vec<(usize, usize)> = (0..cfg.datasets).flat_map(|d| (0..cfg.grid.len()).map(move |g| (d, g))).collect();
    let streams: Vec<Vec<f64>> = (0..cfg.datasets)
        .map(|d| {
            let spec = SyntheticSpec { n: n_max, seed: substream(cfg.null.seed, d as u64).next_u64(), ..cfg.null.clone() };
            generate_synthetic(&spec).map(|s| s.values)
        })
        .collect::<Result<_>>()?;

    let cells: Vec<BfCell> = with_pool(workers, || {
        jobs.par_iter()
            .map(|&(d, g)| {
                let n = cfg.grid[g];
                let y = &streams[d][..n];
                let cell_seed = substream(cfg.seed, ((d as u64) << 32) | g as u64).next_u64();
                let evidences = hyperparams_from_data(y).and_then(|prior| {
                    let num = run_estimator(
                        ModelSpec::Fm { k },
                        cfg.numerator.estimator,
                        &cfg.numerator.tuning,
                        y,
                        &prior,
                        &cfg.alpha,
                        &cfg.gamma_prior,
                        cell_seed,
                    )?;
                    let den = run_estimator(
                        ModelSpec::Dpm,
                        cfg.denominator.estimator,
                        &cfg.denominator.tuning,
                        y,
                        &prior,
                        &cfg.alpha,
                        &cfg.gamma_prior,
                        cell_seed ^ 0x9e37_79b9_7f4a_7c15,
                    )?;
                    Ok((num.log_evidence, den.log_evidence))
                });
                match evidences {
                    Ok((a, b)) => BfCell {
                        dataset: d,
                        n,
                        log_bf: Some(a - b),
                        log_evidence_numerator: Some(a),
                        log_evidence_denominator: Some(b),
                        error: None,
                    },
                    Err(e) => BfCell {
                        dataset: d,
                        n,
                        log_bf: None,
                        log_evidence_numerator: None,
                        log_evidence_denominator: None,
                        error: Some(e.to_string()),
                    },
                }
            })
            .collect()
    })?;

    let positive_fraction = cfg
        .grid
        .iter()
        .map(|&n| {
            let ok: Vec<f64> = cells.iter().filter(|c| c.n == n).filter_map(|c| c.log_bf).collect();
            let frac = if ok.is_empty() { f64::NAN } else { ok.iter().filter(|&&b| b > 0.0).count() as f64 / ok.len() as f64 };
            (n, frac)
        })
        .collect();
    Ok(BfReport { cells, positive_fraction })
}

pub fn write_bf_cells<W: Write>(cells: &[BfCell], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for c in cells {
        w.serialize(c).map_err(|e| EvidenceError::Io(e.to_string()))?;
    }
    w.flush()?;
    Ok(())
}
