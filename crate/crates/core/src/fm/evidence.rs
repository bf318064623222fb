//! Prior arithmetic mean, posterior harmonic mean and sequential importance
//! sampling over allocations.

use super::{check_alpha, fm_log_likelihood, run_gibbs_chain, sample_log_categorical, sample_prior_unchecked};
use super::chib::ChibConfig;
use crate::conjugate::{ClusterSuffStats, NIGPrior, PredictiveTable};
use crate::error::{EvidenceError, Result};
use crate::estimate::{EstimatorId, EvidenceEstimate};
use crate::mcstats::{log_mean_exp, log_mean_exp_se, log_sum_exp};
use crate::rng::{rng_from_seed, substream};
use rand::Rng;
use rayon::prelude::*;
use std::time::Instant;

/// `log (1/T) Σ_t p(y | ϑ_t)` with `ϑ_t` drawn from the prior.
pub fn arithmetic_mean(data: &[f64], k: usize, prior: &NIGPrior, alpha: &[f64], t: usize, seed: u64) -> Result<EvidenceEstimate> {
    let started = Instant::now();
    prior.validate()?;
    check_alpha(alpha, k)?;
    if t == 0 {
        return Err(EvidenceError::invalid("arithmetic mean needs T >= 1"));
    }
    let log_lik: Vec<f64> = (0..t)
        .into_par_iter()
        .map(|i| {
            let mut rng = substream(seed, i as u64);
            let params = sample_prior_unchecked(k, prior, alpha, &mut rng);
            fm_log_likelihood(&params, data)
        })
        .collect();
    let est = log_mean_exp(&log_lik);
    Ok(EvidenceEstimate::new(EstimatorId::ArithmeticMean, est, Some(log_mean_exp_se(&log_lik)), started)
        .with("T", t as f64)
        .with("K", k as f64))
}

/// `-log (1/T) Σ_t exp(-ℓ_t)` for log-likelihood values of a posterior chain.
pub fn harmonic_mean_from_loglik(log_lik: &[f64]) -> Result<f64> {
    if log_lik.is_empty() {
        return Err(EvidenceError::invalid("harmonic mean needs a nonempty chain"));
    }
    let neg: Vec<f64> = log_lik.iter().map(|&l| -l).collect();
    Ok(-log_mean_exp(&neg))
}

/// Harmonic mean estimator on a fresh Gibbs chain. The reported s.e. treats
/// draws as independent and is unreliable, as is the estimator.
pub fn harmonic_mean(data: &[f64], k: usize, prior: &NIGPrior, alpha: &[f64], cfg: &ChibConfig) -> Result<EvidenceEstimate> {
    let started = Instant::now();
    if cfg.t == 0 {
        return Err(EvidenceError::invalid("harmonic mean needs T >= 1"));
    }
    let mut rng = rng_from_seed(cfg.seed);
    let draws = run_gibbs_chain(data, k, prior, alpha, cfg.t, cfg.burnin, &cfg.init, &mut rng)?;
    let log_lik: Vec<f64> = draws.iter().map(|d| fm_log_likelihood(&d.params, data)).collect();
    let est = harmonic_mean_from_loglik(&log_lik)?;
    let neg: Vec<f64> = log_lik.iter().map(|&l| -l).collect();
    Ok(EvidenceEstimate::new(EstimatorId::HarmonicMean, est, Some(log_mean_exp_se(&neg)), started)
        .with("T", cfg.t as f64)
        .with("burnin", cfg.burnin as f64)
        .with("K", k as f64))
}

/// One sequential imputation of the allocations. Returns the log importance
/// weight.
pub(crate) fn sis_replicate<R: Rng + ?Sized>(
    data: &[f64],
    alpha: &[f64],
    table: &PredictiveTable,
    stats: &mut [ClusterSuffStats],
    logits: &mut [f64],
    rng: &mut R,
) -> f64 {
    let k = alpha.len();
    let alpha_total: f64 = alpha.iter().sum();
    stats.iter_mut().for_each(|s| *s = ClusterSuffStats::empty());
    let mut log_w = 0.0;
    for (i, &y) in data.iter().enumerate() {
        let log_denom = (i as f64 + alpha_total).ln();
        let mut max = f64::NEG_INFINITY;
        for j in 0..k {
            logits[j] = table.log_ratio(&stats[j], y) + (stats[j].n() as f64 + alpha[j]).ln() - log_denom;
            max = max.max(logits[j]);
        }
        log_w += log_sum_exp(logits);
        let z = sample_log_categorical(logits, max, rng);
        stats[z].add(y);
    }
    log_w
}

/// Sequential importance sampling over allocations with the collapsed
/// predictive as proposal; `T` independent replicates.
pub fn sis_evidence(data: &[f64], k: usize, prior: &NIGPrior, alpha: &[f64], t: usize, seed: u64) -> Result<EvidenceEstimate> {
    let started = Instant::now();
    prior.validate()?;
    check_alpha(alpha, k)?;
    if t < 2 {
        return Err(EvidenceError::invalid("SIS needs T >= 2"));
    }
    let log_w = sis_log_weights(data, k, prior, alpha, t, seed);
    let est = log_mean_exp(&log_w);
    Ok(EvidenceEstimate::new(EstimatorId::Sis, est, Some(log_mean_exp_se(&log_w)), started)
        .with("T", t as f64)
        .with("K", k as f64))
}

/// Replicate log weights of [`sis_evidence`], in replicate order.
pub fn sis_log_weights(data: &[f64], k: usize, prior: &NIGPrior, alpha: &[f64], t: usize, seed: u64) -> Vec<f64> {
    let table = PredictiveTable::new(prior, data.len());
    (0..t)
        .into_par_iter()
        .map_init(
            || (vec![ClusterSuffStats::empty(); k], vec![0.0; k]),
            |(stats, logits), i| {
                let mut rng = substream(seed, i as u64);
                sis_replicate(data, alpha, &table, stats, logits, &mut rng)
            },
        )
        .collect()
}
