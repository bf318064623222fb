//! DPM evidence: Chib's identity in `M` with a sequential-imputation
//! likelihood ordinate, and reverse logistic regression.

use super::{log_prior_counts, m_conditional_log_density, run_dpm_chain, sample_urn, sis_impute_with, sis_log_proposal_with, GammaPrior};
use crate::conjugate::{cluster_log_marginal_unchecked, ClusterSuffStats, NIGPrior, PredictiveTable};
use crate::error::{EvidenceError, Result};
use crate::estimate::{EstimatorId, EvidenceEstimate};
use crate::fm::bridge::relative_error;
use crate::mcstats::{ess_batch_means, log_mean_exp, log_mean_exp_nw_se, log_mean_exp_se, mean};
use crate::partitions::canonical_labels;
use crate::rng::substream;
use rayon::prelude::*;
use std::time::Instant;

/// How the evaluation point `M*` is chosen from the chain.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MStarRule {
    PosteriorMean,
    PosteriorMedian,
    Fixed(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChibDpmConfig {
    /// Gibbs draws kept after burn-in.
    pub t1: usize,
    pub burnin: usize,
    /// Sequential imputations for the likelihood ordinate.
    pub t2: usize,
    pub m_star: MStarRule,
    pub seed: u64,
    pub nw_lag: Option<usize>,
}

impl ChibDpmConfig {
    pub fn new(t1: usize, burnin: usize, t2: usize, seed: u64) -> Self {
        ChibDpmConfig { t1, burnin, t2, m_star: MStarRule::PosteriorMean, seed, nw_lag: None }
    }
}

fn check(data: &[f64], prior: &NIGPrior, gprior: &GammaPrior, t1: usize, t2: usize) -> Result<()> {
    prior.validate()?;
    gprior.validate()?;
    if data.is_empty() {
        return Err(EvidenceError::invalid("DPM estimators need data"));
    }
    if t1 < 100 || t2 < 100 {
        return Err(EvidenceError::invalid(format!("T1 and T2 must be at least 100, got {t1} and {t2}")));
    }
    Ok(())
}

/// `log L(y | M*) + log π(M*) - log π̂(M* | y)`.
pub fn chib_dpm(data: &[f64], prior: &NIGPrior, gprior: &GammaPrior, cfg: &ChibDpmConfig) -> Result<EvidenceEstimate> {
    let started = Instant::now();
    check(data, prior, gprior, cfg.t1, cfg.t2)?;
    let n = data.len();
    let mut rng = substream(cfg.seed, 0);
    let draws = run_dpm_chain(data, prior, gprior, cfg.t1, cfg.burnin, &mut rng)?;
    let m_star = match cfg.m_star {
        MStarRule::PosteriorMean => mean(&draws.iter().map(|d| d.m).collect::<Vec<_>>()),
        MStarRule::PosteriorMedian => {
            let mut ms: Vec<f64> = draws.iter().map(|d| d.m).collect();
            ms.sort_by(f64::total_cmp);
            ms[ms.len() / 2]
        }
        MStarRule::Fixed(m) => m,
    };
    if !(m_star.is_finite() && m_star > 0.0) {
        return Err(EvidenceError::invalid(format!("M* must be > 0, got {m_star}")));
    }
    let ordinates: Vec<f64> = draws.iter().map(|d| m_conditional_log_density(m_star, d.eta, d.k_plus, n, gprior)).collect();
    let log_post = log_mean_exp(&ordinates);
    if !log_post.is_finite() {
        return Err(EvidenceError::DegenerateEstimate(format!(
            "posterior ordinate of M at M* = {m_star} underflows; choose a different M*"
        )));
    }
    let table = PredictiveTable::new(prior, n);
    let log_w: Vec<f64> = (0..cfg.t2)
        .into_par_iter()
        .map(|i| sis_impute_with(data, m_star, &table, &mut substream(cfg.seed, 1 + i as u64)).log_weight)
        .collect();
    let log_lik = log_mean_exp(&log_w);
    let se_post = log_mean_exp_nw_se(&ordinates, cfg.nw_lag)?;
    let se_lik = log_mean_exp_se(&log_w);
    let est = log_lik + gprior.log_density(m_star) - log_post;
    Ok(EvidenceEstimate::new(EstimatorId::ChibDpm, est, Some((se_post * se_post + se_lik * se_lik).sqrt()), started)
        .with("T1", cfg.t1 as f64)
        .with("burnin", cfg.burnin as f64)
        .with("T2", cfg.t2 as f64)
        .with("M_star", m_star)
        .with("gamma_a", gprior.a)
        .with("gamma_b", gprior.b))
}

/// Which distribution supplies the first sample set of RLR.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Adversarial {
    /// `M ~ π(M)`, `z` by sequential imputation.
    Sis,
    /// `M ~ π(M)`, `z` from the Pólya urn.
    Prior,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SampleSource {
    Adversarial,
    Posterior,
}

/// Both log densities at one draw: the normalised adversarial density and
/// the unnormalised posterior.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RlrSample {
    pub source: SampleSource,
    pub log_pi1: f64,
    pub log_pi2_tilde: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RlrConfig {
    /// Adversarial draws.
    pub t1: usize,
    /// Posterior draws after burn-in.
    pub t2: usize,
    pub burnin: usize,
    pub adversarial: Adversarial,
    pub seed: u64,
}

impl RlrConfig {
    pub fn new(t1: usize, t2: usize, burnin: usize, adversarial: Adversarial, seed: u64) -> Self {
        RlrConfig { t1, t2, burnin, adversarial, seed }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RlrSolution {
    /// `η = log c2`, the log normaliser of the unnormalised posterior.
    pub log_evidence: f64,
    pub se_log: f64,
    /// The two importance-sampling estimates used for the initial bracket.
    pub is_adversarial: f64,
    pub is_posterior: f64,
    pub iterations: usize,
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Maximise the log quasi-likelihood of the two-population logistic
/// regression over `η = log c2`. `n2_eff` enters only the standard error;
/// `bracket` overrides the importance-sampling endpoints.
pub fn rlr_solve(samples: &[RlrSample], n2_eff: Option<f64>, bracket: Option<(f64, f64)>) -> Result<RlrSolution> {
    let (mut d1, mut d2) = (Vec::new(), Vec::new());
    for s in samples {
        if !(s.log_pi1.is_finite() && s.log_pi2_tilde.is_finite()) {
            return Err(EvidenceError::invalid("RLR densities must be finite"));
        }
        let l = s.log_pi2_tilde - s.log_pi1;
        match s.source {
            SampleSource::Adversarial => d1.push(l),
            SampleSource::Posterior => d2.push(l),
        }
    }
    if d1.is_empty() || d2.is_empty() {
        return Err(EvidenceError::invalid("RLR needs samples from both populations"));
    }
    let (t1, t2) = (d1.len() as f64, d2.len() as f64);
    let offset = (t2 / t1).ln();
    let grad = |eta: f64| -> f64 {
        let a: f64 = d1.iter().map(|&l| sigmoid(l - eta + offset)).sum();
        let b: f64 = d2.iter().map(|&l| sigmoid(-(l - eta + offset))).sum();
        a - b
    };
    let curv = |eta: f64| -> f64 {
        d1.iter()
            .chain(&d2)
            .map(|&l| {
                let s = sigmoid(l - eta + offset);
                s * (1.0 - s)
            })
            .sum()
    };
    let is_adversarial = log_mean_exp(&d1);
    let neg: Vec<f64> = d2.iter().map(|&l| -l).collect();
    let is_posterior = -log_mean_exp(&neg);
    let bracket_err = || EvidenceError::Bracket { is_adversarial, is_posterior };
    let (mut lo, mut hi) = bracket.unwrap_or((is_adversarial.min(is_posterior), is_adversarial.max(is_posterior)));
    if !(lo.is_finite() && hi.is_finite()) || lo > hi {
        return Err(bracket_err());
    }
    // ℓ' is decreasing in η; widen until it changes sign.
    let mut step = 1.0;
    let mut tries = 0;
    while grad(lo) < 0.0 {
        lo -= step;
        step *= 2.0;
        tries += 1;
        if tries > 60 {
            return Err(bracket_err());
        }
    }
    step = 1.0;
    tries = 0;
    while grad(hi) > 0.0 {
        hi += step;
        step *= 2.0;
        tries += 1;
        if tries > 60 {
            return Err(bracket_err());
        }
    }
    let mut x = 0.5 * (lo + hi);
    let mut iterations = 0;
    for it in 1..=200 {
        iterations = it;
        let g = grad(x);
        if g == 0.0 {
            break;
        }
        if g > 0.0 {
            lo = x;
        } else {
            hi = x;
        }
        let h = curv(x);
        let mut next = if h > 0.0 { x + g / h } else { f64::NAN };
        if !(next > lo && next < hi) {
            next = 0.5 * (lo + hi);
        }
        let done = (next - x).abs() <= 1e-13 * x.abs().max(1.0) || hi - lo <= 1e-14 * x.abs().max(1.0);
        x = next;
        if done {
            break;
        }
    }
    let n2 = n2_eff.unwrap_or(t2);
    let ln_s1 = (t1 / (t1 + n2)).ln();
    let ln_s2 = (n2 / (t1 + n2)).ln();
    let se_log = relative_error(&d1, &d2, n2, x, ln_s1, ln_s2);
    Ok(RlrSolution { log_evidence: x, se_log, is_adversarial, is_posterior, iterations })
}

fn canonical_loglik(canon: &[u32], data: &[f64], prior: &NIGPrior, stats: &mut Vec<ClusterSuffStats>) -> (f64, Vec<usize>) {
    let k = canon.iter().max().map_or(0, |&m| m as usize + 1);
    stats.clear();
    stats.resize(k, ClusterSuffStats::empty());
    for (&z, &y) in canon.iter().zip(data) {
        stats[z as usize].add(y);
    }
    let ll = stats.iter().map(|s| cluster_log_marginal_unchecked(s, prior)).sum();
    (ll, stats.iter().map(|s| s.n()).collect())
}

/// Reverse logistic regression estimate of the DPM evidence.
pub fn rlr_evidence(data: &[f64], prior: &NIGPrior, gprior: &GammaPrior, cfg: &RlrConfig) -> Result<EvidenceEstimate> {
    let started = Instant::now();
    let (samples, n2_eff) = rlr_samples(data, prior, gprior, cfg)?;
    let sol = rlr_solve(&samples, Some(n2_eff), None)?;
    let id = match cfg.adversarial {
        Adversarial::Sis => EstimatorId::RlrSis,
        Adversarial::Prior => EstimatorId::RlrPrior,
    };
    Ok(EvidenceEstimate::new(id, sol.log_evidence, Some(sol.se_log), started)
        .with("T1", cfg.t1 as f64)
        .with("T2", cfg.t2 as f64)
        .with("burnin", cfg.burnin as f64)
        .with("N2_eff", n2_eff)
        .with("gamma_a", gprior.a)
        .with("gamma_b", gprior.b))
}

/// Draw both sample sets and evaluate both densities on each. Returns the
/// samples and the batch-means ESS of the posterior-side log ratios.
pub fn rlr_samples(data: &[f64], prior: &NIGPrior, gprior: &GammaPrior, cfg: &RlrConfig) -> Result<(Vec<RlrSample>, f64)> {
    check(data, prior, gprior, cfg.t1, cfg.t2)?;
    let n = data.len();
    let table = PredictiveTable::new(prior, n);
    let mode = cfg.adversarial;
    let adversarial: Vec<RlrSample> = (0..cfg.t1)
        .into_par_iter()
        .map_init(Vec::new, |stats, i| {
            let mut rng = substream(cfg.seed, 1 + i as u64);
            let m = gprior.sample(&mut rng).max(f64::MIN_POSITIVE);
            let log_pm = gprior.log_density(m);
            let (labels, log_q) = match mode {
                Adversarial::Sis => {
                    let s = sis_impute_with(data, m, &table, &mut rng);
                    (s.alloc.into_labels(), Some(s.log_proposal))
                }
                Adversarial::Prior => (sample_urn(n, m, &mut rng).into_labels(), None),
            };
            let canon = canonical_labels(&labels);
            let (ll, counts) = canonical_loglik(&canon, data, prior, stats);
            let log_prior_z = log_prior_counts(&counts, n, m);
            let log_pi1 = log_pm + log_q.unwrap_or(log_prior_z);
            RlrSample { source: SampleSource::Adversarial, log_pi1, log_pi2_tilde: log_pm + log_prior_z + ll }
        })
        .collect();

    let mut rng = substream(cfg.seed, 0);
    let draws = run_dpm_chain(data, prior, gprior, cfg.t2, cfg.burnin, &mut rng)?;
    let posterior: Vec<RlrSample> = draws
        .par_iter()
        .map_init(Vec::new, |stats, d| {
            let log_pm = gprior.log_density(d.m);
            let (ll, counts) = canonical_loglik(&d.labels, data, prior, stats);
            let log_prior_z = log_prior_counts(&counts, n, d.m);
            let log_pi1 = log_pm
                + match mode {
                    Adversarial::Sis => sis_log_proposal_with(&d.labels, data, d.m, &table),
                    Adversarial::Prior => log_prior_z,
                };
            RlrSample { source: SampleSource::Posterior, log_pi1, log_pi2_tilde: log_pm + log_prior_z + ll }
        })
        .collect();
    let ratios: Vec<f64> = posterior.iter().map(|s| s.log_pi2_tilde - s.log_pi1).collect();
    let n2_eff = ess_batch_means(&ratios)?;
    let mut samples = adversarial;
    samples.extend(posterior);
    Ok((samples, n2_eff))
}
