//! Bridge sampling with a permutation-symmetrised mixture of conditional
//! posteriors as importance density.

use super::chib::{all_permutations, OrdinateKernel, MAX_FULL_PERMUTATION_K};
use super::{check_alpha, fm_log_likelihood, fm_log_prior, run_gibbs_chain, sample_conditional_posterior, ChainInit, FMParams};
use crate::conjugate::{ClusterSuffStats, NIGPrior};
use crate::error::{EvidenceError, Result};
use crate::estimate::{EstimatorId, EvidenceEstimate};
use crate::mcstats::{ess_batch_means, log_add_exp, log_mean_exp, log_sum_exp, mean, sample_variance};
use crate::rng::substream;
use rand::Rng;
use rayon::prelude::*;
use std::time::Instant;

#[derive(Debug, Clone, PartialEq)]
pub struct BridgeConfig {
    /// Allocations kept to build the importance density.
    pub t0: usize,
    /// Draws from the importance density.
    pub t1: usize,
    /// Posterior draws after burn-in.
    pub t2: usize,
    pub burnin: usize,
    pub tol: f64,
    pub max_iter: usize,
    pub seed: u64,
    /// Starting value of the iteration; the IS estimate when `None`.
    pub init_log_evidence: Option<f64>,
    pub init: ChainInit,
}

impl BridgeConfig {
    pub fn new(t0: usize, t1: usize, t2: usize, burnin: usize, seed: u64) -> Self {
        BridgeConfig { t0, t1, t2, burnin, tol: 1e-10, max_iter: 500, seed, init_log_evidence: None, init: ChainInit::default() }
    }
}

/// The importance density `q(ϑ) = 1/(K! T0) Σ_s Σ_t π(ϑ^s | z_t, y)`.
struct ImportanceDensity<'a> {
    stats: Vec<Vec<ClusterSuffStats>>,
    perms: Vec<Vec<usize>>,
    prior: &'a NIGPrior,
    alpha: &'a [f64],
    n: usize,
}

impl ImportanceDensity<'_> {
    fn log_density(&self, params: &FMParams) -> f64 {
        let kernel = OrdinateKernel::new(params, self.prior, self.alpha, self.n);
        let mut mat = Vec::new();
        let mut terms = Vec::with_capacity(self.stats.len() * self.perms.len());
        for s in &self.stats {
            kernel.matrix(s, &mut mat);
            terms.extend(self.perms.iter().map(|p| kernel.eval(&mat, p)));
        }
        log_sum_exp(&terms) - (terms.len() as f64).ln()
    }

    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> FMParams {
        let t = rng.random_range(0..self.stats.len());
        let s = rng.random_range(0..self.perms.len());
        sample_conditional_posterior(&self.stats[t], self.prior, self.alpha, rng).permuted(&self.perms[s])
    }
}

/// Result of the bridge iteration on precomputed log ratios.
#[derive(Debug, Clone, PartialEq)]
pub struct BridgeSolution {
    pub log_evidence: f64,
    pub se_log: f64,
    pub iterations: usize,
    pub trace: Vec<f64>,
}

/// Iterate the optimal bridge identity on `l = log p̃(ϑ) - log q(ϑ)`
/// evaluated at importance draws (`l_q`) and posterior draws (`l_post`).
/// `n2_eff` replaces the posterior sample size in the weights.
pub fn bridge_iterate(l_q: &[f64], l_post: &[f64], n2_eff: f64, init: f64, tol: f64, max_iter: usize) -> Result<BridgeSolution> {
    if l_q.is_empty() || l_post.is_empty() {
        return Err(EvidenceError::invalid("bridge sampling needs draws on both sides"));
    }
    let t1 = l_q.len() as f64;
    let ln_s1 = (t1 / (t1 + n2_eff)).ln();
    let ln_s2 = (n2_eff / (t1 + n2_eff)).ln();
    let mut cur = init;
    let mut trace = vec![cur];
    let mut num = vec![0.0; l_q.len()];
    let mut den = vec![0.0; l_post.len()];
    for it in 1..=max_iter {
        for (o, &l) in num.iter_mut().zip(l_q) {
            *o = l - log_add_exp(ln_s1 + cur, ln_s2 + l);
        }
        for (o, &l) in den.iter_mut().zip(l_post) {
            *o = -log_add_exp(ln_s1 + cur, ln_s2 + l);
        }
        let next = log_mean_exp(&num) - log_mean_exp(&den);
        if !next.is_finite() {
            trace.push(next);
            return Err(EvidenceError::NoConvergence { iterations: it, trace });
        }
        trace.push(next);
        let delta = (next - cur).abs();
        cur = next;
        if delta < tol {
            let se_log = relative_error(l_q, l_post, n2_eff, cur, ln_s1, ln_s2);
            return Ok(BridgeSolution { log_evidence: cur, se_log, iterations: it, trace });
        }
    }
    Err(EvidenceError::NoConvergence { iterations: max_iter, trace })
}

/// Relative mean squared error of the bridge estimate; on the log scale it
/// is the standard error.
pub(crate) fn relative_error(l_q: &[f64], l_post: &[f64], n2_eff: f64, log_m: f64, ln_s1: f64, ln_s2: f64) -> f64 {
    let f1: Vec<f64> = l_q
        .iter()
        .map(|&l| (l - log_m - log_add_exp(ln_s1, ln_s2 + l - log_m)).exp())
        .collect();
    let f2: Vec<f64> = l_post.iter().map(|&l| (-log_add_exp(ln_s1, ln_s2 + l - log_m)).exp()).collect();
    let term = |f: &[f64], n: f64| {
        let m = mean(f);
        if f.len() < 2 || m == 0.0 {
            0.0
        } else {
            sample_variance(f) / (n * m * m)
        }
    };
    (term(&f1, l_q.len() as f64) + term(&f2, n2_eff)).sqrt()
}

/// Bridge sampling estimator.
pub fn bridge_sampling(data: &[f64], k: usize, prior: &NIGPrior, alpha: &[f64], cfg: &BridgeConfig) -> Result<EvidenceEstimate> {
    let started = Instant::now();
    prior.validate()?;
    check_alpha(alpha, k)?;
    if k > MAX_FULL_PERMUTATION_K {
        return Err(EvidenceError::invalid(format!(
            "bridge sampling symmetrises q over all K! relabellings; refused for K > {MAX_FULL_PERMUTATION_K}"
        )));
    }
    if cfg.t0 == 0 || cfg.t1 == 0 || cfg.t2 < 16 {
        return Err(EvidenceError::invalid("bridge sampling needs T0 >= 1, T1 >= 1 and T2 >= 16"));
    }
    let mut rng = substream(cfg.seed, 0);
    let draws = run_gibbs_chain(data, k, prior, alpha, cfg.t2, cfg.burnin, &cfg.init, &mut rng)?;
    let stats = (0..cfg.t0).map(|_| draws[rng.random_range(0..draws.len())].stats.clone()).collect();
    let q = ImportanceDensity { stats, perms: all_permutations(k), prior, alpha, n: data.len() };
    let log_target = |p: &FMParams| fm_log_likelihood(p, data) + fm_log_prior(p, prior, alpha);

    let l_q: Vec<f64> = (0..cfg.t1)
        .into_par_iter()
        .map(|i| {
            let mut r = substream(cfg.seed, 1 + i as u64);
            let p = q.sample(&mut r);
            log_target(&p) - q.log_density(&p)
        })
        .collect();
    let l_post: Vec<f64> = draws.par_iter().map(|d| log_target(&d.params) - q.log_density(&d.params)).collect();

    let n2_eff = ess_batch_means(&l_post)?;
    let is_estimate = log_mean_exp(&l_q);
    let init = cfg.init_log_evidence.unwrap_or(is_estimate);
    let sol = bridge_iterate(&l_q, &l_post, n2_eff, init, cfg.tol, cfg.max_iter)?;
    Ok(EvidenceEstimate::new(EstimatorId::BridgeSampling, sol.log_evidence, Some(sol.se_log), started)
        .with("T0", cfg.t0 as f64)
        .with("T1", cfg.t1 as f64)
        .with("T2", cfg.t2 as f64)
        .with("burnin", cfg.burnin as f64)
        .with("K", k as f64)
        .with("N2_eff", n2_eff)
        .with("iterations", sol.iterations as f64))
}
