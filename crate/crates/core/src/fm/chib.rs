//! Chib-type estimators for finite mixtures: the original Rao-Blackwell
//! ordinate, its permutation-symmetrised variants, and the partition-based
//! estimator that works on canonical partitions of the Gibbs output.

use super::{fm_log_augmented_posterior, fm_log_likelihood, fm_log_prior, run_gibbs_chain, ChainDraw, ChainInit, FMParams};
use crate::conjugate::{ClusterSuffStats, NIGPrior};
use crate::error::{EvidenceError, Result};
use crate::estimate::{EstimatorId, EvidenceEstimate};
use crate::mcstats::{default_nw_lag, delta_method_se_log, log_mean_exp, log_mean_exp_nw_se, log_sum_exp, newey_west_variance};
use crate::partitions::{canonical_labels, is_symmetric, log_allocation_prior_counts, log_falling_factorial, Allocation};
use crate::rng::rng_from_seed;
use crate::conjugate::cluster_log_marginal_unchecked;
use rand::seq::index;
use statrs::function::gamma::ln_gamma;
use std::collections::HashMap;
use std::time::Instant;

/// Largest `K` for which all `K!` relabellings are enumerated.
pub const MAX_FULL_PERMUTATION_K: usize = 6;

/// Occupancy needed before the partition ordinate is trusted.
pub const MIN_PARTITION_VISITS: usize = 10;

#[derive(Debug, Clone, PartialEq)]
pub struct ChibConfig {
    /// Stored sweeps after burn-in.
    pub t: usize,
    pub burnin: usize,
    pub seed: u64,
    /// Newey–West lag; `⌊T^{1/3}⌋` when `None`.
    pub nw_lag: Option<usize>,
    pub init: ChainInit,
}

impl ChibConfig {
    pub fn new(t: usize, burnin: usize, seed: u64) -> Self {
        ChibConfig { t, burnin, seed, nw_lag: None, init: ChainInit::default() }
    }
}

/// How the Rao-Blackwell ordinate treats label switching.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PermutationMode {
    /// Average over the chain as sampled.
    Identity,
    /// Average over all `K!` relabellings of every draw.
    Full,
    /// Average over `R` distinct relabellings drawn uniformly at random
    /// (all of them when `R ≥ K!`).
    Random(usize),
}

/// All permutations of `0..k` in lexicographic order.
pub fn all_permutations(k: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut p: Vec<usize> = (0..k).collect();
    loop {
        out.push(p.clone());
        // next lexicographic permutation
        let Some(i) = (1..k).rev().find(|&i| p[i - 1] < p[i]) else { break };
        let j = (i..k).rev().find(|&j| p[j] > p[i - 1]).unwrap();
        p.swap(i - 1, j);
        p[i..].reverse();
    }
    out
}

fn factorial(k: usize) -> u64 {
    (1..=k as u64).product()
}

/// Permutation of rank `r` (lexicographic) via the factorial number system.
pub fn unrank_permutation(k: usize, mut r: u64) -> Vec<usize> {
    let mut pool: Vec<usize> = (0..k).collect();
    let mut out = Vec::with_capacity(k);
    for i in (0..k).rev() {
        let f = factorial(i);
        let idx = (r / f) as usize;
        r %= f;
        out.push(pool.remove(idx));
    }
    out
}

/// Per-draw matrix `m[c][j]`: contribution of parameter slot `c` when it is
/// paired with the statistics of cluster `j`. A relabelling `s` (cluster `j`
/// takes label `s[j]`) has ordinate `const + Σ_j m[s[j]][j]`.
pub(crate) struct OrdinateKernel<'a> {
    params0: &'a FMParams,
    prior: &'a NIGPrior,
    alpha: &'a [f64],
    log_w0: Vec<f64>,
    lgamma_total: f64,
}

impl<'a> OrdinateKernel<'a> {
    pub(crate) fn new(params0: &'a FMParams, prior: &'a NIGPrior, alpha: &'a [f64], n: usize) -> Self {
        let total: f64 = alpha.iter().sum();
        OrdinateKernel {
            params0,
            prior,
            alpha,
            log_w0: params0.weights.iter().map(|w| w.ln()).collect(),
            lgamma_total: ln_gamma(total + n as f64),
        }
    }

    pub(crate) fn matrix(&self, stats: &[ClusterSuffStats], m: &mut Vec<f64>) {
        let k = stats.len();
        m.clear();
        m.resize(k * k, 0.0);
        for (j, s) in stats.iter().enumerate() {
            let post = self.prior.posterior(s);
            let nj = s.n() as f64;
            for c in 0..k {
                let a = self.alpha[c] + nj;
                m[c * k + j] = -ln_gamma(a) + (a - 1.0) * self.log_w0[c]
                    + post.log_density(self.params0.means[c], self.params0.variances[c]);
            }
        }
    }

    #[inline]
    pub(crate) fn eval(&self, m: &[f64], perm: &[usize]) -> f64 {
        let k = perm.len();
        let mut v = self.lgamma_total;
        for (j, &c) in perm.iter().enumerate() {
            v += m[c * k + j];
        }
        v
    }
}

fn select_map_point(draws: &[ChainDraw], data: &[f64], prior: &NIGPrior, alpha: &[f64]) -> usize {
    let mut best = (f64::NEG_INFINITY, 0);
    for (t, d) in draws.iter().enumerate() {
        let v = fm_log_augmented_posterior(&d.params, &d.allocation(), data, prior, alpha);
        if v > best.0 {
            best = (v, t);
        }
    }
    best.1
}

fn check_inputs(data: &[f64], k: usize, prior: &NIGPrior, alpha: &[f64], cfg: &ChibConfig) -> Result<()> {
    prior.validate()?;
    if alpha.len() != k {
        return Err(EvidenceError::invalid("alpha length must equal K"));
    }
    if cfg.t < 100 {
        return Err(EvidenceError::invalid(format!("need at least 100 post-burn-in draws, got {}", cfg.t)));
    }
    if data.is_empty() {
        return Err(EvidenceError::invalid("Chib estimators need data"));
    }
    Ok(())
}

/// Chib's estimator with the given ordinate mode.
pub fn chib_with_mode(
    data: &[f64],
    k: usize,
    prior: &NIGPrior,
    alpha: &[f64],
    cfg: &ChibConfig,
    mode: PermutationMode,
) -> Result<EvidenceEstimate> {
    let started = Instant::now();
    check_inputs(data, k, prior, alpha, cfg)?;
    match mode {
        PermutationMode::Full if k > MAX_FULL_PERMUTATION_K => {
            return Err(EvidenceError::invalid(format!(
                "full permutation ordinate needs K! = {} evaluations per draw (O(T·K!)); refused for K > {MAX_FULL_PERMUTATION_K}, use a random subset",
                factorial(k)
            )))
        }
        PermutationMode::Random(0) => return Err(EvidenceError::invalid("random permutation mode needs R >= 1")),
        PermutationMode::Random(_) if k > 20 => return Err(EvidenceError::invalid("random permutation mode supports K <= 20")),
        _ => {}
    }
    let mut rng = rng_from_seed(cfg.seed);
    let draws = run_gibbs_chain(data, k, prior, alpha, cfg.t, cfg.burnin, &cfg.init, &mut rng)?;
    let map = select_map_point(&draws, data, prior, alpha);
    let params0 = draws[map].params.clone();

    let perms: Vec<Vec<usize>> = match mode {
        PermutationMode::Identity => vec![(0..k).collect()],
        PermutationMode::Full => all_permutations(k),
        PermutationMode::Random(r) => {
            let total = factorial(k);
            if r as u64 >= total {
                all_permutations(k)
            } else {
                let mut ranks: Vec<u64> =
                    index::sample(&mut rng, total as usize, r).into_iter().map(|i| i as u64).collect();
                ranks.sort_unstable();
                ranks.into_iter().map(|rk| unrank_permutation(k, rk)).collect()
            }
        }
    };
    let log_n_perms = (perms.len() as f64).ln();

    let kernel = OrdinateKernel::new(&params0, prior, alpha, data.len());
    let mut mat = Vec::new();
    let mut per_perm = vec![0.0; perms.len()];
    let ordinates: Vec<f64> = draws
        .iter()
        .map(|d| {
            kernel.matrix(&d.stats, &mut mat);
            for (slot, p) in per_perm.iter_mut().zip(&perms) {
                *slot = kernel.eval(&mat, p);
            }
            log_sum_exp(&per_perm) - log_n_perms
        })
        .collect();

    let log_post = log_mean_exp(&ordinates);
    if !log_post.is_finite() {
        return Err(EvidenceError::DegenerateEstimate(
            "posterior ordinate estimate is zero: the chain puts no mass near the MAP point".into(),
        ));
    }
    let numer = fm_log_likelihood(&params0, data) + fm_log_prior(&params0, prior, alpha);
    let se = ordinate_se(&ordinates, cfg.nw_lag)?;

    let id = match mode {
        PermutationMode::Identity => EstimatorId::Chib,
        PermutationMode::Full => EstimatorId::ChibPermutation,
        PermutationMode::Random(_) => EstimatorId::ChibRandomPermutation,
    };
    let mut est = EvidenceEstimate::new(id, numer - log_post, Some(se), started)
        .with("T", cfg.t as f64)
        .with("burnin", cfg.burnin as f64)
        .with("K", k as f64);
    if let PermutationMode::Random(r) = mode {
        est = est.with("R", r as f64);
    }
    Ok(est)
}

/// Delta-method s.e. of `log mean(exp(o_t))` with a Newey–West variance of
/// the autocorrelated terms.
fn ordinate_se(log_terms: &[f64], lag: Option<usize>) -> Result<f64> {
    log_mean_exp_nw_se(log_terms, lag)
}

/// Chib's original estimator (ordinate averaged over the sampled labels).
pub fn chib(data: &[f64], k: usize, prior: &NIGPrior, alpha: &[f64], cfg: &ChibConfig) -> Result<EvidenceEstimate> {
    chib_with_mode(data, k, prior, alpha, cfg, PermutationMode::Identity)
}

/// Permutation-symmetrised Chib estimator, full or random-subset.
pub fn chib_permutation(
    data: &[f64],
    k: usize,
    prior: &NIGPrior,
    alpha: &[f64],
    cfg: &ChibConfig,
    mode: PermutationMode,
) -> Result<EvidenceEstimate> {
    if mode == PermutationMode::Identity {
        return Err(EvidenceError::invalid("chib_permutation needs Full or Random mode"));
    }
    chib_with_mode(data, k, prior, alpha, cfg, mode)
}

/// Summary of a canonical-partition chain.
#[derive(Debug, Clone)]
pub struct PartitionChainSummary {
    /// Distinct canonical partitions in order of first visit.
    pub partitions: Vec<Vec<u32>>,
    pub visits: Vec<usize>,
    /// Index into `partitions` for each draw.
    pub trace: Vec<u32>,
}

impl PartitionChainSummary {
    pub fn from_label_draws<'a>(draws: impl IntoIterator<Item = &'a [u8]>) -> Self {
        let mut index: HashMap<Vec<u32>, u32> = HashMap::new();
        let mut partitions = Vec::new();
        let mut visits = Vec::new();
        let mut trace = Vec::new();
        for labels in draws {
            let wide: Vec<usize> = labels.iter().map(|&l| l as usize).collect();
            let canon = canonical_labels(&wide);
            let id = *index.entry(canon.clone()).or_insert_with(|| {
                partitions.push(canon);
                visits.push(0);
                (partitions.len() - 1) as u32
            });
            visits[id as usize] += 1;
            trace.push(id);
        }
        PartitionChainSummary { partitions, visits, trace }
    }
}

/// `log p(y | C) + log π_K(C)` for canonical labels under budget `k`.
pub(crate) fn log_partition_score(canon: &[u32], data: &[f64], k: usize, prior: &NIGPrior, alpha: &[f64]) -> f64 {
    let blocks = canon.iter().map(|&l| l as usize + 1).max().unwrap_or(0);
    let mut stats = vec![ClusterSuffStats::empty(); k];
    for (&l, &y) in canon.iter().zip(data) {
        stats[l as usize].add(y);
    }
    let counts: Vec<usize> = stats.iter().map(|s| s.n()).collect();
    let lik: f64 = stats.iter().map(|s| cluster_log_marginal_unchecked(s, prior)).sum();
    lik + log_falling_factorial(k, blocks) + log_allocation_prior_counts(&counts, alpha)
}

/// Partition-based Chib estimator: the identity applied at the best visited
/// canonical partition, with the posterior partition probability estimated
/// by its visit frequency.
pub fn chib_partition(data: &[f64], k: usize, prior: &NIGPrior, alpha: &[f64], cfg: &ChibConfig) -> Result<EvidenceEstimate> {
    let started = Instant::now();
    check_inputs(data, k, prior, alpha, cfg)?;
    if !is_symmetric(alpha) {
        return Err(EvidenceError::AsymmetricAlpha(alpha.to_vec()));
    }
    let mut rng = rng_from_seed(cfg.seed);
    let draws = run_gibbs_chain(data, k, prior, alpha, cfg.t, cfg.burnin, &cfg.init, &mut rng)?;
    let summary = PartitionChainSummary::from_label_draws(draws.iter().map(|d| d.labels.as_slice()));
    partition_estimate_from_summary(&summary, data, k, prior, alpha, cfg.nw_lag, started, cfg)
}

#[allow(clippy::too_many_arguments)]
fn partition_estimate_from_summary(
    summary: &PartitionChainSummary,
    data: &[f64],
    k: usize,
    prior: &NIGPrior,
    alpha: &[f64],
    nw_lag: Option<usize>,
    started: Instant,
    cfg: &ChibConfig,
) -> Result<EvidenceEstimate> {
    // First-visit order makes ties resolve to the earliest partition.
    let mut best = (f64::NEG_INFINITY, 0usize);
    for (i, canon) in summary.partitions.iter().enumerate() {
        let score = log_partition_score(canon, data, k, prior, alpha);
        if score > best.0 {
            best = (score, i);
        }
    }
    let (score, c0) = best;
    let visits = summary.visits[c0];
    if visits < MIN_PARTITION_VISITS {
        return Err(EvidenceError::InsufficientOccupancy { visits, required: MIN_PARTITION_VISITS });
    }
    let t = summary.trace.len();
    let p_hat = visits as f64 / t as f64;
    let indicator: Vec<f64> = summary.trace.iter().map(|&id| if id as usize == c0 { 1.0 } else { 0.0 }).collect();
    let q = nw_lag.unwrap_or_else(|| default_nw_lag(t)).min(t - 1);
    let var = newey_west_variance(&indicator, q)?;
    let se = delta_method_se_log(p_hat, var)?;
    Ok(EvidenceEstimate::new(EstimatorId::ChibPartition, score - p_hat.ln(), Some(se), started)
        .with("T", cfg.t as f64)
        .with("burnin", cfg.burnin as f64)
        .with("K", k as f64)
        .with("nw_lag", q as f64)
        .with("reference_visits", visits as f64)
        .with("distinct_partitions", summary.partitions.len() as f64))
}

/// Partition estimator on an externally supplied chain of allocations.
pub fn chib_partition_from_allocations(
    allocations: &[Allocation],
    data: &[f64],
    k: usize,
    prior: &NIGPrior,
    alpha: &[f64],
    nw_lag: Option<usize>,
) -> Result<EvidenceEstimate> {
    let started = Instant::now();
    prior.validate()?;
    if !is_symmetric(alpha) || alpha.len() != k {
        return Err(EvidenceError::AsymmetricAlpha(alpha.to_vec()));
    }
    if allocations.is_empty() {
        return Err(EvidenceError::invalid("empty chain"));
    }
    let labels: Vec<Vec<u8>> = allocations.iter().map(|a| a.labels().iter().map(|&l| l as u8).collect()).collect();
    let summary = PartitionChainSummary::from_label_draws(labels.iter().map(|l| l.as_slice()));
    let cfg = ChibConfig::new(allocations.len(), 0, 0);
    partition_estimate_from_summary(&summary, data, k, prior, alpha, nw_lag, started, &cfg)
}

/// `log π_K(ϑ0 | z, y)` for all relabellings of a draw; used by tests.
pub fn permuted_ordinates(params0: &FMParams, stats: &[ClusterSuffStats], prior: &NIGPrior, alpha: &[f64], n: usize) -> Vec<f64> {
    let k = stats.len();
    let kernel = OrdinateKernel::new(params0, prior, alpha, n);
    let mut m = Vec::new();
    kernel.matrix(stats, &mut m);
    all_permutations(k).iter().map(|p| kernel.eval(&m, p)).collect()
}

