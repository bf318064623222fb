//! Conjugate finite Gaussian mixtures: parameters, likelihood, prior draws,
//! the data-augmentation Gibbs sampler and the Rao-Blackwell ordinate.

pub mod bridge;
pub mod chib;
pub mod evidence;
pub mod smc;

use crate::conjugate::{ClusterSuffStats, NIGPrior, LN_2PI};
use crate::error::{EvidenceError, Result};
use crate::mcstats::log_sum_exp;
use crate::partitions::Allocation;
use rand::Rng;
use rand_distr::{Distribution, Gamma};
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

/// Mixture parameters `ϑ = (μ, σ², ϖ)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FMParams {
    pub means: Vec<f64>,
    pub variances: Vec<f64>,
    pub weights: Vec<f64>,
}

impl FMParams {
    pub fn new(means: Vec<f64>, variances: Vec<f64>, weights: Vec<f64>) -> Result<Self> {
        let p = FMParams { means, variances, weights };
        p.validate()?;
        Ok(p)
    }

    pub fn k(&self) -> usize {
        self.weights.len()
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.weights.len();
        if k == 0 || self.means.len() != k || self.variances.len() != k {
            return Err(EvidenceError::invalid("means, variances and weights must share a positive length"));
        }
        if self.means.iter().any(|m| !m.is_finite()) {
            return Err(EvidenceError::invalid("component means must be finite"));
        }
        if self.variances.iter().any(|&v| !(v.is_finite() && v > 0.0)) {
            return Err(EvidenceError::invalid("component variances must be positive"));
        }
        if self.weights.iter().any(|&w| !(w >= 0.0)) {
            return Err(EvidenceError::invalid("weights must be nonnegative"));
        }
        let s: f64 = self.weights.iter().sum();
        if (s - 1.0).abs() > 1e-12 {
            return Err(EvidenceError::invalid(format!("weights sum to {s}, not 1")));
        }
        Ok(())
    }

    /// Relabel components: component `j` moves to slot `perm[j]`.
    pub fn permuted(&self, perm: &[usize]) -> FMParams {
        let k = self.k();
        let mut out = FMParams { means: vec![0.0; k], variances: vec![0.0; k], weights: vec![0.0; k] };
        for (j, &to) in perm.iter().enumerate() {
            out.means[to] = self.means[j];
            out.variances[perm[j]] = self.variances[j];
            out.weights[perm[j]] = self.weights[j];
        }
        out
    }
}

#[inline]
fn log_normal(y: f64, mean: f64, var: f64) -> f64 {
    let d = y - mean;
    -0.5 * (LN_2PI + var.ln()) - 0.5 * d * d / var
}

/// `Σ_i log Σ_k ϖ_k N(y_i | μ_k, σ_k²)`.
pub fn fm_log_likelihood(params: &FMParams, data: &[f64]) -> f64 {
    let k = params.k();
    let log_w: Vec<f64> = params.weights.iter().map(|w| w.ln()).collect();
    let half_log_var: Vec<f64> = params.variances.iter().map(|v| 0.5 * (LN_2PI + v.ln())).collect();
    let inv_var: Vec<f64> = params.variances.iter().map(|v| 1.0 / v).collect();
    let mut terms = vec![0.0; k];
    let mut total = 0.0;
    for &y in data {
        for j in 0..k {
            let d = y - params.means[j];
            terms[j] = log_w[j] - half_log_var[j] - 0.5 * d * d * inv_var[j];
        }
        total += log_sum_exp(&terms);
    }
    total
}

/// `log Dir(w | α)`; `-inf` outside the simplex interior for α < 1 edge cases.
pub fn log_dirichlet_density(weights: &[f64], alpha: &[f64]) -> f64 {
    let total: f64 = alpha.iter().sum();
    let mut v = ln_gamma(total);
    for (&w, &a) in weights.iter().zip(alpha) {
        v += (a - 1.0) * w.ln() - ln_gamma(a);
    }
    v
}

/// `log π_K(ϑ) = log Dir(ϖ | α) + Σ_k log NIG(μ_k, σ_k²)`.
pub fn fm_log_prior(params: &FMParams, prior: &NIGPrior, alpha: &[f64]) -> f64 {
    let mut v = log_dirichlet_density(&params.weights, alpha);
    for j in 0..params.k() {
        v += prior.log_density(params.means[j], params.variances[j]);
    }
    v
}

pub(crate) fn sample_dirichlet<R: Rng + ?Sized>(alpha: &[f64], rng: &mut R) -> Vec<f64> {
    loop {
        let g: Vec<f64> = alpha.iter().map(|&a| Gamma::new(a, 1.0).expect("positive shape").sample(rng)).collect();
        let s: f64 = g.iter().sum();
        if s > 0.0 && s.is_finite() {
            let mut w: Vec<f64> = g.iter().map(|x| x / s).collect();
            // Keep the simplex constraint within 1e-12 after division.
            let drift: f64 = 1.0 - w.iter().sum::<f64>();
            let imax = w.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).map(|(i, _)| i).unwrap();
            w[imax] += drift;
            return w;
        }
    }
}

fn check_alpha(alpha: &[f64], k: usize) -> Result<()> {
    if alpha.len() != k || alpha.iter().any(|&a| !(a.is_finite() && a > 0.0)) {
        return Err(EvidenceError::invalid(format!("alpha must hold {k} positive values")));
    }
    Ok(())
}

/// Draw `ϑ` from the prior: `ϖ ~ Dir(α)`, `σ_k² ~ IG(a0, b0)`,
/// `μ_k | σ_k² ~ N(μ0, σ_k²/λ0)`.
pub fn fm_sample_prior<R: Rng + ?Sized>(k: usize, prior: &NIGPrior, alpha: &[f64], rng: &mut R) -> Result<FMParams> {
    check_alpha(alpha, k)?;
    prior.validate()?;
    Ok(sample_prior_unchecked(k, prior, alpha, rng))
}

pub(crate) fn sample_prior_unchecked<R: Rng + ?Sized>(k: usize, prior: &NIGPrior, alpha: &[f64], rng: &mut R) -> FMParams {
    let weights = sample_dirichlet(alpha, rng);
    let mut means = Vec::with_capacity(k);
    let mut variances = Vec::with_capacity(k);
    for _ in 0..k {
        let (m, v) = prior.sample(rng);
        means.push(m);
        variances.push(v);
    }
    FMParams { means, variances, weights }
}

/// Draw `ϑ | z, y` from its conditional posterior (empty clusters from the
/// prior).
pub fn sample_conditional_posterior<R: Rng + ?Sized>(
    stats: &[ClusterSuffStats],
    prior: &NIGPrior,
    alpha: &[f64],
    rng: &mut R,
) -> FMParams {
    let post_alpha: Vec<f64> = stats.iter().zip(alpha).map(|(s, &a)| a + s.n() as f64).collect();
    let weights = sample_dirichlet(&post_alpha, rng);
    let mut means = Vec::with_capacity(stats.len());
    let mut variances = Vec::with_capacity(stats.len());
    for s in stats {
        let (m, v) = prior.posterior(s).sample(rng);
        means.push(m);
        variances.push(v);
    }
    FMParams { means, variances, weights }
}

/// State of the data-augmentation Gibbs sampler. The random stream is owned
/// by the caller.
#[derive(Debug, Clone, PartialEq)]
pub struct GibbsState {
    pub params: FMParams,
    pub alloc: Allocation,
}

impl GibbsState {
    pub fn new(params: FMParams, alloc: Allocation) -> Result<Self> {
        if params.k() != alloc.k() {
            return Err(EvidenceError::invalid("parameter and allocation K differ"));
        }
        Ok(GibbsState { params, alloc })
    }
}

/// One Gibbs sweep: `z | ϑ`, then `ϖ | z ~ Dir(α + n)`, then
/// `(μ_k, σ_k²) | z` from the per-cluster NIG posterior.
pub fn fm_gibbs_sweep<R: Rng + ?Sized>(
    state: &mut GibbsState,
    data: &[f64],
    prior: &NIGPrior,
    alpha: &[f64],
    rng: &mut R,
) -> Vec<ClusterSuffStats> {
    let k = state.params.k();
    debug_assert_eq!(state.alloc.len(), data.len());
    let p = &state.params;
    let log_w: Vec<f64> = p.weights.iter().map(|w| w.ln()).collect();
    let half_log_var: Vec<f64> = p.variances.iter().map(|v| 0.5 * v.ln()).collect();
    let inv_var: Vec<f64> = p.variances.iter().map(|v| 1.0 / v).collect();
    let mut logits = vec![0.0; k];
    let mut labels = std::mem::replace(&mut state.alloc, Allocation::from_parts_unchecked(Vec::new(), k)).into_labels();
    for (z, &y) in labels.iter_mut().zip(data) {
        let mut max = f64::NEG_INFINITY;
        for j in 0..k {
            let d = y - p.means[j];
            logits[j] = log_w[j] - half_log_var[j] - 0.5 * d * d * inv_var[j];
            max = max.max(logits[j]);
        }
        *z = sample_log_categorical(&mut logits, max, rng);
    }
    let alloc = Allocation::from_parts_unchecked(labels, k);
    let stats = alloc.cluster_stats(data);
    state.params = sample_conditional_posterior(&stats, prior, alpha, rng);
    state.alloc = alloc;
    stats
}

/// Sample an index from unnormalised log-probabilities; `logits` is
/// overwritten with the linear weights.
#[inline]
pub(crate) fn sample_log_categorical<R: Rng + ?Sized>(logits: &mut [f64], max: f64, rng: &mut R) -> usize {
    let mut total = 0.0;
    for l in logits.iter_mut() {
        *l = (*l - max).exp();
        total += *l;
    }
    sample_linear_categorical(logits, total, rng)
}

#[inline]
pub(crate) fn sample_linear_categorical<R: Rng + ?Sized>(weights: &[f64], total: f64, rng: &mut R) -> usize {
    let mut u = rng.random::<f64>() * total;
    for (i, &w) in weights.iter().enumerate() {
        if u < w {
            return i;
        }
        u -= w;
    }
    weights.iter().rposition(|&w| w > 0.0).unwrap_or(weights.len() - 1)
}

/// `log π_K(ϑ0 | z, y)`: Dirichlet(α + n) density of the weights plus the
/// per-cluster NIG posterior densities (the prior for empty clusters).
pub fn fm_posterior_ordinate(params0: &FMParams, a: &Allocation, data: &[f64], prior: &NIGPrior, alpha: &[f64]) -> Result<f64> {
    if params0.k() != a.k() {
        return Err(EvidenceError::invalid("parameter and allocation K differ"));
    }
    if a.len() != data.len() {
        return Err(EvidenceError::invalid("allocation length does not match data"));
    }
    check_alpha(alpha, a.k())?;
    Ok(ordinate_from_stats(params0, &a.cluster_stats(data), prior, alpha))
}

pub(crate) fn ordinate_from_stats(params0: &FMParams, stats: &[ClusterSuffStats], prior: &NIGPrior, alpha: &[f64]) -> f64 {
    let post_alpha: Vec<f64> = stats.iter().zip(alpha).map(|(s, &a)| a + s.n() as f64).collect();
    let mut v = log_dirichlet_density(&params0.weights, &post_alpha);
    for (j, s) in stats.iter().enumerate() {
        v += prior.posterior(s).log_density(params0.means[j], params0.variances[j]);
    }
    v
}

/// Unnormalised augmented posterior `log p(y | z, ϑ) + log p(z | ϖ) + log π(ϑ)`.
pub fn fm_log_augmented_posterior(params: &FMParams, a: &Allocation, data: &[f64], prior: &NIGPrior, alpha: &[f64]) -> f64 {
    let mut v = fm_log_prior(params, prior, alpha);
    for (&z, &y) in a.labels().iter().zip(data) {
        v += params.weights[z].ln() + log_normal(y, params.means[z], params.variances[z]);
    }
    v
}

/// How a Gibbs chain is started.
#[derive(Debug, Clone, PartialEq, Default)]
pub enum ChainInit {
    /// Sorted data split into `K` equal-count blocks.
    #[default]
    Quantiles,
    /// Parameters drawn from the prior.
    Prior,
    /// A given allocation; parameters drawn from `ϑ | z, y`.
    Allocation(Allocation),
}

/// One stored draw of the Gibbs chain.
#[derive(Debug, Clone)]
pub struct ChainDraw {
    pub params: FMParams,
    pub labels: Vec<u8>,
    pub stats: Vec<ClusterSuffStats>,
}

impl ChainDraw {
    pub fn allocation(&self) -> Allocation {
        Allocation::from_parts_unchecked(self.labels.iter().map(|&l| l as usize).collect(), self.params.k())
    }
}

pub(crate) fn quantile_allocation(data: &[f64], k: usize) -> Allocation {
    let n = data.len();
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&a, &b| data[a].total_cmp(&data[b]));
    let mut labels = vec![0; n];
    for (rank, &i) in idx.iter().enumerate() {
        labels[i] = (rank * k / n.max(1)).min(k - 1);
    }
    Allocation::from_parts_unchecked(labels, k)
}

/// Run `burnin + t` sweeps and keep the last `t` draws.
pub fn run_gibbs_chain<R: Rng + ?Sized>(
    data: &[f64],
    k: usize,
    prior: &NIGPrior,
    alpha: &[f64],
    t: usize,
    burnin: usize,
    init: &ChainInit,
    rng: &mut R,
) -> Result<Vec<ChainDraw>> {
    check_alpha(alpha, k)?;
    prior.validate()?;
    if k > u8::MAX as usize {
        return Err(EvidenceError::invalid("K above 255 is not supported by the chain store"));
    }
    let mut state = match init {
        ChainInit::Prior => {
            let params = sample_prior_unchecked(k, prior, alpha, rng);
            GibbsState { params, alloc: Allocation::from_parts_unchecked(vec![0; data.len()], k) }
        }
        ChainInit::Quantiles | ChainInit::Allocation(_) => {
            let alloc = match init {
                ChainInit::Allocation(a) => {
                    if a.k() != k || a.len() != data.len() {
                        return Err(EvidenceError::invalid("initial allocation does not match K or data"));
                    }
                    a.clone()
                }
                _ => quantile_allocation(data, k),
            };
            let params = sample_conditional_posterior(&alloc.cluster_stats(data), prior, alpha, rng);
            GibbsState { params, alloc }
        }
    };
    for _ in 0..burnin {
        fm_gibbs_sweep(&mut state, data, prior, alpha, rng);
    }
    let mut out = Vec::with_capacity(t);
    for _ in 0..t {
        let stats = fm_gibbs_sweep(&mut state, data, prior, alpha, rng);
        out.push(ChainDraw {
            params: state.params.clone(),
            labels: state.alloc.labels().iter().map(|&l| l as u8).collect(),
            stats,
        });
    }
    Ok(out)
}
