//! Conjugate Dirichlet process mixtures of Gaussians: Pólya-urn allocation
//! prior, collapsed likelihood, the collapsed Gibbs sampler over `(z, M)`
//! and sequential imputation of allocations.

pub mod evidence;

use crate::conjugate::{ClusterSuffStats, NIGPrior, PredictiveTable};
use crate::error::{EvidenceError, Result};
use crate::fm::sample_log_categorical;
use crate::partitions::{canonical_labels, log_partition_likelihood, Allocation};
use rand::Rng;
use rand_distr::{Beta, Distribution, Gamma};
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

/// `Gamma(a, b)` prior on the concentration `M`, shape `a` and RATE `b`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GammaPrior {
    pub a: f64,
    pub b: f64,
}

impl Default for GammaPrior {
    fn default() -> Self {
        GammaPrior { a: 1.0, b: 1.0 }
    }
}

impl GammaPrior {
    pub fn new(a: f64, b: f64) -> Result<Self> {
        let g = GammaPrior { a, b };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.a.is_finite() && self.a > 0.0 && self.b.is_finite() && self.b > 0.0) {
            return Err(EvidenceError::invalid(format!("Gamma prior needs a, b > 0, got ({}, {})", self.a, self.b)));
        }
        Ok(())
    }

    pub fn log_density(&self, m: f64) -> f64 {
        log_gamma_density(m, self.a, self.b)
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        Gamma::new(self.a, 1.0 / self.b).expect("validated").sample(rng)
    }
}

/// Log density of `Gamma(shape, rate)` at `x`.
pub(crate) fn log_gamma_density(x: f64, shape: f64, rate: f64) -> f64 {
    if !(x > 0.0) {
        return f64::NEG_INFINITY;
    }
    shape * rate.ln() - ln_gamma(shape) + (shape - 1.0) * x.ln() - rate * x
}

/// Collapsed sampler state. Labels are kept contiguous in `0..K₊`.
#[derive(Debug, Clone, PartialEq)]
pub struct DPMState {
    pub alloc: Allocation,
    /// Concentration parameter.
    pub m: f64,
    /// Auxiliary `Beta(M + 1, n)` variable of the last `M` update.
    pub eta: f64,
}

impl DPMState {
    /// Everything in one cluster.
    pub fn single_cluster(n: usize, m: f64) -> Result<Self> {
        DPMState::new(Allocation::from_parts_unchecked(vec![0; n], 1), m)
    }

    pub fn new(alloc: Allocation, m: f64) -> Result<Self> {
        if !(m.is_finite() && m > 0.0) {
            return Err(EvidenceError::invalid(format!("concentration must be > 0, got {m}")));
        }
        let canon: Vec<usize> = canonical_labels(alloc.labels()).into_iter().map(|l| l as usize).collect();
        let k = canon.iter().max().map_or(1, |&m| m + 1);
        Ok(DPMState { alloc: Allocation::from_parts_unchecked(canon, k), m, eta: 0.5 })
    }

    pub fn n_clusters(&self) -> usize {
        self.alloc.occupied()
    }
}

/// Pólya-urn prior of the allocation, `Γ(M)/Γ(M+n) M^{K₊} Π_j Γ(n_j)`.
pub fn dpm_log_prior_z(a: &Allocation, m: f64) -> Result<f64> {
    if !(m.is_finite() && m > 0.0) {
        return Err(EvidenceError::invalid(format!("concentration must be > 0, got {m}")));
    }
    let counts: Vec<usize> = a.counts().into_iter().filter(|&c| c > 0).collect();
    Ok(log_prior_counts(&counts, a.len(), m))
}

pub(crate) fn log_prior_counts(counts: &[usize], n: usize, m: f64) -> f64 {
    if n == 0 {
        return 0.0;
    }
    let mut v = ln_gamma(m) - ln_gamma(m + n as f64) + counts.len() as f64 * m.ln();
    for &c in counts {
        v += ln_gamma(c as f64);
    }
    v
}

/// Collapsed likelihood `Σ_j log m(C_j)` over occupied clusters.
pub fn dpm_log_likelihood_z(a: &Allocation, data: &[f64], prior: &NIGPrior) -> Result<f64> {
    log_partition_likelihood(a, data, prior)
}

/// Density of `M | η, K₊` under the two-Gamma mixture update.
pub fn m_conditional_log_density(m: f64, eta: f64, k_plus: usize, n: usize, gprior: &GammaPrior) -> f64 {
    let rate = gprior.b - eta.ln();
    let shape = gprior.a + k_plus as f64;
    let odds_num = shape - 1.0;
    let omega = odds_num / (n as f64 * rate + odds_num);
    let hi = log_gamma_density(m, shape, rate);
    if omega >= 1.0 {
        return hi;
    }
    let lo = log_gamma_density(m, shape - 1.0, rate);
    crate::mcstats::log_add_exp(omega.ln() + hi, (1.0 - omega).ln() + lo)
}

/// Draw `η ~ Beta(M+1, n)` and then `M | η, K₊`.
pub(crate) fn update_concentration<R: Rng + ?Sized>(m: f64, k_plus: usize, n: usize, gprior: &GammaPrior, rng: &mut R) -> (f64, f64) {
    if n == 0 {
        return (gprior.sample(rng), 0.5);
    }
    let eta: f64 = Beta::new(m + 1.0, n as f64).expect("positive parameters").sample(rng);
    // Guard against η rounding to 0 or 1.
    let eta = eta.clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON);
    let rate = gprior.b - eta.ln();
    let shape = gprior.a + k_plus as f64;
    let omega = (shape - 1.0) / (n as f64 * rate + shape - 1.0);
    let s = if rng.random::<f64>() < omega { shape } else { shape - 1.0 };
    let m_new = Gamma::new(s, 1.0 / rate).expect("positive parameters").sample(rng);
    (m_new.max(f64::MIN_POSITIVE), eta)
}

/// Collapsed Gibbs sweep with cached cluster statistics.
pub(crate) struct DpmSweeper<'a> {
    data: &'a [f64],
    gprior: GammaPrior,
    table: PredictiveTable,
    stats: Vec<ClusterSuffStats>,
    labels: Vec<usize>,
    logits: Vec<f64>,
}

impl<'a> DpmSweeper<'a> {
    pub(crate) fn new(state: &DPMState, data: &'a [f64], prior: &NIGPrior, gprior: &GammaPrior) -> Self {
        let labels: Vec<usize> = canonical_labels(state.alloc.labels()).into_iter().map(|l| l as usize).collect();
        let k = labels.iter().max().map_or(0, |&m| m + 1);
        let mut stats = vec![ClusterSuffStats::empty(); k];
        for (&z, &y) in labels.iter().zip(data) {
            stats[z].add(y);
        }
        DpmSweeper { data, gprior: *gprior, table: PredictiveTable::new(prior, data.len()), stats, labels, logits: Vec::new() }
    }

    pub(crate) fn sweep<R: Rng + ?Sized>(&mut self, state: &mut DPMState, rng: &mut R) {
        let m = state.m;
        let log_m = m.ln();
        for i in 0..self.data.len() {
            let y = self.data[i];
            let old = self.labels[i];
            self.stats[old].remove(y);
            if self.stats[old].is_empty() {
                // keep labels contiguous: the last cluster takes the freed label
                let last = self.stats.len() - 1;
                if old != last {
                    self.stats.swap(old, last);
                    for z in self.labels.iter_mut() {
                        if *z == last {
                            *z = old;
                        }
                    }
                }
                self.stats.pop();
            }
            let k = self.stats.len();
            self.logits.clear();
            let mut max = f64::NEG_INFINITY;
            for s in &self.stats {
                let l = (s.n() as f64).ln() + self.table.log_ratio(s, y);
                max = max.max(l);
                self.logits.push(l);
            }
            let l_new = log_m + self.table.log_ratio(&ClusterSuffStats::empty(), y);
            self.logits.push(l_new);
            max = max.max(l_new);
            let z = sample_log_categorical(&mut self.logits, max, rng);
            if z == k {
                self.stats.push(ClusterSuffStats::empty());
            }
            self.stats[z].add(y);
            self.labels[i] = z;
        }
        let (m_new, eta) = update_concentration(m, self.stats.len(), self.data.len(), &self.gprior, rng);
        state.m = m_new;
        state.eta = eta;
        state.alloc = Allocation::from_parts_unchecked(self.labels.clone(), self.stats.len().max(1));
    }
}

/// One sweep of the collapsed Gibbs sampler: every `z_i` from its full
/// conditional (existing cluster `∝ n_k^{-i}` × predictive, new cluster
/// `∝ M` × prior predictive), then `η` and `M`.
pub fn dpm_gibbs_sweep<R: Rng + ?Sized>(
    state: &mut DPMState,
    data: &[f64],
    prior: &NIGPrior,
    gprior: &GammaPrior,
    rng: &mut R,
) -> Result<()> {
    prior.validate()?;
    gprior.validate()?;
    if state.alloc.len() != data.len() {
        return Err(EvidenceError::invalid("allocation length does not match data"));
    }
    let mut sweeper = DpmSweeper::new(state, data, prior, gprior);
    sweeper.sweep(state, rng);
    Ok(())
}

/// Stored draw of a DPM chain.
#[derive(Debug, Clone, PartialEq)]
pub struct DpmDraw {
    pub labels: Vec<u32>,
    pub m: f64,
    pub eta: f64,
    pub k_plus: usize,
}

/// Run `burnin + t` sweeps from a single cluster and `M` drawn from its
/// prior; keep the last `t`.
pub fn run_dpm_chain<R: Rng + ?Sized>(
    data: &[f64],
    prior: &NIGPrior,
    gprior: &GammaPrior,
    t: usize,
    burnin: usize,
    rng: &mut R,
) -> Result<Vec<DpmDraw>> {
    prior.validate()?;
    gprior.validate()?;
    if data.is_empty() {
        return Err(EvidenceError::invalid("DPM chain needs data"));
    }
    let mut state = DPMState::single_cluster(data.len(), gprior.sample(rng))?;
    let mut sweeper = DpmSweeper::new(&state, data, prior, gprior);
    for _ in 0..burnin {
        sweeper.sweep(&mut state, rng);
    }
    let mut out = Vec::with_capacity(t);
    for _ in 0..t {
        sweeper.sweep(&mut state, rng);
        out.push(DpmDraw {
            labels: canonical_labels(&sweeper.labels),
            m: state.m,
            eta: state.eta,
            k_plus: sweeper.stats.len(),
        });
    }
    Ok(out)
}

/// Output of one sequential imputation.
#[derive(Debug, Clone, PartialEq)]
pub struct SisImputation {
    /// Allocation with labels in order of first appearance.
    pub alloc: Allocation,
    /// `Σ_i log p(y_i | y_{1:i-1}, z_{1:i-1}, M)`.
    pub log_weight: f64,
    /// Log probability of the realised allocation under the imputation.
    pub log_proposal: f64,
}

/// Sequential imputation of the allocation given `M`.
pub fn dpm_sis_impute<R: Rng + ?Sized>(data: &[f64], m: f64, prior: &NIGPrior, rng: &mut R) -> Result<SisImputation> {
    prior.validate()?;
    if !(m.is_finite() && m > 0.0) {
        return Err(EvidenceError::invalid(format!("concentration must be > 0, got {m}")));
    }
    let table = PredictiveTable::new(prior, data.len());
    Ok(sis_impute_with(data, m, &table, rng))
}

pub(crate) fn sis_impute_with<R: Rng + ?Sized>(data: &[f64], m: f64, table: &PredictiveTable, rng: &mut R) -> SisImputation {
    let mut stats: Vec<ClusterSuffStats> = Vec::new();
    let mut labels = Vec::with_capacity(data.len());
    let mut logits = Vec::new();
    let mut log_weight = 0.0;
    let mut log_proposal = 0.0;
    let log_m = m.ln();
    for (i, &y) in data.iter().enumerate() {
        let log_denom = (m + i as f64).ln();
        logits.clear();
        for s in &stats {
            logits.push((s.n() as f64).ln() - log_denom + table.log_ratio(s, y));
        }
        logits.push(log_m - log_denom + table.log_ratio(&ClusterSuffStats::empty(), y));
        let log_gamma = crate::mcstats::log_sum_exp(&logits);
        log_weight += log_gamma;
        let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let chosen_logits = logits.clone();
        let z = sample_log_categorical(&mut logits, max, rng);
        log_proposal += chosen_logits[z] - log_gamma;
        if z == stats.len() {
            stats.push(ClusterSuffStats::empty());
        }
        stats[z].add(y);
        labels.push(z);
    }
    let k = stats.len().max(1);
    SisImputation { alloc: Allocation::from_parts_unchecked(labels, k), log_weight, log_proposal }
}

/// Log probability that sequential imputation at `M` produces the
/// allocation with canonical labels `canon`.
pub fn dpm_sis_log_proposal(canon: &[u32], data: &[f64], m: f64, prior: &NIGPrior) -> Result<f64> {
    prior.validate()?;
    if canon.len() != data.len() {
        return Err(EvidenceError::invalid("allocation length does not match data"));
    }
    if canonical_labels(&canon.iter().map(|&l| l as usize).collect::<Vec<_>>()) != canon {
        return Err(EvidenceError::invalid("labels are not in order of first appearance"));
    }
    let table = PredictiveTable::new(prior, data.len());
    Ok(sis_log_proposal_with(canon, data, m, &table))
}

pub(crate) fn sis_log_proposal_with(canon: &[u32], data: &[f64], m: f64, table: &PredictiveTable) -> f64 {
    let mut stats: Vec<ClusterSuffStats> = Vec::new();
    let mut logits = Vec::new();
    let mut total = 0.0;
    let log_m = m.ln();
    for (i, (&z, &y)) in canon.iter().zip(data).enumerate() {
        let log_denom = (m + i as f64).ln();
        logits.clear();
        for s in &stats {
            logits.push((s.n() as f64).ln() - log_denom + table.log_ratio(s, y));
        }
        logits.push(log_m - log_denom + table.log_ratio(&ClusterSuffStats::empty(), y));
        let z = z as usize;
        total += logits[z] - crate::mcstats::log_sum_exp(&logits);
        if z == stats.len() {
            stats.push(ClusterSuffStats::empty());
        }
        stats[z].add(y);
    }
    total
}

/// Draw an allocation from the Pólya urn with concentration `M`.
pub fn sample_urn<R: Rng + ?Sized>(n: usize, m: f64, rng: &mut R) -> Allocation {
    let mut counts: Vec<usize> = Vec::new();
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let mut u = rng.random::<f64>() * (m + i as f64);
        let mut z = counts.len();
        for (j, &c) in counts.iter().enumerate() {
            if u < c as f64 {
                z = j;
                break;
            }
            u -= c as f64;
        }
        if z == counts.len() {
            counts.push(0);
        }
        counts[z] += 1;
        labels.push(z);
    }
    let k = counts.len().max(1);
    Allocation::from_parts_unchecked(labels, k)
}
