//! Normal–Inverse-Gamma conjugate computations for univariate Gaussian
//! clusters.
//!
//! The prior is
//!
//! ```text
//! σ²     ~ InvGamma(a0, b0)      shape a0, SCALE b0: density ∝ (σ²)^{-a0-1} exp(-b0/σ²)
//! μ | σ² ~ Normal(μ0, σ²/λ0)
//! ```
//!
//! `b0` is a scale, not a rate; `E[1/σ²] = a0/b0`.
//!
//! Everything is evaluated in log space. `m(C)` denotes the marginal
//! likelihood of the points in cluster `C` with `(μ, σ²)` integrated out;
//! `m(∅) = 1`.

use crate::error::{EvidenceError, Result};
use rand::Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

pub(crate) const LN_2PI: f64 = 1.837_877_066_409_345_3;

/// Normal–Inverse-Gamma hyperparameters `(μ0, λ0, a0, b0)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NIGPrior {
    /// Prior mean of the component location.
    pub mu0: f64,
    /// Prior precision scale: `Var(μ | σ²) = σ²/λ0`.
    pub lambda0: f64,
    /// Inverse-gamma shape.
    pub a0: f64,
    /// Inverse-gamma scale.
    pub b0: f64,
}

impl NIGPrior {
    pub fn new(mu0: f64, lambda0: f64, a0: f64, b0: f64) -> Result<Self> {
        let p = NIGPrior { mu0, lambda0, a0, b0 };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !self.mu0.is_finite() {
            return Err(EvidenceError::invalid(format!("mu0 must be finite, got {}", self.mu0)));
        }
        for (name, v) in [("lambda0", self.lambda0), ("a0", self.a0), ("b0", self.b0)] {
            if !(v.is_finite() && v > 0.0) {
                return Err(EvidenceError::invalid(format!("{name} must be finite and > 0, got {v}")));
            }
        }
        Ok(())
    }

    /// The conditional posterior given a cluster's statistics.
    pub fn posterior(&self, stats: &ClusterSuffStats) -> NIGPosterior {
        let n = stats.n as f64;
        if stats.n == 0 {
            return NIGPosterior { mu: self.mu0, lambda: self.lambda0, a: self.a0, b: self.b0 };
        }
        let ybar = stats.sum() / n;
        let ss = stats.centered_sumsq();
        let lambda = self.lambda0 + n;
        let mu = (self.lambda0 * self.mu0 + stats.sum()) / lambda;
        let a = self.a0 + 0.5 * n;
        let d = ybar - self.mu0;
        let b = self.b0 + 0.5 * ss + 0.5 * self.lambda0 * n * d * d / lambda;
        NIGPosterior { mu, lambda, a, b }
    }

    /// Draw `(μ, σ²)` from the prior.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> (f64, f64) {
        NIGPosterior { mu: self.mu0, lambda: self.lambda0, a: self.a0, b: self.b0 }.sample(rng)
    }

    /// Log prior density of `(μ, σ²)`.
    pub fn log_density(&self, mu: f64, sigma2: f64) -> f64 {
        NIGPosterior { mu: self.mu0, lambda: self.lambda0, a: self.a0, b: self.b0 }.log_density(mu, sigma2)
    }
}

/// Parameters of a Normal–Inverse-Gamma distribution (prior or conditional
/// posterior). Same shape/scale convention as [`NIGPrior`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NIGPosterior {
    pub mu: f64,
    pub lambda: f64,
    pub a: f64,
    pub b: f64,
}

impl NIGPosterior {
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> (f64, f64) {
        let g: f64 = Gamma::new(self.a, 1.0).expect("valid shape").sample(rng);
        let sigma2 = self.b / g;
        let z: f64 = StandardNormal.sample(rng);
        (self.mu + z * (sigma2 / self.lambda).sqrt(), sigma2)
    }

    /// `log NIG(μ, σ² | mu, lambda, a, b)`.
    pub fn log_density(&self, mu: f64, sigma2: f64) -> f64 {
        if !(sigma2 > 0.0) {
            return f64::NEG_INFINITY;
        }
        let ln_s2 = sigma2.ln();
        let log_ig = self.a * self.b.ln() - ln_gamma(self.a) - (self.a + 1.0) * ln_s2 - self.b / sigma2;
        let d = mu - self.mu;
        let log_norm = 0.5 * (self.lambda.ln() - LN_2PI - ln_s2) - 0.5 * self.lambda * d * d / sigma2;
        log_ig + log_norm
    }

    /// Log density of the Student-t predictive for a new observation.
    pub fn log_predictive(&self, y: f64) -> f64 {
        let d = y - self.mu;
        let b_new = self.b + 0.5 * self.lambda * d * d / (self.lambda + 1.0);
        ln_gamma(self.a + 0.5) - ln_gamma(self.a) + self.a * self.b.ln() - (self.a + 0.5) * b_new.ln()
            + 0.5 * (self.lambda / (self.lambda + 1.0)).ln()
            - 0.5 * LN_2PI
    }
}

/// Count, sum and sum of squares of a cluster, kept with Kahan compensation
/// so repeated add/remove cycles in the samplers do not drift.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct ClusterSuffStats {
    n: usize,
    sum: f64,
    sum_c: f64,
    sumsq: f64,
    sumsq_c: f64,
}

#[inline]
fn kahan_add(acc: &mut f64, comp: &mut f64, x: f64) {
    let y = x - *comp;
    let t = *acc + y;
    *comp = (t - *acc) - y;
    *acc = t;
}

impl ClusterSuffStats {
    pub fn empty() -> Self {
        Self::default()
    }

    pub fn from_slice(ys: &[f64]) -> Self {
        let mut s = Self::empty();
        for &y in ys {
            s.add(y);
        }
        s
    }

    /// Statistics built from raw totals. Fails on non-finite or inconsistent
    /// values.
    pub fn from_totals(n: usize, sum: f64, sumsq: f64) -> Result<Self> {
        let s = ClusterSuffStats { n, sum, sum_c: 0.0, sumsq, sumsq_c: 0.0 };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sum.is_finite() && self.sumsq.is_finite()) {
            return Err(EvidenceError::invalid("non-finite sufficient statistics"));
        }
        if self.n == 0 && (self.sum != 0.0 || self.sumsq != 0.0) {
            return Err(EvidenceError::invalid("empty cluster with nonzero sums"));
        }
        if self.n > 0 {
            let tol = 1e-9 * self.sumsq.abs().max(1.0);
            if self.sumsq + tol < self.sum * self.sum / self.n as f64 {
                return Err(EvidenceError::invalid("sum of squares below sum²/n"));
            }
        }
        Ok(())
    }

    #[inline]
    pub fn n(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn sum(&self) -> f64 {
        self.sum
    }

    #[inline]
    pub fn sumsq(&self) -> f64 {
        self.sumsq
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    /// `Σ (y - ȳ)²`, clamped at zero.
    pub fn centered_sumsq(&self) -> f64 {
        if self.n == 0 {
            return 0.0;
        }
        (self.sumsq - self.sum * self.sum / self.n as f64).max(0.0)
    }

    #[inline]
    pub fn add(&mut self, y: f64) {
        self.n += 1;
        kahan_add(&mut self.sum, &mut self.sum_c, y);
        kahan_add(&mut self.sumsq, &mut self.sumsq_c, y * y);
    }

    /// Remove a point previously added. Resets exactly to empty at `n = 0`.
    #[inline]
    pub fn remove(&mut self, y: f64) {
        debug_assert!(self.n > 0);
        self.n -= 1;
        if self.n == 0 {
            *self = Self::empty();
            return;
        }
        kahan_add(&mut self.sum, &mut self.sum_c, -y);
        kahan_add(&mut self.sumsq, &mut self.sumsq_c, -y * y);
    }

    pub fn with(&self, y: f64) -> Self {
        let mut s = *self;
        s.add(y);
        s
    }

    pub fn merge(&self, other: &Self) -> Self {
        let mut s = *self;
        s.n += other.n;
        kahan_add(&mut s.sum, &mut s.sum_c, other.sum);
        kahan_add(&mut s.sumsq, &mut s.sumsq_c, other.sumsq);
        s
    }
}

/// `log m(C)` for the cluster summarised by `stats`; exactly `0` when empty.
pub fn cluster_log_marginal(stats: &ClusterSuffStats, prior: &NIGPrior) -> Result<f64> {
    stats.validate()?;
    Ok(cluster_log_marginal_unchecked(stats, prior))
}

#[inline]
pub(crate) fn cluster_log_marginal_unchecked(stats: &ClusterSuffStats, prior: &NIGPrior) -> f64 {
    if stats.n == 0 {
        return 0.0;
    }
    let post = prior.posterior(stats);
    let n = stats.n as f64;
    ln_gamma(post.a) - ln_gamma(prior.a0) + prior.a0 * prior.b0.ln() - post.a * post.b.ln()
        + 0.5 * (prior.lambda0 / post.lambda).ln()
        - 0.5 * n * LN_2PI
}

/// `log m(C ∪ {y}) - log m(C)`: the posterior predictive log density of `y`
/// given the cluster (the prior predictive when the cluster is empty).
pub fn predictive_log_ratio(stats: &ClusterSuffStats, y: f64, prior: &NIGPrior) -> Result<f64> {
    if !y.is_finite() {
        return Err(EvidenceError::invalid(format!("observation must be finite, got {y}")));
    }
    stats.validate()?;
    Ok(predictive_log_ratio_unchecked(stats, y, prior))
}

#[inline]
pub(crate) fn predictive_log_ratio_unchecked(stats: &ClusterSuffStats, y: f64, prior: &NIGPrior) -> f64 {
    prior.posterior(stats).log_predictive(y)
}

/// Predictive log ratios with the `ln Γ(a_n + ½) - ln Γ(a_n)` terms
/// tabulated by cluster size; used in the sequential samplers' inner loops.
#[derive(Debug, Clone)]
pub struct PredictiveTable {
    prior: NIGPrior,
    lgamma_step: Vec<f64>,
    log_b0: f64,
}

impl PredictiveTable {
    /// Table valid for clusters of up to `max_n` points.
    pub fn new(prior: &NIGPrior, max_n: usize) -> Self {
        let lgamma_step = (0..=max_n)
            .map(|c| {
                let a = prior.a0 + 0.5 * c as f64;
                ln_gamma(a + 0.5) - ln_gamma(a)
            })
            .collect();
        PredictiveTable { prior: *prior, lgamma_step, log_b0: prior.b0.ln() }
    }

    /// Same value as [`predictive_log_ratio`].
    #[inline]
    pub fn log_ratio(&self, stats: &ClusterSuffStats, y: f64) -> f64 {
        let p = &self.prior;
        if stats.n == 0 {
            let d = y - p.mu0;
            let b_new = p.b0 + 0.5 * p.lambda0 * d * d / (p.lambda0 + 1.0);
            return self.lgamma_step[0] + p.a0 * self.log_b0 - (p.a0 + 0.5) * b_new.ln()
                + 0.5 * (p.lambda0 / (p.lambda0 + 1.0)).ln()
                - 0.5 * LN_2PI;
        }
        let post = p.posterior(stats);
        let step = match self.lgamma_step.get(stats.n) {
            Some(&v) => v,
            None => ln_gamma(post.a + 0.5) - ln_gamma(post.a),
        };
        let d = y - post.mu;
        let b_new = post.b + 0.5 * post.lambda * d * d / (post.lambda + 1.0);
        step + post.a * post.b.ln() - (post.a + 0.5) * b_new.ln() + 0.5 * (post.lambda / (post.lambda + 1.0)).ln()
            - 0.5 * LN_2PI
    }
}

/// Data-driven hyperparameters: `a0 = 1.28`, `b0 = 0.36·(mean(y²) - ȳ²)`,
/// `μ0 = ȳ`, `λ0 = 2.6 / (max - min)`.
pub fn hyperparams_from_data(y: &[f64]) -> Result<NIGPrior> {
    if y.iter().any(|v| !v.is_finite()) {
        return Err(EvidenceError::invalid("data contain non-finite values"));
    }
    let (min, max) = y
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    if y.len() < 2 || !(max > min) {
        return Err(EvidenceError::DegenerateData(
            "at least two distinct values are needed for data-driven hyperparameters".into(),
        ));
    }
    let n = y.len() as f64;
    let mean = crate::mcstats::pairwise_sum(y) / n;
    // Population variance, computed about the mean for accuracy.
    let sq: Vec<f64> = y.iter().map(|&v| (v - mean) * (v - mean)).collect();
    let var = crate::mcstats::pairwise_sum(&sq) / n;
    NIGPrior::new(mean, 2.6 / (max - min), 1.28, 0.36 * var)
}
