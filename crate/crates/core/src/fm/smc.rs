//! Likelihood-tempered sequential Monte Carlo with adaptive temperatures and
//! random-walk Metropolis–Hastings moves on unconstrained coordinates.

use super::{check_alpha, fm_log_likelihood, sample_prior_unchecked, FMParams};
use crate::conjugate::NIGPrior;
use crate::error::{EvidenceError, Result};
use crate::estimate::{EstimatorId, EvidenceEstimate};
use crate::mcstats::{log_mean_exp, log_sum_exp};
use crate::rng::substream;
use nalgebra::{DMatrix, DVector};
use rand::distr::weighted::WeightedIndex;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use statrs::function::gamma::ln_gamma;
use std::time::Instant;

#[derive(Debug, Clone, PartialEq)]
pub struct SmcConfig {
    /// Number of particles.
    pub n: usize,
    /// Metropolis–Hastings moves per particle and temperature.
    pub m_moves: usize,
    /// Target ESS as a fraction of `n`.
    pub ess_target: f64,
    pub seed: u64,
}

impl SmcConfig {
    pub fn new(n: usize, m_moves: usize, seed: u64) -> Self {
        SmcConfig { n, m_moves, ess_target: 0.5, seed }
    }
}

/// Estimate plus the diagnostics of the run.
#[derive(Debug, Clone)]
pub struct SmcRun {
    pub estimate: EvidenceEstimate,
    /// Temperatures, starting at 0 and ending at 1.
    pub temperatures: Vec<f64>,
    pub acceptance: Vec<f64>,
}

const LAMBDA_TOL: f64 = 1e-6;

/// Map `(μ, log σ², alr(ϖ))` to and from mixture parameters.
fn to_unconstrained(p: &FMParams) -> Vec<f64> {
    let k = p.k();
    let mut x = Vec::with_capacity(3 * k - 1);
    x.extend_from_slice(&p.means);
    x.extend(p.variances.iter().map(|v| v.ln()));
    let last = p.weights[k - 1].ln();
    x.extend(p.weights[..k - 1].iter().map(|w| w.ln() - last));
    x
}

fn from_unconstrained(x: &[f64], k: usize) -> FMParams {
    let means = x[..k].to_vec();
    let variances = x[k..2 * k].iter().map(|l| l.exp()).collect();
    let mut logits: Vec<f64> = x[2 * k..].to_vec();
    logits.push(0.0);
    let lse = log_sum_exp(&logits);
    let weights = logits.iter().map(|l| (l - lse).exp()).collect();
    FMParams { means, variances, weights }
}

/// Prior log density in unconstrained coordinates, Jacobians included.
fn log_prior_unconstrained(x: &[f64], k: usize, prior: &NIGPrior, alpha: &[f64]) -> f64 {
    let mut v = 0.0;
    for j in 0..k {
        let ls2 = x[k + j];
        v += prior.log_density(x[j], ls2.exp()) + ls2;
    }
    let mut logits: Vec<f64> = x[2 * k..].to_vec();
    logits.push(0.0);
    let lse = log_sum_exp(&logits);
    let total: f64 = alpha.iter().sum();
    v += ln_gamma(total);
    for (l, &a) in logits.iter().zip(alpha) {
        v += a * (l - lse) - ln_gamma(a);
    }
    v
}

struct Particle {
    x: Vec<f64>,
    log_prior: f64,
    log_lik: f64,
}

fn ess_of(log_w: &[f64]) -> f64 {
    let lse = log_sum_exp(log_w);
    let sq: Vec<f64> = log_w.iter().map(|l| 2.0 * (l - lse)).collect();
    (-log_sum_exp(&sq)).exp()
}

/// Tempered SMC evidence estimate.
pub fn smc_evidence(data: &[f64], k: usize, prior: &NIGPrior, alpha: &[f64], cfg: &SmcConfig) -> Result<EvidenceEstimate> {
    smc_run(data, k, prior, alpha, cfg).map(|r| r.estimate)
}

/// [`smc_evidence`] with the temperature schedule and acceptance rates.
pub fn smc_run(data: &[f64], k: usize, prior: &NIGPrior, alpha: &[f64], cfg: &SmcConfig) -> Result<SmcRun> {
    let started = Instant::now();
    prior.validate()?;
    check_alpha(alpha, k)?;
    if cfg.n < 100 {
        return Err(EvidenceError::invalid(format!("SMC needs at least 100 particles, got {}", cfg.n)));
    }
    if !(cfg.ess_target > 0.0 && cfg.ess_target < 1.0) {
        return Err(EvidenceError::invalid("ess_target must lie in (0, 1)"));
    }
    let n = cfg.n;
    let d = 3 * k - 1;
    let mut particles: Vec<Particle> = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut rng = substream(cfg.seed, i as u64);
            let p = sample_prior_unchecked(k, prior, alpha, &mut rng);
            let x = to_unconstrained(&p);
            Particle { log_prior: log_prior_unconstrained(&x, k, prior, alpha), log_lik: fm_log_likelihood(&p, data), x }
        })
        .collect();

    let mut lambda = 0.0;
    let mut temperatures = vec![0.0];
    let mut acceptance = Vec::new();
    let mut log_z = 0.0;
    let target = cfg.ess_target * n as f64;
    let mut step: u64 = 0;
    let mut log_w = vec![0.0; n];
    while lambda < 1.0 {
        step += 1;
        let fill = |lw: &mut [f64], dl: f64| {
            for (w, p) in lw.iter_mut().zip(&particles) {
                *w = dl * p.log_lik;
            }
        };
        fill(&mut log_w, 1.0 - lambda);
        let next = if ess_of(&log_w) >= target {
            1.0
        } else {
            let (mut lo, mut hi) = (lambda, 1.0);
            while hi - lo > LAMBDA_TOL {
                let mid = 0.5 * (lo + hi);
                fill(&mut log_w, mid - lambda);
                if ess_of(&log_w) >= target {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            // A strictly positive step even when a single particle dominates.
            if lo > lambda { lo } else { hi }
        };
        fill(&mut log_w, next - lambda);
        let ess = ess_of(&log_w);
        if !(ess >= 2.0) {
            temperatures.push(next);
            return Err(EvidenceError::ParticleDegeneracy { ess, temperatures });
        }
        log_z += log_mean_exp(&log_w);
        lambda = next;
        temperatures.push(lambda);

        // multinomial resampling
        let max = log_w.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let w: Vec<f64> = log_w.iter().map(|l| (l - max).exp()).collect();
        let dist = WeightedIndex::new(&w).map_err(|e| EvidenceError::DegenerateEstimate(e.to_string()))?;
        let mut rng = substream(cfg.seed, u64::MAX - step);
        let idx: Vec<usize> = (0..n).map(|_| dist.sample(&mut rng)).collect();
        particles = idx
            .iter()
            .map(|&i| Particle { x: particles[i].x.clone(), log_prior: particles[i].log_prior, log_lik: particles[i].log_lik })
            .collect();

        if cfg.m_moves == 0 {
            continue;
        }
        let chol = proposal_factor(&particles, d);
        let accepted: usize = particles
            .par_iter_mut()
            .enumerate()
            .map(|(i, p)| {
                let mut rng = substream(cfg.seed, (step << 32) | i as u64);
                let mut acc = 0;
                for _ in 0..cfg.m_moves {
                    let z = DVector::from_fn(d, |_, _| StandardNormal.sample(&mut rng));
                    let delta = &chol * z;
                    let x_new: Vec<f64> = p.x.iter().zip(delta.iter()).map(|(a, b)| a + b).collect();
                    let lp = log_prior_unconstrained(&x_new, k, prior, alpha);
                    if !lp.is_finite() {
                        continue;
                    }
                    let ll = fm_log_likelihood(&from_unconstrained(&x_new, k), data);
                    let log_ratio = lp + lambda * ll - p.log_prior - lambda * p.log_lik;
                    if log_ratio >= 0.0 || rng.random::<f64>().ln() < log_ratio {
                        *p = Particle { x: x_new, log_prior: lp, log_lik: ll };
                        acc += 1;
                    }
                }
                acc
            })
            .sum();
        acceptance.push(accepted as f64 / (n * cfg.m_moves) as f64);
    }
    let estimate = EvidenceEstimate::new(EstimatorId::Smc, log_z, None, started)
        .with("N", n as f64)
        .with("M", cfg.m_moves as f64)
        .with("ess_target", cfg.ess_target)
        .with("K", k as f64)
        .with("steps", (temperatures.len() - 1) as f64);
    Ok(SmcRun { estimate, temperatures, acceptance })
}

/// Cholesky factor of `2.38²/d` times the particle covariance.
fn proposal_factor(particles: &[Particle], d: usize) -> DMatrix<f64> {
    let n = particles.len() as f64;
    let mut mean = DVector::zeros(d);
    for p in particles {
        mean += DVector::from_column_slice(&p.x);
    }
    mean /= n;
    let mut cov = DMatrix::zeros(d, d);
    for p in particles {
        let c = DVector::from_column_slice(&p.x) - &mean;
        cov.ger(1.0, &c, &c, 1.0);
    }
    cov /= n - 1.0;
    let scale = 2.38 * 2.38 / d as f64;
    let mut jitter = 1e-10;
    loop {
        let m = &cov * scale + DMatrix::identity(d, d) * jitter;
        if let Some(c) = m.cholesky() {
            return c.l();
        }
        jitter *= 10.0;
    }
}
