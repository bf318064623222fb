//! Monte Carlo summary statistics shared by the estimators.
//!
//! All reductions are order-deterministic: sums use fixed pairwise splitting
//! so a given input slice always produces the same bits.

use crate::error::{EvidenceError, Result};
use rand::Rng;

const PAIRWISE_BLOCK: usize = 64;

/// Pairwise summation in a fixed split order.
pub fn pairwise_sum(xs: &[f64]) -> f64 {
    if xs.len() <= PAIRWISE_BLOCK {
        let mut s = 0.0;
        for &x in xs {
            s += x;
        }
        return s;
    }
    let mid = xs.len() / 2;
    pairwise_sum(&xs[..mid]) + pairwise_sum(&xs[mid..])
}

/// `log Σ exp(x_i)`. Returns `-inf` for an empty slice or all `-inf` inputs.
pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    if max == f64::INFINITY {
        return f64::INFINITY;
    }
    if xs.len() == 1 {
        return xs[0];
    }
    let shifted: Vec<f64> = xs.iter().map(|&x| (x - max).exp()).collect();
    max + pairwise_sum(&shifted).ln()
}

/// `log((1/T) Σ exp(x_i))`.
pub fn log_mean_exp(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NEG_INFINITY;
    }
    log_sum_exp(xs) - (xs.len() as f64).ln()
}

/// Streaming two-value log-sum-exp.
#[inline]
pub fn log_add_exp(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let (hi, lo) = if a > b { (a, b) } else { (b, a) };
    hi + (lo - hi).exp().ln_1p()
}

pub fn mean(xs: &[f64]) -> f64 {
    pairwise_sum(xs) / xs.len() as f64
}

/// Unbiased sample variance (divisor `T - 1`); zero for fewer than two values.
pub fn sample_variance(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs);
    let sq: Vec<f64> = xs.iter().map(|&x| (x - m) * (x - m)).collect();
    pairwise_sum(&sq) / (xs.len() - 1) as f64
}

pub fn sample_sd(xs: &[f64]) -> f64 {
    sample_variance(xs).sqrt()
}

/// Lag-`s` autocovariance about the sample mean, divisor `T`.
pub fn autocovariance(xs: &[f64], lag: usize) -> f64 {
    let t = xs.len();
    if lag >= t {
        return 0.0;
    }
    let m = mean(xs);
    let prods: Vec<f64> = (lag..t).map(|i| (xs[i] - m) * (xs[i - lag] - m)).collect();
    pairwise_sum(&prods) / t as f64
}

/// Newey–West (Bartlett kernel) estimate of the variance of the sample mean:
/// `(1/T)(σ0 + 2 Σ_{s=1..q} (1 - s/(q+1)) σ_s)`.
pub fn newey_west_variance(series: &[f64], q: usize) -> Result<f64> {
    let t = series.len();
    if t == 0 {
        return Err(EvidenceError::invalid("Newey-West variance of an empty series"));
    }
    if q >= t {
        return Err(EvidenceError::invalid(format!("lag q={q} must be below series length {t}")));
    }
    let mut long_run = autocovariance(series, 0);
    for s in 1..=q {
        let w = 1.0 - s as f64 / (q as f64 + 1.0);
        long_run += 2.0 * w * autocovariance(series, s);
    }
    let v = long_run / t as f64;
    // Bartlett weights give a PSD estimate; any negative value is round-off.
    debug_assert!(v > -1e-12 * autocovariance(series, 0).abs().max(1e-300));
    Ok(v.max(0.0))
}

/// Default Newey–West lag `⌊T^{1/3}⌋`.
pub fn default_nw_lag(t: usize) -> usize {
    let q = (t as f64).cbrt().floor() as usize;
    q.min(t.saturating_sub(1))
}

/// Delta-method standard error of `log p̂`: `sqrt(V̂(p̂)) / p̂`.
pub fn delta_method_se_log(p_hat: f64, var_p: f64) -> Result<f64> {
    if !(p_hat > 0.0) {
        return Err(EvidenceError::invalid(format!("delta method needs p_hat > 0, got {p_hat}")));
    }
    if !(var_p >= 0.0) {
        return Err(EvidenceError::invalid(format!("variance must be nonnegative, got {var_p}")));
    }
    Ok(var_p.sqrt() / p_hat)
}

/// Batch-means effective sample size with `⌊√T⌋` batches, clamped to `[1, T]`.
pub fn ess_batch_means(chain: &[f64]) -> Result<f64> {
    let t = chain.len();
    if t < 16 {
        return Err(EvidenceError::invalid(format!("ESS needs at least 16 values, got {t}")));
    }
    let n_batches = (t as f64).sqrt().floor() as usize;
    let batch_len = t / n_batches;
    let used = n_batches * batch_len;
    let var_iid = sample_variance(&chain[..used]);
    if var_iid == 0.0 {
        return Ok(1.0);
    }
    let batch_means: Vec<f64> = chain[..used].chunks(batch_len).map(mean).collect();
    // Var of a batch mean times batch length estimates the long-run variance.
    let var_bm = sample_variance(&batch_means) * batch_len as f64;
    if var_bm <= 0.0 {
        return Ok(t as f64);
    }
    Ok((t as f64 * var_iid / var_bm).clamp(1.0, t as f64))
}

/// Standard error of a log-mean-exp estimate via the delta method on i.i.d.
/// terms: `sd(w) / (√T · mean(w))`, computed without leaving log space.
pub fn log_mean_exp_se(log_terms: &[f64]) -> f64 {
    let t = log_terms.len();
    if t < 2 {
        return 0.0;
    }
    let lme = log_mean_exp(log_terms);
    if !lme.is_finite() {
        return f64::INFINITY;
    }
    let rel: Vec<f64> = log_terms.iter().map(|&l| (l - lme).exp()).collect();
    sample_sd(&rel) / (t as f64).sqrt()
}

/// Standard error of `log mean(exp(o_t))` for an autocorrelated series:
/// Newey–West variance of `exp(o_t - mean)` and the delta method. The lag
/// defaults to `⌊T^{1/3}⌋`.
pub fn log_mean_exp_nw_se(log_terms: &[f64], lag: Option<usize>) -> Result<f64> {
    if log_terms.is_empty() {
        return Err(EvidenceError::invalid("empty series"));
    }
    let lme = log_mean_exp(log_terms);
    if !lme.is_finite() {
        return Err(EvidenceError::DegenerateEstimate("log-mean-exp is not finite".into()));
    }
    let rel: Vec<f64> = log_terms.iter().map(|&o| (o - lme).exp()).collect();
    let q = lag.unwrap_or_else(|| default_nw_lag(rel.len())).min(rel.len() - 1);
    let var = newey_west_variance(&rel, q)?;
    delta_method_se_log(1.0, var)
}

/// Jackknife standard error of `log_mean_exp` over i.i.d. log terms.
pub fn jackknife_se_log_mean_exp(log_terms: &[f64]) -> f64 {
    let t = log_terms.len();
    if t < 2 {
        return 0.0;
    }
    let max = log_terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let shifted: Vec<f64> = log_terms.iter().map(|&l| (l - max).exp()).collect();
    let total = pairwise_sum(&shifted);
    let loo: Vec<f64> = shifted
        .iter()
        .map(|&s| ((total - s).max(f64::MIN_POSITIVE) / (t - 1) as f64).ln())
        .collect();
    let m = mean(&loo);
    let ss: Vec<f64> = loo.iter().map(|&x| (x - m) * (x - m)).collect();
    ((t - 1) as f64 / t as f64 * pairwise_sum(&ss)).sqrt()
}

/// Bootstrap standard error of a statistic of the sample.
pub fn bootstrap_se<R: Rng + ?Sized>(
    xs: &[f64],
    n_boot: usize,
    rng: &mut R,
    stat: impl Fn(&[f64]) -> f64,
) -> f64 {
    let t = xs.len();
    if t < 2 || n_boot < 2 {
        return 0.0;
    }
    let mut buf = vec![0.0; t];
    let stats: Vec<f64> = (0..n_boot)
        .map(|_| {
            for b in buf.iter_mut() {
                *b = xs[rng.random_range(0..t)];
            }
            stat(&buf)
        })
        .collect();
    sample_sd(&stats)
}
