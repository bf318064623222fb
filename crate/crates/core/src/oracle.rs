//! Exact evidences by brute-force enumeration, for small instances.

use crate::conjugate::{cluster_log_marginal_unchecked, ClusterSuffStats, NIGPrior};
use crate::dpm::GammaPrior;
use crate::error::{EvidenceError, Result};
use crate::mcstats::{log_add_exp, log_sum_exp};
use crate::partitions::{
    for_each_allocation, for_each_set_partition, is_symmetric, log_allocation_prior_counts, log_falling_factorial,
};
use nalgebra::{DMatrix, SymmetricEigen};
use statrs::function::gamma::ln_gamma;

/// Largest `K^n` the finite-mixture oracle will enumerate.
pub const MAX_FM_ALLOCATIONS: f64 = 1e7;

/// Largest `n` for the DPM oracle (Bell(12) ≈ 4.2·10⁶ partitions).
pub const MAX_DPM_N: usize = 12;

/// Default number of Gauss–Laguerre nodes.
pub const DEFAULT_QUAD_NODES: usize = 200;

/// Relative tolerance of the node-doubling check.
pub const QUAD_TOL: f64 = 1e-8;

fn check_fm(data: &[f64], k: usize, prior: &NIGPrior, alpha: &[f64]) -> Result<()> {
    prior.validate()?;
    if k == 0 || alpha.len() != k {
        return Err(EvidenceError::invalid("alpha length must equal K >= 1"));
    }
    if alpha.iter().any(|&a| !(a.is_finite() && a > 0.0)) {
        return Err(EvidenceError::invalid("Dirichlet concentrations must be positive and finite"));
    }
    if data.iter().any(|y| !y.is_finite()) {
        return Err(EvidenceError::invalid("data contain non-finite values"));
    }
    let size = (k as f64).powi(data.len() as i32);
    if size > MAX_FM_ALLOCATIONS {
        return Err(EvidenceError::GuardExceeded(format!(
            "K^n = {k}^{} = {size:.3e} allocations exceeds {MAX_FM_ALLOCATIONS:.0e}",
            data.len()
        )));
    }
    Ok(())
}

fn block_stats(labels: &[usize], data: &[f64], k: usize, stats: &mut Vec<ClusterSuffStats>) {
    stats.clear();
    stats.resize(k, ClusterSuffStats::empty());
    for (&z, &y) in labels.iter().zip(data) {
        stats[z].add(y);
    }
}

/// Exact finite-mixture evidence: sum over every labelled allocation of the
/// Dirichlet-multinomial mass times the collapsed likelihood.
pub fn fm_exact_evidence_allocations(data: &[f64], k: usize, prior: &NIGPrior, alpha: &[f64]) -> Result<f64> {
    check_fm(data, k, prior, alpha)?;
    let mut terms = Vec::new();
    let mut stats = Vec::new();
    let mut counts = vec![0; k];
    for_each_allocation(data.len(), k, |z| {
        block_stats(z, data, k, &mut stats);
        let mut v = 0.0;
        for (c, s) in counts.iter_mut().zip(&stats) {
            *c = s.n();
            v += cluster_log_marginal_unchecked(s, prior);
        }
        terms.push(v + log_allocation_prior_counts(&counts, alpha));
    });
    Ok(log_sum_exp(&terms))
}

/// Same evidence summed over canonical partitions with at most `K` blocks,
/// each weighted by its partition prior. Needs a symmetric `alpha`.
pub fn fm_exact_evidence_partitions(data: &[f64], k: usize, prior: &NIGPrior, alpha: &[f64]) -> Result<f64> {
    check_fm(data, k, prior, alpha)?;
    if !is_symmetric(alpha) {
        return Err(EvidenceError::AsymmetricAlpha(alpha.to_vec()));
    }
    let mut terms = Vec::new();
    let mut stats = Vec::new();
    let mut counts = vec![0; k];
    for_each_set_partition(data.len(), k, |z| {
        block_stats(z, data, k, &mut stats);
        let mut v = 0.0;
        let mut kplus = 0;
        for (c, s) in counts.iter_mut().zip(&stats) {
            *c = s.n();
            if s.n() > 0 {
                kplus += 1;
                v += cluster_log_marginal_unchecked(s, prior);
            }
        }
        terms.push(v + log_falling_factorial(k, kplus) + log_allocation_prior_counts(&counts, alpha));
    });
    Ok(log_sum_exp(&terms))
}

/// Exact finite-mixture log evidence (partition route for symmetric
/// `alpha`, allocation route otherwise).
pub fn fm_exact_evidence(data: &[f64], k: usize, prior: &NIGPrior, alpha: &[f64]) -> Result<f64> {
    if is_symmetric(alpha) {
        fm_exact_evidence_partitions(data, k, prior, alpha)
    } else {
        fm_exact_evidence_allocations(data, k, prior, alpha)
    }
}

fn check_dpm(data: &[f64], prior: &NIGPrior) -> Result<()> {
    prior.validate()?;
    if data.iter().any(|y| !y.is_finite()) {
        return Err(EvidenceError::invalid("data contain non-finite values"));
    }
    if data.len() > MAX_DPM_N {
        return Err(EvidenceError::GuardExceeded(format!(
            "DPM enumeration is limited to n <= {MAX_DPM_N}, got n = {}",
            data.len()
        )));
    }
    Ok(())
}

/// `log c_k = log Σ_{C: K₊ = k} Π_j Γ(n_j) m(C_j)` for `k = 1..=n`, so that
/// the fixed-`M` evidence is `Γ(M)/Γ(M+n) Σ_k c_k M^k`. Index 0 holds
/// `k = 1`. Empty data give `[0]`.
pub fn dpm_partition_coefficients(data: &[f64], prior: &NIGPrior) -> Result<Vec<f64>> {
    check_dpm(data, prior)?;
    let n = data.len();
    if n == 0 {
        return Ok(vec![0.0]);
    }
    let mut coef = vec![f64::NEG_INFINITY; n];
    let mut stats = Vec::new();
    for_each_set_partition(n, n, |z| {
        block_stats(z, data, n, &mut stats);
        let mut v = 0.0;
        let mut kplus = 0;
        for s in stats.iter().filter(|s| s.n() > 0) {
            kplus += 1;
            v += ln_gamma(s.n() as f64) + cluster_log_marginal_unchecked(s, prior);
        }
        coef[kplus - 1] = log_add_exp(coef[kplus - 1], v);
    });
    Ok(coef)
}

/// `log L(y | M, G0)` with `M` fixed.
pub fn dpm_exact_evidence_fixed_m(data: &[f64], prior: &NIGPrior, m: f64) -> Result<f64> {
    if !(m.is_finite() && m > 0.0) {
        return Err(EvidenceError::invalid(format!("concentration must be > 0, got {m}")));
    }
    let coef = dpm_partition_coefficients(data, prior)?;
    Ok(log_fixed_m(&coef, data.len(), m))
}

fn log_fixed_m(coef: &[f64], n: usize, m: f64) -> f64 {
    if n == 0 {
        return 0.0;
    }
    let terms: Vec<f64> = coef.iter().enumerate().map(|(i, &c)| c + (i + 1) as f64 * m.ln()).collect();
    ln_gamma(m) - ln_gamma(m + n as f64) + log_sum_exp(&terms)
}

/// Per-`K₊` contributions `log ∫ Γ(M)/Γ(M+n) c_k M^k π(M) dM`, with
/// `f(M)` multiplying the integrand. Numerically stable form of
/// `Γ(M) M / Γ(M+n) = 1/Π_{i=1}^{n-1}(M+i)`.
fn integrate_components(
    coef: &[f64],
    n: usize,
    gprior: &GammaPrior,
    nodes: usize,
    log_f: &dyn Fn(f64) -> f64,
) -> Result<Vec<f64>> {
    let (x, log_w) = gauss_laguerre(nodes, gprior.a - 1.0)?;
    let mut out = Vec::with_capacity(coef.len());
    let mut terms = vec![0.0; nodes];
    for (i, &c) in coef.iter().enumerate() {
        let k = i + 1;
        for (t, (&xi, &lw)) in terms.iter_mut().zip(x.iter().zip(&log_w)) {
            let m = xi / gprior.b;
            let mut v = lw + c + (k as f64 - 1.0) * m.ln() + log_f(m);
            for j in 1..n {
                v -= (m + j as f64).ln();
            }
            *t = v;
        }
        out.push(log_sum_exp(&terms));
    }
    Ok(out)
}

fn integrate_checked(
    coef: &[f64],
    n: usize,
    gprior: &GammaPrior,
    nodes: usize,
    log_f: &dyn Fn(f64) -> f64,
) -> Result<Vec<f64>> {
    let base = integrate_components(coef, n, gprior, nodes, log_f)?;
    let fine = integrate_components(coef, n, gprior, 2 * nodes, log_f)?;
    let (a, b) = (log_sum_exp(&base), log_sum_exp(&fine));
    if !((a - b).abs() <= QUAD_TOL) {
        return Err(EvidenceError::Quadrature(format!(
            "{nodes} and {} nodes differ by {:.3e} on the log scale",
            2 * nodes,
            (a - b).abs()
        )));
    }
    Ok(fine)
}

/// Exact DPM log evidence with `M ~ Gamma(a, b)` integrated out by
/// generalized Gauss–Laguerre quadrature (`quad_nodes` nodes, checked
/// against twice as many).
pub fn dpm_exact_evidence(data: &[f64], prior: &NIGPrior, gprior: &GammaPrior, quad_nodes: usize) -> Result<f64> {
    gprior.validate()?;
    let coef = dpm_partition_coefficients(data, prior)?;
    if data.is_empty() {
        return Ok(0.0);
    }
    let parts = integrate_checked(&coef, data.len(), gprior, quad_nodes, &|_| 0.0)?;
    Ok(log_sum_exp(&parts))
}

/// Exact posterior distribution of the number of occupied clusters; entry
/// `k - 1` is `P(K₊ = k | y)`.
pub fn dpm_exact_kplus_posterior(data: &[f64], prior: &NIGPrior, gprior: &GammaPrior, quad_nodes: usize) -> Result<Vec<f64>> {
    gprior.validate()?;
    if data.is_empty() {
        return Err(EvidenceError::invalid("posterior over K₊ needs data"));
    }
    let coef = dpm_partition_coefficients(data, prior)?;
    let parts = integrate_checked(&coef, data.len(), gprior, quad_nodes, &|_| 0.0)?;
    let total = log_sum_exp(&parts);
    Ok(parts.iter().map(|p| (p - total).exp()).collect())
}

/// Exact posterior mean of `M`.
pub fn dpm_exact_m_posterior_mean(data: &[f64], prior: &NIGPrior, gprior: &GammaPrior, quad_nodes: usize) -> Result<f64> {
    gprior.validate()?;
    if data.is_empty() {
        return Ok(gprior.a / gprior.b);
    }
    let coef = dpm_partition_coefficients(data, prior)?;
    let z = integrate_checked(&coef, data.len(), gprior, quad_nodes, &|_| 0.0)?;
    let zm = integrate_checked(&coef, data.len(), gprior, quad_nodes, &|m: f64| m.ln())?;
    Ok((log_sum_exp(&zm) - log_sum_exp(&z)).exp())
}

/// Nodes and log weights of generalized Gauss–Laguerre quadrature for the
/// weight `x^α e^{-x} / Γ(α+1)` (weights sum to one), by Golub–Welsch.
pub fn gauss_laguerre(nodes: usize, alpha: f64) -> Result<(Vec<f64>, Vec<f64>)> {
    if nodes == 0 || !(alpha > -1.0) {
        return Err(EvidenceError::Quadrature(format!("invalid Gauss–Laguerre request ({nodes} nodes, α = {alpha})")));
    }
    let mut j = DMatrix::<f64>::zeros(nodes, nodes);
    for i in 0..nodes {
        j[(i, i)] = 2.0 * i as f64 + alpha + 1.0;
        if i + 1 < nodes {
            let off = ((i + 1) as f64 * (i as f64 + 1.0 + alpha)).sqrt();
            j[(i, i + 1)] = off;
            j[(i + 1, i)] = off;
        }
    }
    let eig = SymmetricEigen::new(j);
    let mut pairs: Vec<(f64, f64)> = (0..nodes)
        .map(|i| {
            let v0 = eig.eigenvectors[(0, i)];
            (eig.eigenvalues[i], 2.0 * v0.abs().ln())
        })
        .collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    if pairs.iter().any(|p| !(p.0 > 0.0)) {
        return Err(EvidenceError::Quadrature("non-positive Gauss–Laguerre node".into()));
    }
    Ok(pairs.into_iter().unzip())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::conjugate::cluster_log_marginal;
    use crate::dpm::dpm_log_prior_z;
    use crate::partitions::Allocation;

    fn prior() -> NIGPrior {
        NIGPrior::new(0.0, 0.4, 1.5, 0.8).unwrap()
    }

    #[test]
    fn fm_single_point_and_single_component() {
        let p = prior();
        let single = cluster_log_marginal(&ClusterSuffStats::from_slice(&[0.7]), &p).unwrap();
        assert!((fm_exact_evidence(&[0.7], 3, &p, &[0.5; 3]).unwrap() - single).abs() < 1e-12);
        let data = [0.3, -1.2, 2.2, 0.1];
        let all = cluster_log_marginal(&ClusterSuffStats::from_slice(&data), &p).unwrap();
        assert_eq!(fm_exact_evidence_allocations(&data, 1, &p, &[2.0]).unwrap(), all);
    }

    #[test]
    fn fm_two_routes_agree() {
        let p = prior();
        let data = [0.3, -1.2, 2.2, 0.1, 1.7, -0.4, 3.0, -2.2];
        for k in 1..=3 {
            for a in [0.5, 1.0, 4.0] {
                let alpha = vec![a; k];
                let r1 = fm_exact_evidence_allocations(&data, k, &p, &alpha).unwrap();
                let r2 = fm_exact_evidence_partitions(&data, k, &p, &alpha).unwrap();
                assert!((r1 - r2).abs() < 1e-12, "K={k} α={a}: {r1} vs {r2}");
            }
        }
    }

    #[test]
    fn fm_permutation_invariant_in_data() {
        let p = prior();
        let a = fm_exact_evidence(&[0.3, -1.2, 2.2, 0.1, 1.7], 2, &p, &[1.0, 1.0]).unwrap();
        let b = fm_exact_evidence(&[1.7, 0.1, -1.2, 2.2, 0.3], 2, &p, &[1.0, 1.0]).unwrap();
        assert!((a - b).abs() < 1e-12);
        let c = fm_exact_evidence(&[1.7, 0.1, -1.2, 2.2, 0.3], 2, &p, &[1.0, 3.0]).unwrap();
        let d = fm_exact_evidence(&[0.3, -1.2, 2.2, 0.1, 1.7], 2, &p, &[1.0, 3.0]).unwrap();
        assert!((c - d).abs() < 1e-12);
    }

    #[test]
    fn fm_guard() {
        let data = vec![0.0; 24];
        assert!(matches!(fm_exact_evidence(&data, 2, &prior(), &[1.0, 1.0]), Err(EvidenceError::GuardExceeded(_))));
    }

    #[test]
    fn gauss_laguerre_moments() {
        // E[x^j] under Gamma(α+1, 1) is Γ(α+1+j)/Γ(α+1).
        for alpha in [0.0, -0.5, 1.3] {
            let (x, lw) = gauss_laguerre(40, alpha).unwrap();
            for j in 0..6 {
                let q: f64 = x.iter().zip(&lw).map(|(x, w)| w.exp() * x.powi(j)).sum();
                let exact = (ln_gamma(alpha + 1.0 + j as f64) - ln_gamma(alpha + 1.0)).exp();
                assert!((q / exact - 1.0).abs() < 1e-10, "α={alpha} j={j}");
            }
        }
    }

    #[test]
    fn dpm_single_point_is_prior_free() {
        let p = prior();
        let single = cluster_log_marginal(&ClusterSuffStats::from_slice(&[0.7]), &p).unwrap();
        for g in [GammaPrior::new(1.0, 1.0).unwrap(), GammaPrior::new(0.3, 5.0).unwrap()] {
            let v = dpm_exact_evidence(&[0.7], &p, &g, DEFAULT_QUAD_NODES).unwrap();
            assert!((v - single).abs() < 1e-12);
        }
    }

    #[test]
    fn dpm_fixed_m_n3_by_hand() {
        let p = prior();
        let y = [0.2, -0.9, 1.4];
        let m = 0.8;
        let lm = |idx: &[usize]| {
            let v: Vec<f64> = idx.iter().map(|&i| y[i]).collect();
            cluster_log_marginal(&ClusterSuffStats::from_slice(&v), &p).unwrap()
        };
        let parts: [(&[usize], f64); 5] = [
            (&[0, 0, 0], lm(&[0, 1, 2])),
            (&[0, 0, 1], lm(&[0, 1]) + lm(&[2])),
            (&[0, 1, 0], lm(&[0, 2]) + lm(&[1])),
            (&[0, 1, 1], lm(&[1, 2]) + lm(&[0])),
            (&[0, 1, 2], lm(&[0]) + lm(&[1]) + lm(&[2])),
        ];
        let mut total = 0.0;
        for (z, ll) in parts {
            let a = Allocation::new(z.to_vec(), 3).unwrap();
            total += (dpm_log_prior_z(&a, m).unwrap() + ll).exp();
        }
        let v = dpm_exact_evidence_fixed_m(&y, &p, m).unwrap();
        assert!((v - total.ln()).abs() < 1e-12);
    }

    #[test]
    fn dpm_quadrature_converges_and_matches_fixed_m_limit() {
        let p = prior();
        let y = [0.2, -0.9, 1.4, 3.1, -2.0, 0.5];
        let v200 = dpm_exact_evidence(&y, &p, &GammaPrior::default(), 200).unwrap();
        let v400 = dpm_exact_evidence(&y, &p, &GammaPrior::default(), 400).unwrap();
        assert!((v200 - v400).abs() < 1e-8);
        // Gamma(a, a/M0) concentrates at M0 as a grows.
        let m0 = 1.7;
        let g = GammaPrior::new(1e6, 1e6 / m0).unwrap();
        let fixed = dpm_exact_evidence_fixed_m(&y, &p, m0).unwrap();
        let v = dpm_exact_evidence(&y, &p, &g, 200).unwrap();
        assert!((v - fixed).abs() < 1e-4, "{v} vs {fixed}");
    }

    #[test]
    fn kplus_posterior_sums_to_one() {
        let y = [0.2, -0.9, 1.4, 3.1];
        let probs = dpm_exact_kplus_posterior(&y, &prior(), &GammaPrior::default(), 200).unwrap();
        assert_eq!(probs.len(), 4);
        assert!((probs.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }
}
