//! Allocation vectors, label-free partitions, and the closed-form partition
//! prior and likelihood of a conjugate finite mixture.

use crate::conjugate::{cluster_log_marginal_unchecked, ClusterSuffStats, NIGPrior};
use crate::error::{EvidenceError, Result};
use num_bigint::BigUint;
use num_traits::{One, ToPrimitive, Zero};
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

/// Cluster labels `z_i ∈ {0, .., K-1}` (zero-based) with a label budget `K`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Allocation {
    labels: Vec<usize>,
    k: usize,
}

impl Allocation {
    pub fn new(labels: Vec<usize>, k: usize) -> Result<Self> {
        if k == 0 {
            return Err(EvidenceError::invalid("label budget K must be positive"));
        }
        if let Some(&bad) = labels.iter().find(|&&z| z >= k) {
            return Err(EvidenceError::invalid(format!("label {bad} outside 0..{k}")));
        }
        Ok(Allocation { labels, k })
    }

    /// Build from one-based labels `1..=K`.
    pub fn from_one_based(labels: &[usize], k: usize) -> Result<Self> {
        if labels.contains(&0) {
            return Err(EvidenceError::invalid("one-based labels must be >= 1"));
        }
        Self::new(labels.iter().map(|&z| z - 1).collect(), k)
    }

    pub(crate) fn from_parts_unchecked(labels: Vec<usize>, k: usize) -> Self {
        Allocation { labels, k }
    }

    #[inline]
    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn into_labels(self) -> Vec<usize> {
        self.labels
    }

    #[inline]
    pub fn k(&self) -> usize {
        self.k
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// `n_j` for every label `j < K`.
    pub fn counts(&self) -> Vec<usize> {
        let mut c = vec![0; self.k];
        for &z in &self.labels {
            c[z] += 1;
        }
        c
    }

    /// Number of occupied clusters `K₊`.
    pub fn occupied(&self) -> usize {
        self.counts().iter().filter(|&&c| c > 0).count()
    }

    /// Per-label sufficient statistics of `data`.
    pub fn cluster_stats(&self, data: &[f64]) -> Vec<ClusterSuffStats> {
        let mut s = vec![ClusterSuffStats::empty(); self.k];
        for (&z, &y) in self.labels.iter().zip(data) {
            s[z].add(y);
        }
        s
    }

    /// Relabel through `perm`: label `j` becomes `perm[j]`.
    pub fn permuted(&self, perm: &[usize]) -> Allocation {
        Allocation { labels: self.labels.iter().map(|&z| perm[z]).collect(), k: self.k }
    }
}

/// Label-free representative of an allocation: blocks renumbered `0, 1, ..`
/// in order of first appearance.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct CanonicalPartition {
    labels: Vec<u32>,
}

impl CanonicalPartition {
    #[inline]
    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    pub fn n_blocks(&self) -> usize {
        self.labels.iter().map(|&l| l as usize + 1).max().unwrap_or(0)
    }

    /// Block sizes in decreasing order.
    pub fn block_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.n_blocks()];
        for &l in &self.labels {
            sizes[l as usize] += 1;
        }
        sizes.sort_unstable_by(|a, b| b.cmp(a));
        sizes
    }

    /// An allocation using labels `0..n_blocks` under budget `k`.
    pub fn to_allocation(&self, k: usize) -> Result<Allocation> {
        Allocation::new(self.labels.iter().map(|&l| l as usize).collect(), k)
    }
}

/// First-appearance relabelling of any label sequence.
pub fn canonical_labels(labels: &[usize]) -> Vec<u32> {
    let mut map: Vec<u32> = Vec::new();
    let mut out = Vec::with_capacity(labels.len());
    let mut next = 0u32;
    for &z in labels {
        if z >= map.len() {
            map.resize(z + 1, u32::MAX);
        }
        if map[z] == u32::MAX {
            map[z] = next;
            next += 1;
        }
        out.push(map[z]);
    }
    out
}

pub fn canonicalize(a: &Allocation) -> CanonicalPartition {
    CanonicalPartition { labels: canonical_labels(&a.labels) }
}

/// Stirling numbers of the second kind `S(n, k)` for `k = 0..=kmax`.
pub fn stirling2_row(n: usize, kmax: usize) -> Vec<BigUint> {
    let mut row = vec![BigUint::zero(); kmax + 1];
    row[0] = BigUint::one();
    for m in 1..=n {
        // S(m,k) = k S(m-1,k) + S(m-1,k-1), updated in place from high k down.
        for k in (1..=kmax.min(m)).rev() {
            let prev = std::mem::take(&mut row[k]);
            row[k] = prev * BigUint::from(k) + &row[k - 1];
        }
        row[0] = BigUint::zero();
    }
    row
}

/// `|P_K([n])| = Σ_{k=1..K} S(n, k)`, exact.
pub fn partitions_count(n: usize, k: usize) -> BigUint {
    stirling2_row(n, k).into_iter().skip(1).sum()
}

/// Bell number `B(n)` by the Bell triangle.
pub fn bell_number(n: usize) -> BigUint {
    let mut row = vec![BigUint::one()];
    for _ in 0..n {
        let mut next = Vec::with_capacity(row.len() + 1);
        next.push(row.last().unwrap().clone());
        for v in &row {
            let s = next.last().unwrap() + v;
            next.push(s);
        }
        row = next;
    }
    row[0].clone()
}

/// Render an exact count to `sig` significant digits, e.g. `2.80e69`.
pub fn to_scientific(x: &BigUint, sig: usize) -> String {
    let digits = x.to_string();
    if digits.len() <= sig {
        return format!("{digits}e0");
    }
    let head: u128 = digits[..sig + 1].parse().unwrap();
    let rounded = (head + 5) / 10;
    let mut exp = digits.len() - 1;
    let mut mant = rounded.to_string();
    if mant.len() > sig {
        exp += 1;
        mant.truncate(sig);
    }
    format!("{}.{}e{}", &mant[..1], &mant[1..], exp)
}

pub fn big_to_f64(x: &BigUint) -> f64 {
    x.to_f64().unwrap_or(f64::INFINITY)
}

fn validate_alpha(alpha: &[f64], k: usize) -> Result<()> {
    if alpha.len() != k {
        return Err(EvidenceError::invalid(format!("alpha has {} entries, K = {k}", alpha.len())));
    }
    if alpha.iter().any(|&a| !(a.is_finite() && a > 0.0)) {
        return Err(EvidenceError::invalid("Dirichlet concentrations must be positive and finite"));
    }
    Ok(())
}

pub fn is_symmetric(alpha: &[f64]) -> bool {
    alpha.windows(2).all(|w| w[0] == w[1])
}

/// Dirichlet-multinomial mass of the labelled allocation `z`:
/// `Γ(Σα)/Γ(Σα+n) Π_j Γ(n_j+α_j)/Γ(α_j)`.
pub fn log_allocation_prior(a: &Allocation, alpha: &[f64]) -> Result<f64> {
    validate_alpha(alpha, a.k)?;
    Ok(log_allocation_prior_counts(&a.counts(), alpha))
}

pub(crate) fn log_allocation_prior_counts(counts: &[usize], alpha: &[f64]) -> f64 {
    let total_alpha: f64 = alpha.iter().sum();
    let n: usize = counts.iter().sum();
    let mut v = ln_gamma(total_alpha) - ln_gamma(total_alpha + n as f64);
    for (&c, &al) in counts.iter().zip(alpha) {
        if c > 0 {
            v += ln_gamma(c as f64 + al) - ln_gamma(al);
        }
    }
    v
}

/// `log K!/(K-K₊)!`.
pub(crate) fn log_falling_factorial(k: usize, kplus: usize) -> f64 {
    ln_gamma(k as f64 + 1.0) - ln_gamma((k - kplus) as f64 + 1.0)
}

/// Prior mass of the partition induced by `a`:
/// `K!/(K-K₊)! · Γ(Σα)/Γ(Σα+n) · Π_j Γ(n_j+α_j)/Γ(α_j)`.
///
/// Requires a symmetric `alpha`; with asymmetric concentrations the value
/// depends on which block carries which label.
pub fn log_partition_prior(a: &Allocation, alpha: &[f64]) -> Result<f64> {
    validate_alpha(alpha, a.k)?;
    if !is_symmetric(alpha) {
        return Err(EvidenceError::AsymmetricAlpha(alpha.to_vec()));
    }
    let counts = a.counts();
    let kplus = counts.iter().filter(|&&c| c > 0).count();
    Ok(log_falling_factorial(a.k, kplus) + log_allocation_prior_counts(&counts, alpha))
}

/// `log p(y | C(z)) = Σ_j log m(C_j)` over occupied clusters.
pub fn log_partition_likelihood(a: &Allocation, data: &[f64], prior: &NIGPrior) -> Result<f64> {
    if data.len() != a.len() {
        return Err(EvidenceError::invalid(format!(
            "allocation length {} does not match data length {}",
            a.len(),
            data.len()
        )));
    }
    prior.validate()?;
    let stats = a.cluster_stats(data);
    let mut total = 0.0;
    for s in &stats {
        s.validate()?;
        total += cluster_log_marginal_unchecked(s, prior);
    }
    Ok(total)
}

/// Visit every set partition of `n` items with at most `max_blocks` blocks,
/// as restricted growth strings (canonical labels).
pub fn for_each_set_partition(n: usize, max_blocks: usize, mut f: impl FnMut(&[usize])) {
    if n == 0 {
        f(&[]);
        return;
    }
    if max_blocks == 0 {
        return;
    }
    let mut labels = vec![0usize; n];
    fn rec(i: usize, n: usize, kmax: usize, labels: &mut [usize], used: usize, f: &mut dyn FnMut(&[usize])) {
        if i == n {
            f(labels);
            return;
        }
        let top = if used < kmax { used + 1 } else { used };
        for l in 0..top {
            labels[i] = l;
            rec(i + 1, n, kmax, labels, used.max(l + 1), f);
        }
    }
    rec(1, n, max_blocks, &mut labels, 1, &mut f);
}

/// Visit every labelled allocation in `{0..K}^n`.
pub fn for_each_allocation(n: usize, k: usize, mut f: impl FnMut(&[usize])) {
    let mut z = vec![0usize; n];
    loop {
        f(&z);
        let mut i = 0;
        loop {
            if i == n {
                return;
            }
            z[i] += 1;
            if z[i] < k {
                break;
            }
            z[i] = 0;
            i += 1;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    #[test]
    fn relabelling_example() {
        let a = Allocation::from_one_based(&[1, 2, 1, 3], 4).unwrap();
        let b = Allocation::from_one_based(&[2, 1, 2, 3], 4).unwrap();
        assert_eq!(canonicalize(&a), canonicalize(&b));
        assert_eq!(canonicalize(&a).labels(), &[0, 1, 0, 2]);
        assert_eq!(canonicalize(&a).block_sizes(), vec![2, 1, 1]);
    }

    #[test]
    fn single_block_fixed_point() {
        let a = Allocation::from_one_based(&[1, 1, 1], 1).unwrap();
        assert_eq!(canonicalize(&a).labels(), &[0, 0, 0]);
    }

    #[test]
    fn enumeration_n4_k2_gives_eight_partitions() {
        let mut seen = HashSet::new();
        for_each_allocation(4, 2, |z| {
            seen.insert(canonicalize(&Allocation::new(z.to_vec(), 2).unwrap()));
        });
        assert_eq!(seen.len(), 8);
        assert_eq!(partitions_count(4, 2), BigUint::from(8u32));
    }

    #[test]
    fn counts_match_brute_force() {
        for n in 1..=10 {
            for k in 1..=4 {
                let mut seen = 0usize;
                for_each_set_partition(n, k, |_| seen += 1);
                assert_eq!(partitions_count(n, k), BigUint::from(seen), "n={n} k={k}");
            }
        }
        for n in 1..=7 {
            for k in 1..=3 {
                let mut seen = HashSet::new();
                for_each_allocation(n, k, |z| {
                    seen.insert(canonical_labels(z));
                });
                assert_eq!(partitions_count(n, k), BigUint::from(seen.len()));
            }
        }
    }

    #[test]
    fn count_82_8() {
        let c = partitions_count(82, 8);
        assert_eq!(to_scientific(&c, 3), "2.80e69");
        assert_eq!(partitions_count(17, 1), BigUint::one());
    }

    #[test]
    fn bell_numbers() {
        // Recurrence oracle B(n+1) = Σ C(n,k) B(k).
        let mut bells: Vec<BigUint> = vec![BigUint::one()];
        for m in 0..12usize {
            let mut binom = BigUint::one();
            let mut s = BigUint::zero();
            for (k, b) in bells.iter().enumerate().take(m + 1) {
                s += &binom * b;
                binom = binom * BigUint::from(m - k) / BigUint::from(k + 1);
            }
            bells.push(s);
        }
        for (n, b) in bells.iter().enumerate().take(13).skip(1) {
            assert_eq!(&partitions_count(n, n), b);
            assert_eq!(&partitions_count(n, n + 3), b);
            assert_eq!(bell_number(n), bells[n]);
        }
    }

    #[test]
    fn prior_examples() {
        let a = Allocation::new(vec![0], 3).unwrap();
        assert!(log_partition_prior(&a, &[0.7; 3]).unwrap().abs() < 1e-12);
        let together = Allocation::new(vec![0, 0], 2).unwrap();
        let apart = Allocation::new(vec![0, 1], 2).unwrap();
        assert!((log_partition_prior(&together, &[1.0, 1.0]).unwrap() - (2.0f64 / 3.0).ln()).abs() < 1e-14);
        assert!((log_partition_prior(&apart, &[1.0, 1.0]).unwrap() - (1.0f64 / 3.0).ln()).abs() < 1e-14);
        assert!(matches!(log_partition_prior(&apart, &[1.0, 2.0]), Err(EvidenceError::AsymmetricAlpha(_))));
        assert!(log_partition_prior(&apart, &[1.0, 0.0]).is_err());
    }

    #[test]
    fn prior_normalises_over_partitions() {
        for n in 1..=8 {
            for k in 1..=3 {
                for al in [0.5, 1.0, 2.0] {
                    let alpha = vec![al; k];
                    let mut terms = Vec::new();
                    for_each_set_partition(n, k, |z| {
                        let a = Allocation::new(z.to_vec(), k).unwrap();
                        terms.push(log_partition_prior(&a, &alpha).unwrap());
                    });
                    let total: f64 = terms.iter().map(|t| t.exp()).sum();
                    assert!((total - 1.0).abs() < 1e-10, "n={n} k={k} a={al}: {total}");
                }
            }
        }
    }

    #[test]
    fn likelihood_single_block_and_length_check() {
        let p = NIGPrior::new(0.0, 1.0, 2.0, 1.0).unwrap();
        let y = [0.3, -1.2, 2.2];
        let a = Allocation::new(vec![1, 1, 1], 3).unwrap();
        let direct = crate::conjugate::cluster_log_marginal(&ClusterSuffStats::from_slice(&y), &p).unwrap();
        assert_eq!(log_partition_likelihood(&a, &y, &p).unwrap(), direct);
        assert!(log_partition_likelihood(&a, &y[..2], &p).is_err());
    }

    proptest::proptest! {
        #[test]
        fn canonicalize_idempotent_and_label_invariant(z in proptest::collection::vec(0usize..4, 1..12), shift in 1usize..4) {
            let a = Allocation::new(z.clone(), 4).unwrap();
            let c = canonicalize(&a);
            let again = canonicalize(&c.to_allocation(4).unwrap());
            proptest::prop_assert_eq!(&c, &again);
            let perm: Vec<usize> = (0..4).map(|j| (j + shift) % 4).collect();
            let b = a.permuted(&perm);
            proptest::prop_assert_eq!(&c, &canonicalize(&b));
            let p = NIGPrior::new(0.0, 1.0, 1.0, 1.0).unwrap();
            let y: Vec<f64> = (0..z.len()).map(|i| (i as f64 * 0.7).sin() * 3.0).collect();
            let (pa, pb) = (log_partition_prior(&a, &[1.5; 4]).unwrap(), log_partition_prior(&b, &[1.5; 4]).unwrap());
            proptest::prop_assert!((pa - pb).abs() < 1e-12);
            let la = log_partition_likelihood(&a, &y, &p).unwrap();
            let lb = log_partition_likelihood(&b, &y, &p).unwrap();
            proptest::prop_assert!((la - lb).abs() < 1e-12);
        }
    }
}
