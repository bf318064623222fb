use mixture_evidence::conjugate::{hyperparams_from_data, NIGPrior};
use mixture_evidence::fm::chib::all_permutations;
use mixture_evidence::fm::{
    fm_gibbs_sweep, fm_log_likelihood, fm_log_prior, fm_posterior_ordinate, fm_sample_prior, run_gibbs_chain, ChainInit,
    FMParams, GibbsState,
};
use mixture_evidence::mcstats::{log_sum_exp, mean, sample_sd};
use mixture_evidence::partitions::{canonical_labels, for_each_set_partition, log_partition_likelihood, log_partition_prior};
use mixture_evidence::rng::rng_from_seed;
use mixture_evidence::Allocation;
use statrs::distribution::{ChiSquared, ContinuousCDF};
use std::collections::HashMap;
use std::f64::consts::PI;

fn normal_logpdf(y: f64, mu: f64, s2: f64) -> f64 {
    -0.5 * (2.0 * PI * s2).ln() - 0.5 * (y - mu).powi(2) / s2
}

#[test]
fn likelihood_reductions() {
    let data = [0.3, -1.2, 2.2, 0.0];
    let one = FMParams::new(vec![0.4], vec![1.7], vec![1.0]).unwrap();
    let direct: f64 = data.iter().map(|&y| normal_logpdf(y, 0.4, 1.7)).sum();
    assert!((fm_log_likelihood(&one, &data) - direct).abs() < 1e-12);

    let merged = FMParams::new(vec![-1.0, 2.0], vec![0.5, 1.5], vec![0.6, 0.4]).unwrap();
    let split = FMParams::new(vec![-1.0, 2.0, -1.0], vec![0.5, 1.5, 0.5], vec![0.3, 0.4, 0.3]).unwrap();
    assert!((fm_log_likelihood(&merged, &data) - fm_log_likelihood(&split, &data)).abs() < 1e-12);
}

#[test]
fn likelihood_matches_linear_domain_sum() {
    let mut rng = rng_from_seed(5);
    let prior = NIGPrior::new(0.0, 0.2, 3.0, 2.0).unwrap();
    let data: Vec<f64> = (0..10).map(|i| -3.0 + 0.7 * i as f64).collect();
    for _ in 0..50 {
        let p = fm_sample_prior(3, &prior, &[1.0; 3], &mut rng).unwrap();
        let direct: f64 = data
            .iter()
            .map(|&y| {
                (0..3)
                    .map(|k| p.weights[k] * normal_logpdf(y, p.means[k], p.variances[k]).exp())
                    .sum::<f64>()
                    .ln()
            })
            .sum();
        if direct.is_finite() {
            assert!((fm_log_likelihood(&p, &data) - direct).abs() < 1e-10);
        }
    }
}

#[test]
fn prior_draws_have_the_right_moments() {
    let prior = NIGPrior::new(1.0, 0.5, 3.0, 2.0).unwrap();
    let alpha = [2.0, 1.0, 1.0];
    let mut rng = rng_from_seed(6);
    let t = 10_000;
    let draws: Vec<FMParams> = (0..t).map(|_| fm_sample_prior(3, &prior, &alpha, &mut rng).unwrap()).collect();
    for d in &draws {
        d.validate().unwrap();
    }
    for (k, target) in [0.5, 0.25, 0.25].iter().enumerate() {
        let w: Vec<f64> = draws.iter().map(|d| d.weights[k]).collect();
        assert!((mean(&w) - target).abs() < 3.0 * sample_sd(&w) / (t as f64).sqrt());
    }
    let prec: Vec<f64> = draws.iter().map(|d| 1.0 / d.variances[0]).collect();
    assert!((mean(&prec) - prior.a0 / prior.b0).abs() < 3.0 * sample_sd(&prec) / (t as f64).sqrt());
}

/// Posterior probability of every canonical partition with at most K blocks.
fn partition_posterior(data: &[f64], k: usize, prior: &NIGPrior, alpha: &[f64]) -> HashMap<Vec<u32>, f64> {
    let mut keys = Vec::new();
    let mut logs = Vec::new();
    for_each_set_partition(data.len(), k, |z| {
        let a = Allocation::new(z.to_vec(), k).unwrap();
        keys.push(canonical_labels(z));
        logs.push(log_partition_prior(&a, alpha).unwrap() + log_partition_likelihood(&a, data, prior).unwrap());
    });
    let norm = log_sum_exp(&logs);
    keys.into_iter().zip(logs).map(|(k, l)| (k, (l - norm).exp())).collect()
}

#[test]
fn two_separated_points_split() {
    let data = [-5.0, 5.0];
    let prior = NIGPrior::new(0.0, 0.05, 3.0, 0.5).unwrap();
    let post = partition_posterior(&data, 2, &prior, &[1.0, 1.0]);
    let split = post[&vec![0u32, 1]];
    assert!(split > 0.9);
    let draws = run_gibbs_chain(&data, 2, &prior, &[1.0, 1.0], 2000, 100, &ChainInit::Prior, &mut rng_from_seed(2)).unwrap();
    let freq = draws.iter().filter(|d| d.labels[0] != d.labels[1]).count() as f64 / draws.len() as f64;
    assert!(freq > 0.9, "{freq} vs {split}");
}

#[test]
fn gibbs_partition_frequencies_pass_chi_square() {
    let data = [-1.8, -1.1, -0.2, 0.6, 1.4, 2.3];
    let prior = hyperparams_from_data(&data).unwrap();
    let alpha = [1.0, 1.0];
    let post = partition_posterior(&data, 2, &prior, &alpha);
    let thin = 10;
    let kept = 20_000;
    let draws = run_gibbs_chain(&data, 2, &prior, &alpha, kept * thin, 500, &ChainInit::Quantiles, &mut rng_from_seed(8)).unwrap();
    let mut counts: HashMap<Vec<u32>, f64> = HashMap::new();
    for d in draws.iter().step_by(thin) {
        let labels: Vec<usize> = d.labels.iter().map(|&l| l as usize).collect();
        *counts.entry(canonical_labels(&labels)).or_default() += 1.0;
    }
    let n = kept as f64;
    let stat: f64 = post
        .iter()
        .map(|(key, p)| {
            let e = n * p;
            let o = counts.get(key).copied().unwrap_or(0.0);
            (o - e).powi(2) / e
        })
        .sum();
    let df = (post.len() - 1) as f64;
    let p_value = 1.0 - ChiSquared::new(df).unwrap().cdf(stat);
    assert!(p_value > 0.001, "chi-square {stat:.1} on {df} df, p = {p_value:.2e}");
}

#[test]
fn extreme_priors_keep_the_chain_valid() {
    let data = [-0.4, 0.1, 0.3, 2.0];
    for prior in [NIGPrior::new(0.0, 1e6, 2.0, 1.0).unwrap(), NIGPrior::new(0.0, 1e-4, 1.1, 1e4).unwrap()] {
        let mut rng = rng_from_seed(4);
        let params = fm_sample_prior(3, &prior, &[1.0; 3], &mut rng).unwrap();
        let mut state = GibbsState::new(params, Allocation::new(vec![0, 1, 2, 0], 3).unwrap()).unwrap();
        for _ in 0..200 {
            fm_gibbs_sweep(&mut state, &data, &prior, &[1.0; 3], &mut rng);
            state.params.validate().unwrap();
            assert!(fm_log_likelihood(&state.params, &data).is_finite());
        }
    }
}

#[test]
fn ordinate_without_data_is_the_prior() {
    let prior = NIGPrior::new(0.5, 0.3, 2.5, 1.2).unwrap();
    let alpha = [0.7, 1.3, 2.0];
    let p = FMParams::new(vec![0.0, 1.0, -2.0], vec![0.5, 1.0, 3.0], vec![0.2, 0.5, 0.3]).unwrap();
    let empty = Allocation::new(vec![], 3).unwrap();
    let ord = fm_posterior_ordinate(&p, &empty, &[], &prior, &alpha).unwrap();
    assert!((ord - fm_log_prior(&p, &prior, &alpha)).abs() < 1e-12);
}

#[test]
fn ordinate_is_relabelling_equivariant() {
    let prior = NIGPrior::new(0.0, 0.3, 2.5, 1.2).unwrap();
    let alpha = [1.0; 3];
    let data = [-1.0, 0.2, 0.4, 2.2, 2.9];
    let labels = vec![0, 1, 1, 2, 2];
    let p = FMParams::new(vec![-1.0, 0.3, 2.5], vec![0.5, 0.4, 0.6], vec![0.2, 0.4, 0.4]).unwrap();
    let base = fm_posterior_ordinate(&p, &Allocation::new(labels.clone(), 3).unwrap(), &data, &prior, &alpha).unwrap();
    for perm in all_permutations(3) {
        // Component j moves to slot perm[j], and so do its observations.
        let relabelled: Vec<usize> = labels.iter().map(|&z| perm[z]).collect();
        let a = Allocation::new(relabelled, 3).unwrap();
        let v = fm_posterior_ordinate(&p.permuted(&perm), &a, &data, &prior, &alpha).unwrap();
        assert!((v - base).abs() < 1e-12);
    }
}

#[test]
fn ordinate_integrates_to_one_on_k1() {
    let prior = NIGPrior::new(0.0, 0.5, 2.0, 1.0).unwrap();
    let data = [0.4, -0.6];
    let a = Allocation::new(vec![0, 0], 1).unwrap();
    // Midpoint rule on (μ, log σ²).
    let (nm, ns) = (800, 800);
    let (mlo, mhi, slo, shi) = (-8.0, 8.0, -9.0, 6.0);
    let (hm, hs) = ((mhi - mlo) / nm as f64, (shi - slo) / ns as f64);
    let mut total = 0.0;
    for i in 0..nm {
        let mu = mlo + (i as f64 + 0.5) * hm;
        for j in 0..ns {
            let ls = slo + (j as f64 + 0.5) * hs;
            let p = FMParams::new(vec![mu], vec![ls.exp()], vec![1.0]).unwrap();
            total += (fm_posterior_ordinate(&p, &a, &data, &prior, &[1.0]).unwrap() + ls).exp() * hm * hs;
        }
    }
    assert!((total - 1.0).abs() < 1e-4, "{total}");
}
