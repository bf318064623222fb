//! Acceptance criteria. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any fails.

use mixture_evidence::conjugate::{cluster_log_marginal, hyperparams_from_data, predictive_log_ratio};
use mixture_evidence::dpm::evidence::{chib_dpm, rlr_evidence, Adversarial, ChibDpmConfig, RlrConfig};
use mixture_evidence::dpm::{dpm_log_prior_z, GammaPrior};
use mixture_evidence::fm::bridge::{bridge_sampling, BridgeConfig};
use mixture_evidence::fm::chib::{chib, chib_partition, chib_permutation, ChibConfig, PermutationMode};
use mixture_evidence::fm::evidence::{arithmetic_mean, sis_evidence};
use mixture_evidence::fm::smc::{smc_evidence, SmcConfig};
use mixture_evidence::fm::ChainInit;
use mixture_evidence::harness::{bf_paths, generate_synthetic, ingest_dataset, preset, BfConfig, SyntheticSpec};
use mixture_evidence::mcstats::{default_nw_lag, mean, newey_west_variance, sample_sd};
use mixture_evidence::oracle::{dpm_exact_evidence, fm_exact_evidence, gauss_laguerre, DEFAULT_QUAD_NODES};
use mixture_evidence::partitions::{
    big_to_f64, canonical_labels, for_each_allocation, for_each_set_partition, log_partition_prior, partitions_count,
};
use mixture_evidence::rng::{rng_from_seed, substream};
use mixture_evidence::{Allocation, ClusterSuffStats, EstimatorId, EvidenceEstimate, NIGPrior, Result};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use std::collections::HashSet;
use std::path::Path;
use std::time::{Duration, Instant};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

/// The n = 8 two-component instance shared by criteria 1, 6 and 7.
struct Small {
    data: Vec<f64>,
    prior: NIGPrior,
    alpha: Vec<f64>,
    exact: f64,
}

fn small_instance() -> Small {
    let spec = SyntheticSpec { means: vec![-2.0, 2.0], scales: vec![1.0, 1.0], weights: vec![0.5, 0.5], n: 8, seed: 2024 };
    let data = generate_synthetic(&spec).unwrap().values;
    let prior = hyperparams_from_data(&data).unwrap();
    let alpha = vec![1.0, 1.0];
    let exact = fm_exact_evidence(&data, 2, &prior, &alpha).unwrap();
    Small { data, prior, alpha, exact }
}

fn criterion_1(s: &Small) -> Outcome {
    let started = Instant::now();
    let (d, p, a) = (&s.data[..], &s.prior, &s.alpha[..]);
    let runs: Vec<(&str, Result<EvidenceEstimate>, bool)> = vec![
        ("arithmetic-mean", arithmetic_mean(d, 2, p, a, 1_000_000, 11), false),
        ("chib", chib(d, 2, p, a, &ChibConfig::new(20_000, 1000, 12)), false),
        ("chib-permutation", chib_permutation(d, 2, p, a, &ChibConfig::new(20_000, 1000, 13), PermutationMode::Full), true),
        ("chib-partition", chib_partition(d, 2, p, a, &ChibConfig::new(50_000, 1000, 14)), false),
        ("bridge-sampling", bridge_sampling(d, 2, p, a, &BridgeConfig::new(100, 5000, 5000, 1000, 15)), true),
        ("sis", sis_evidence(d, 2, p, a, 100_000, 17), true),
    ];
    let mut pass = true;
    let mut parts = Vec::new();
    for (name, est, low_variance) in runs {
        match est {
            Ok(e) => {
                let diff = e.log_evidence - s.exact;
                let se = e.se_log.unwrap_or(f64::NAN);
                let ok = diff.abs() <= 3.0 * se && (!low_variance || diff.abs() <= 0.1);
                pass &= ok;
                parts.push(format!("{name} {diff:+.4} (se {se:.4})"));
            }
            Err(err) => {
                pass = false;
                parts.push(format!("{name} error: {err}"));
            }
        }
    }
    // The SMC estimator reports no standard error; its spread comes from
    // ten independent replicates and the first one is judged against it.
    let smc: Result<Vec<f64>> = (0..10u64)
        .into_par_iter()
        .map(|i| smc_evidence(d, 2, p, a, &SmcConfig::new(4000, 10, 100 + i)).map(|e| e.log_evidence))
        .collect();
    match smc {
        Ok(v) => {
            let se = sample_sd(&v);
            let diff = v[0] - s.exact;
            pass &= diff.abs() <= 3.0 * se;
            parts.push(format!("smc {diff:+.4} (replicate sd {se:.4})"));
        }
        Err(err) => {
            pass = false;
            parts.push(format!("smc error: {err}"));
        }
    }
    let elapsed = started.elapsed();
    pass &= elapsed < Duration::from_secs(120);
    outcome(pass, format!("exact {:.4}; {}; {:.1}s", s.exact, parts.join(", "), elapsed.as_secs_f64()))
}

fn criterion_2() -> Outcome {
    let started = Instant::now();
    let spec = SyntheticSpec { means: vec![-2.0, 2.0], scales: vec![1.0, 1.0], weights: vec![0.5, 0.5], n: 6, seed: 606 };
    let data = generate_synthetic(&spec).unwrap().values;
    let prior = hyperparams_from_data(&data).unwrap();
    let g = GammaPrior::new(1.0, 1.0).unwrap();
    let exact = dpm_exact_evidence(&data, &prior, &g, DEFAULT_QUAD_NODES).unwrap();
    let t = &preset("galaxy-dpm-n6").unwrap().tuning;
    let get = |id: EstimatorId, k: &str| t[&id][k] as usize;
    let runs = [
        (
            "chib-dpm",
            chib_dpm(
                &data,
                &prior,
                &g,
                &ChibDpmConfig::new(get(EstimatorId::ChibDpm, "T1"), get(EstimatorId::ChibDpm, "burnin"), get(EstimatorId::ChibDpm, "T2"), 21),
            ),
        ),
        (
            "rlr-sis",
            rlr_evidence(
                &data,
                &prior,
                &g,
                &RlrConfig::new(get(EstimatorId::RlrSis, "T1"), get(EstimatorId::RlrSis, "T2"), get(EstimatorId::RlrSis, "burnin"), Adversarial::Sis, 22),
            ),
        ),
        (
            "rlr-prior",
            rlr_evidence(
                &data,
                &prior,
                &g,
                &RlrConfig::new(
                    get(EstimatorId::RlrPrior, "T1"),
                    get(EstimatorId::RlrPrior, "T2"),
                    get(EstimatorId::RlrPrior, "burnin"),
                    Adversarial::Prior,
                    23,
                ),
            ),
        ),
    ];
    let mut pass = true;
    let mut parts = Vec::new();
    for (name, est) in runs {
        match est {
            Ok(e) => {
                let diff = e.log_evidence - exact;
                let se = e.se_log.unwrap_or(f64::NAN);
                pass &= diff.abs() <= 0.1 && diff.abs() <= 3.0 * se;
                parts.push(format!("{name} {diff:+.4} (se {se:.4})"));
            }
            Err(err) => {
                pass = false;
                parts.push(format!("{name} error: {err}"));
            }
        }
    }
    let elapsed = started.elapsed();
    pass &= elapsed < Duration::from_secs(120);
    outcome(pass, format!("exact {exact:.4}; {}; {:.1}s", parts.join(", "), elapsed.as_secs_f64()))
}

fn criterion_3() -> Outcome {
    let started = Instant::now();
    let spec = SyntheticSpec { means: vec![-10.0, 0.0, 10.0], scales: vec![1.0; 3], weights: vec![0.3, 0.3, 0.4], n: 300, seed: 33 };
    let sim = generate_synthetic(&spec).unwrap();
    let prior = hyperparams_from_data(&sim.values).unwrap();
    let alpha = [1.0; 3];
    // Components are ten standard deviations apart, so the generating
    // labels are the MAP allocation.
    let map = Allocation::new(sim.labels.clone(), 3).unwrap();
    let mut cfg = ChibConfig::new(10_000, 1000, 31);
    cfg.init = ChainInit::Allocation(map);
    let plain = chib(&sim.values, 3, &prior, &alpha, &cfg);
    let perm = chib_permutation(&sim.values, 3, &prior, &alpha, &cfg, PermutationMode::Full);
    let elapsed = started.elapsed();
    match (plain, perm) {
        (Ok(a), Ok(b)) => {
            let gap = b.log_evidence - a.log_evidence;
            let target = 6f64.ln();
            let pass = (gap - target).abs() <= 0.3 && elapsed < Duration::from_secs(60);
            outcome(pass, format!("gap {gap:.4} vs log 3! = {target:.4} (tol 0.3); {:.1}s", elapsed.as_secs_f64()))
        }
        (a, b) => outcome(false, format!("errors: {:?} {:?}", a.err(), b.err())),
    }
}

fn criterion_4() -> Outcome {
    let started = Instant::now();
    let big = big_to_f64(&partitions_count(82, 8));
    let lead = (big / 1e69 * 100.0).round() / 100.0;
    let mut pass = lead == 2.80;
    let mut worst_count = 0usize;
    for n in 1..=10 {
        for k in 1..=4 {
            // Distinct groupings among all labelled allocations.
            let mut seen: HashSet<Vec<u32>> = HashSet::new();
            for_each_allocation(n, k, |z| {
                seen.insert(canonical_labels(z));
            });
            let brute = seen.len();
            if partitions_count(n, k).to_string() != brute.to_string() {
                worst_count += 1;
            }
        }
    }
    pass &= worst_count == 0;
    let mut worst_sum = 0.0f64;
    for n in 1..=8 {
        for k in 1..=3 {
            for a in [0.3, 1.0, 2.5] {
                let alpha = vec![a; k];
                let mut terms = Vec::new();
                for_each_set_partition(n, k, |z| {
                    let alloc = Allocation::new(z.to_vec(), k).unwrap();
                    terms.push(log_partition_prior(&alloc, &alpha).unwrap().exp());
                });
                worst_sum = worst_sum.max((terms.iter().sum::<f64>() - 1.0).abs());
            }
        }
    }
    pass &= worst_sum <= 1e-10;
    outcome(
        pass,
        format!(
            "S(82,8) = {big:.4e} -> {lead:.2}e69; brute-force mismatches {worst_count}; max |prior sum - 1| = {worst_sum:.1e}; {:.1}s",
            started.elapsed().as_secs_f64()
        ),
    )
}

/// SIS length for each K: the tabulated value where one exists, otherwise
/// the value of the next tabulated K.
fn galaxy_sis_t(k: usize) -> usize {
    let name = match k {
        2 | 3 => "galaxy-k3",
        4 | 5 => "galaxy-k5",
        6 => "galaxy-k6",
        _ => "galaxy-k8",
    };
    preset(name).unwrap().tuning[&EstimatorId::Sis]["T"] as usize
}

fn criterion_5() -> Outcome {
    let started = Instant::now();
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/galaxy.txt");
    let mut data = match ingest_dataset(&path) {
        Ok(d) => d.values,
        Err(e) => return outcome(false, format!("cannot read galaxy data: {e}")),
    };
    let scale = preset("galaxy-k5").unwrap().scale.unwrap();
    data.iter_mut().for_each(|v| *v *= scale);
    let prior = hyperparams_from_data(&data).unwrap();
    let ks: Vec<usize> = (2..=8).collect();
    let means: Vec<f64> = ks
        .iter()
        .map(|&k| {
            let alpha = vec![1.0; k];
            let runs: Vec<f64> = (0..20u64)
                .into_par_iter()
                .map(|s| sis_evidence(&data, k, &prior, &alpha, galaxy_sis_t(k), 500 + 20 * k as u64 + s).unwrap().log_evidence)
                .collect();
            mean(&runs)
        })
        .collect();
    let best = ks[means.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).unwrap().0];
    let elapsed = started.elapsed();
    let table: Vec<String> = ks.iter().zip(&means).map(|(k, m)| format!("K={k}: {m:.3}")).collect();
    outcome(
        best == 5 && elapsed < Duration::from_secs(1800),
        format!("argmax K={best}; {}; {:.1}s", table.join(", "), elapsed.as_secs_f64()),
    )
}

fn criterion_6(s: &Small) -> Outcome {
    let started = Instant::now();
    let (d, p, a) = (&s.data[..], &s.prior, &s.alpha[..]);
    type Runner<'a> = Box<dyn Fn(u64) -> Result<EvidenceEstimate> + Sync + 'a>;
    let runners: Vec<(&str, Runner)> = vec![
        ("arithmetic-mean", Box::new(|seed| arithmetic_mean(d, 2, p, a, 100_000, seed))),
        ("sis", Box::new(|seed| sis_evidence(d, 2, p, a, 10_000, seed))),
        ("smc", Box::new(|seed| smc_evidence(d, 2, p, a, &SmcConfig::new(1000, 10, seed)))),
    ];
    let mut pass = true;
    let mut parts = Vec::new();
    for (name, f) in &runners {
        let ratios: Result<Vec<f64>> = (0..50u64)
            .into_par_iter()
            .map(|i| f(6000 + i).map(|e| (e.log_evidence - s.exact).exp()))
            .collect();
        match ratios {
            Ok(r) => {
                let m = mean(&r);
                let se = sample_sd(&r) / (r.len() as f64).sqrt();
                pass &= (m - 1.0).abs() <= 3.0 * se;
                parts.push(format!("{name} mean ratio {m:.4} (se {se:.4})"));
            }
            Err(e) => {
                pass = false;
                parts.push(format!("{name} error: {e}"));
            }
        }
    }
    outcome(pass, format!("{}; {:.1}s", parts.join(", "), started.elapsed().as_secs_f64()))
}

fn criterion_7(s: &Small) -> Outcome {
    let started = Instant::now();
    let (d, p, a) = (&s.data[..], &s.prior, &s.alpha[..]);
    type Runner<'a> = Box<dyn Fn(u64) -> Result<EvidenceEstimate> + Sync + 'a>;
    let runners: Vec<(&str, Runner)> = vec![
        ("sis", Box::new(|seed| sis_evidence(d, 2, p, a, 2000, seed))),
        ("chib-partition", Box::new(|seed| chib_partition(d, 2, p, a, &ChibConfig::new(5000, 500, seed)))),
    ];
    let mut pass = true;
    let mut parts = Vec::new();
    for (name, f) in &runners {
        let runs: Result<Vec<(f64, f64)>> = (0..50u64)
            .into_par_iter()
            .map(|i| f(7000 + i).map(|e| (e.log_evidence, e.se_log.unwrap_or(f64::NAN))))
            .collect();
        match runs {
            Ok(v) => {
                let est: Vec<f64> = v.iter().map(|x| x.0).collect();
                let se: Vec<f64> = v.iter().map(|x| x.1).collect();
                let sd = sample_sd(&est);
                let reported = mean(&se);
                let ratio = reported / sd;
                pass &= (0.5..=2.0).contains(&ratio);
                parts.push(format!("{name} reported {reported:.4} vs empirical {sd:.4} (ratio {ratio:.2})"));
            }
            Err(e) => {
                pass = false;
                parts.push(format!("{name} error: {e}"));
            }
        }
    }
    outcome(pass, format!("{}; {:.1}s", parts.join(", "), started.elapsed().as_secs_f64()))
}

fn criterion_8() -> Outcome {
    let started = Instant::now();
    let grid = vec![10, 25, 50, 100, 200];
    let cfg = BfConfig::new(SyntheticSpec::normal_null(0, 8), grid, 50, 88);
    match bf_paths(&cfg, None) {
        Ok(rep) => {
            let fr: Vec<f64> = rep.positive_fraction.iter().map(|x| x.1).collect();
            let failures = rep.cells.iter().filter(|c| c.error.is_some()).count();
            let monotone = fr.windows(2).all(|w| w[1] >= w[0]);
            let last = *fr.last().unwrap();
            let elapsed = started.elapsed();
            let pass = monotone && last >= 0.9 && failures == 0 && elapsed < Duration::from_secs(1200);
            let table: Vec<String> = rep.positive_fraction.iter().map(|(n, f)| format!("n={n}: {f:.2}")).collect();
            outcome(pass, format!("{}; failed cells {failures}; {:.1}s", table.join(", "), elapsed.as_secs_f64()))
        }
        Err(e) => outcome(false, format!("error: {e}")),
    }
}

fn criterion_9() -> Outcome {
    let started = Instant::now();
    let mut rng = rng_from_seed(9);
    let prior = NIGPrior::new(0.3, 0.7, 2.1, 1.4).unwrap();

    // Batch marginal against the chain of one-step predictives.
    let mut worst_conj = 0.0f64;
    for _ in 0..200 {
        let n = rng.random_range(1..40);
        let ys: Vec<f64> = (0..n).map(|_| { let e: f64 = StandardNormal.sample(&mut rng); 3.0 * e }).collect();
        let batch = cluster_log_marginal(&ClusterSuffStats::from_slice(&ys), &prior).unwrap();
        let mut stats = ClusterSuffStats::empty();
        let mut inc = 0.0;
        for &y in &ys {
            inc += predictive_log_ratio(&stats, y, &prior).unwrap();
            stats.add(y);
        }
        worst_conj = worst_conj.max((batch - inc).abs());
    }

    // Generalized Gauss–Laguerre moments and DPM quadrature convergence.
    let mut worst_quad = 0.0f64;
    for alpha in [0.0, 0.5, 2.0] {
        let (x, lw) = gauss_laguerre(DEFAULT_QUAD_NODES, alpha).unwrap();
        for p in 0..4 {
            let q: f64 = x.iter().zip(&lw).map(|(xi, l)| (l + p as f64 * xi.ln()).exp()).sum();
            // E[X^p] under Gamma(alpha + 1, 1).
            let exact: f64 = (0..p).map(|j| alpha + 1.0 + j as f64).product();
            worst_quad = worst_quad.max((q - exact).abs() / exact);
        }
    }
    let data = [-1.2, 0.4, 2.2, 2.5, -0.3, 1.1, 3.0, -2.0];
    let dp = hyperparams_from_data(&data).unwrap();
    for g in [GammaPrior::new(1.0, 1.0).unwrap(), GammaPrior::new(3.0, 0.5).unwrap()] {
        let a = dpm_exact_evidence(&data, &dp, &g, DEFAULT_QUAD_NODES).unwrap();
        let b = dpm_exact_evidence(&data, &dp, &g, 2 * DEFAULT_QUAD_NODES).unwrap();
        worst_quad = worst_quad.max((a - b).abs());
    }

    // Ewens probability against the sequential urn in a shuffled order.
    let mut worst_urn = 0.0f64;
    for _ in 0..500 {
        let n = rng.random_range(1..12);
        let z: Vec<usize> = (0..n).map(|_| rng.random_range(0..4)).collect();
        let m: f64 = rng.random_range(0.05..20.0);
        let alloc = Allocation::new(z.clone(), 4).unwrap();
        let direct = dpm_log_prior_z(&alloc, m).unwrap();
        let mut order: Vec<usize> = (0..n).collect();
        for i in (1..n).rev() {
            order.swap(i, rng.random_range(0..=i));
        }
        let mut counts = [0usize; 4];
        let mut urn = 0.0;
        for (i, &idx) in order.iter().enumerate() {
            let c = counts[z[idx]];
            urn += if c == 0 { m.ln() } else { (c as f64).ln() } - (m + i as f64).ln();
            counts[z[idx]] += 1;
        }
        worst_urn = worst_urn.max((direct - urn).abs());
    }

    // Newey–West on AR(1) with rho = 0.5.
    let t = 100_000;
    let rho = 0.5;
    let mut r = substream(9, 1);
    let mut x = 0.0f64;
    let series: Vec<f64> = (0..t)
        .map(|_| {
            let e: f64 = StandardNormal.sample(&mut r);
            x = rho * x + e;
            x
        })
        .collect();
    let nw = newey_west_variance(&series, default_nw_lag(t)).unwrap();
    let sigma2 = 1.0 / (1.0 - rho * rho);
    let target = sigma2 * (1.0 + rho) / (1.0 - rho) / t as f64;
    let nw_rel = (nw - target).abs() / target;

    let elapsed = started.elapsed();
    let pass = worst_conj <= 1e-10 && worst_quad <= 1e-5 && worst_urn <= 1e-12 && nw_rel <= 0.1 && elapsed < Duration::from_secs(30);
    outcome(
        pass,
        format!(
            "conjugate {worst_conj:.1e}, quadrature {worst_quad:.1e}, urn {worst_urn:.1e}, Newey-West rel err {nw_rel:.3}; {:.1}s",
            elapsed.as_secs_f64()
        ),
    )
}

type Criterion<'a> = (&'static str, Box<dyn Fn() -> Outcome + 'a>);

fn main() {
    let small = small_instance();
    let criteria: Vec<Criterion> = vec![
        ("1 finite-mixture oracle agreement", Box::new(|| criterion_1(&small))),
        ("2 DPM oracle agreement", Box::new(criterion_2)),
        ("3 label-switching gap", Box::new(criterion_3)),
        ("4 partition combinatorics", Box::new(criterion_4)),
        ("5 galaxy model selection", Box::new(criterion_5)),
        ("6 linear-domain unbiasedness", Box::new(|| criterion_6(&small))),
        ("7 standard-error calibration", Box::new(|| criterion_7(&small))),
        ("8 Bayes-factor consistency", Box::new(criterion_8)),
        ("9 exactness kernels", Box::new(criterion_9)),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (name, f) in &criteria {
        if !filter.is_empty() && !filter.iter().any(|p| name.starts_with(p.as_str())) {
            continue;
        }
        let o = f();
        println!("{} criterion {name}: {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
        if !o.pass {
            failed += 1;
        }
    }
    if failed > 0 {
        eprintln!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
