use mixture_evidence::harness::{
    generate_synthetic, ingest_dataset, read_records, run, write_records, RunConfig, SyntheticSpec,
};
use mixture_evidence::mcstats::{mean, sample_sd};

#[test]
fn galaxy_file_has_82_velocities() {
    let d = ingest_dataset(concat!(env!("CARGO_MANIFEST_DIR"), "/../../data/galaxy.txt")).unwrap();
    assert_eq!(d.len(), 82);
    assert!(d.values.iter().all(|&v| (9000.0..35000.0).contains(&v)));
}

#[test]
fn normal_null_moments() {
    let s = generate_synthetic(&SyntheticSpec::normal_null(20_000, 1)).unwrap();
    let m = mean(&s.values);
    let sd = sample_sd(&s.values);
    assert!(m.abs() < 3.0 * 2.0 / (20_000f64).sqrt(), "{m}");
    assert!((sd - 2.0).abs() < 0.05, "{sd}");
}

#[test]
fn three_component_frequencies() {
    let n = 20_000;
    let s = generate_synthetic(&SyntheticSpec::three_component_null(n, 2)).unwrap();
    for (k, w) in [0.3, 0.2, 0.5].iter().enumerate() {
        let f = s.counts[k] as f64 / n as f64;
        let se = (w * (1.0 - w) / n as f64).sqrt();
        assert!((f - w).abs() < 3.0 * se, "component {k}: {f}");
    }
    for (k, mu) in [-3.0, 4.0, 12.0].iter().enumerate() {
        let ys: Vec<f64> = s.values.iter().zip(&s.labels).filter(|(_, &z)| z == k).map(|(&y, _)| y).collect();
        assert!((mean(&ys) - mu).abs() < 3.0 * 2.0 / (ys.len() as f64).sqrt());
    }
}

#[test]
fn runs_are_reproducible_bit_for_bit() {
    let cfg = RunConfig::from_json(
        r#"{"model": {"type": "fm", "k": 2}, "estimator": "chib-partition",
            "tuning": {"T": 2000, "burnin": 200},
            "dataset": {"synthetic": {"means": [-2, 2], "scales": [1, 1], "weights": [0.5, 0.5], "n": 30, "seed": 5}},
            "repetitions": 4, "seed": 17}"#,
    )
    .unwrap();
    let a = run(&cfg, Some(1)).unwrap();
    let b = run(&cfg, Some(3)).unwrap();
    let strip = |r: &mixture_evidence::harness::RunRecord| (r.log_evidence.map(f64::to_bits), r.se_log.map(f64::to_bits), r.seed);
    assert_eq!(a.records.iter().map(strip).collect::<Vec<_>>(), b.records.iter().map(strip).collect::<Vec<_>>());
    let mut buf = Vec::new();
    write_records(&a.records, &mut buf).unwrap();
    let back = read_records(buf.as_slice()).unwrap();
    assert_eq!(back.iter().map(strip).collect::<Vec<_>>(), a.records.iter().map(strip).collect::<Vec<_>>());
}
