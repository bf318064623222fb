//! Dataset ingestion and synthetic mixture data.

use crate::error::{EvidenceError, Result};
use crate::rng::rng_from_seed;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::path::Path;

/// Observations with a checksum of their binary representation.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub values: Vec<f64>,
    pub checksum: String,
}

impl Dataset {
    pub fn new(values: Vec<f64>) -> Self {
        let checksum = checksum(&values);
        Dataset { values, checksum }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// SHA-256 of the little-endian bytes of the values, hex encoded.
pub fn checksum(values: &[f64]) -> String {
    let mut h = Sha256::new();
    for v in values {
        h.update(v.to_le_bytes());
    }
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

/// Parse one number per line; blank lines and `#` comments are skipped.
pub fn parse_dataset(text: &str) -> Result<Vec<f64>> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let v: f64 = line
            .parse()
            .map_err(|_| EvidenceError::Parse { line: i + 1, message: format!("not a number: '{line}'") })?;
        if !v.is_finite() {
            return Err(EvidenceError::Parse { line: i + 1, message: format!("non-finite value '{line}'") });
        }
        out.push(v);
    }
    if out.is_empty() {
        return Err(EvidenceError::invalid("dataset contains no observations"));
    }
    Ok(out)
}

pub fn ingest_dataset(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| EvidenceError::Io(format!("{}: {e}", path.display())))?;
    Ok(Dataset::new(parse_dataset(&text)?))
}

/// A finite Gaussian mixture to simulate from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSpec {
    pub means: Vec<f64>,
    /// Component standard deviations.
    pub scales: Vec<f64>,
    pub weights: Vec<f64>,
    pub n: usize,
    pub seed: u64,
}

impl SyntheticSpec {
    pub fn k0(&self) -> usize {
        self.means.len()
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.means.len();
        if k == 0 || self.scales.len() != k || self.weights.len() != k {
            return Err(EvidenceError::Config("synthetic spec needs equally long, nonempty means/scales/weights".into()));
        }
        if self.means.iter().any(|m| !m.is_finite()) {
            return Err(EvidenceError::Config("synthetic means must be finite".into()));
        }
        if self.scales.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
            return Err(EvidenceError::Config("synthetic scales must be positive".into()));
        }
        if self.weights.iter().any(|w| !(*w >= 0.0)) || (self.weights.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(EvidenceError::Config("synthetic weights must lie on the simplex".into()));
        }
        Ok(())
    }

    /// One normal component, mean 0 and scale 2.
    pub fn normal_null(n: usize, seed: u64) -> Self {
        SyntheticSpec { means: vec![0.0], scales: vec![2.0], weights: vec![1.0], n, seed }
    }

    /// Three components: means (-3, 4, 12), scales 2, weights (0.3, 0.2, 0.5).
    pub fn three_component_null(n: usize, seed: u64) -> Self {
        SyntheticSpec {
            means: vec![-3.0, 4.0, 12.0],
            scales: vec![2.0; 3],
            weights: vec![0.3, 0.2, 0.5],
            n,
            seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticData {
    pub values: Vec<f64>,
    /// Generating component of every observation.
    pub labels: Vec<usize>,
    pub counts: Vec<usize>,
}

/// Draw `n` observations sequentially, so smaller `n` with the same seed
/// gives a prefix.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<SyntheticData> {
    spec.validate()?;
    let mut rng = rng_from_seed(spec.seed);
    let cum: Vec<f64> = spec
        .weights
        .iter()
        .scan(0.0, |acc, w| {
            *acc += w;
            Some(*acc)
        })
        .collect();
    let total = *cum.last().unwrap();
    let mut values = Vec::with_capacity(spec.n);
    let mut labels = Vec::with_capacity(spec.n);
    let mut counts = vec![0; spec.k0()];
    for _ in 0..spec.n {
        let u = rand::Rng::random::<f64>(&mut rng) * total;
        let k = cum.iter().position(|&c| u < c).unwrap_or(spec.k0() - 1);
        let z: f64 = StandardNormal.sample(&mut rng);
        values.push(spec.means[k] + spec.scales[k] * z);
        labels.push(k);
        counts[k] += 1;
    }
    Ok(SyntheticData { values, labels, counts })
}
