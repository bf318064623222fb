//! Run configuration, tuning presets and estimator dispatch.

use super::data::{generate_synthetic, ingest_dataset, Dataset, SyntheticSpec};
use crate::conjugate::{hyperparams_from_data, NIGPrior};
use crate::dpm::evidence::{chib_dpm, rlr_evidence, Adversarial, ChibDpmConfig, MStarRule, RlrConfig};
use crate::dpm::GammaPrior;
use crate::error::{EvidenceError, Result};
use crate::estimate::{EstimatorId, EvidenceEstimate};
use crate::fm::bridge::{bridge_sampling, BridgeConfig};
use crate::fm::chib::{chib, chib_partition, chib_permutation, ChibConfig, PermutationMode};
use crate::fm::evidence::{arithmetic_mean, harmonic_mean, sis_evidence};
use crate::fm::smc::{smc_evidence, SmcConfig};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::PathBuf;

pub type Tuning = BTreeMap<String, f64>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase", deny_unknown_fields)]
pub enum ModelSpec {
    Fm { k: usize },
    Dpm,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", deny_unknown_fields)]
pub enum DatasetSpec {
    File {
        path: PathBuf,
        /// Multiply every observation by this factor.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        scale: Option<f64>,
        /// Keep only the first `take` observations.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        take: Option<usize>,
    },
    Synthetic(SyntheticSpec),
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", deny_unknown_fields)]
pub enum PriorSpec {
    /// Data-dependent hyperparameters from the sample moments and range.
    #[default]
    Raftery,
    Explicit(NIGPrior),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum AlphaSpec {
    Symmetric(f64),
    Vector(Vec<f64>),
}

impl Default for AlphaSpec {
    fn default() -> Self {
        AlphaSpec::Symmetric(1.0)
    }
}

impl AlphaSpec {
    pub fn resolve(&self, k: usize) -> Result<Vec<f64>> {
        let v = match self {
            AlphaSpec::Symmetric(a) => vec![*a; k],
            AlphaSpec::Vector(v) => v.clone(),
        };
        if v.len() != k || v.iter().any(|a| !(a.is_finite() && *a > 0.0)) {
            return Err(EvidenceError::Config(format!("alpha must hold {k} positive values")));
        }
        Ok(v)
    }
}

fn default_reps() -> usize {
    1
}

/// One experiment: a model, an estimator, a dataset and a number of
/// independently seeded repetitions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelSpec,
    pub estimator: EstimatorId,
    #[serde(default)]
    pub tuning: Tuning,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub preset: Option<String>,
    pub dataset: DatasetSpec,
    #[serde(default)]
    pub prior: PriorSpec,
    #[serde(default)]
    pub alpha: AlphaSpec,
    #[serde(default)]
    pub gamma_prior: GammaPrior,
    #[serde(default = "default_reps")]
    pub repetitions: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<PathBuf>,
    /// Reference log evidence; enables the squared-error-vs-time output.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference: Option<f64>,
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: RunConfig = serde_json::from_str(text).map_err(|e| EvidenceError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Check everything that can be checked before sampling.
    pub fn validate(&self) -> Result<()> {
        if self.repetitions == 0 {
            return Err(EvidenceError::Config("repetitions must be at least 1".into()));
        }
        match self.model {
            ModelSpec::Fm { k } => {
                if k == 0 {
                    return Err(EvidenceError::Config("K must be at least 1".into()));
                }
                if !EstimatorId::FINITE_MIXTURE.contains(&self.estimator) {
                    return Err(EvidenceError::Config(format!("{} is not a finite-mixture estimator", self.estimator)));
                }
                self.alpha.resolve(k)?;
            }
            ModelSpec::Dpm => {
                if !EstimatorId::DPM.contains(&self.estimator) {
                    return Err(EvidenceError::Config(format!("{} is not a DPM estimator", self.estimator)));
                }
                self.gamma_prior.validate().map_err(|e| EvidenceError::Config(e.to_string()))?;
            }
        }
        if let Some(name) = &self.preset {
            preset(name)?;
        }
        let allowed = tuning_keys(self.estimator);
        for (key, v) in &self.tuning {
            if !allowed.contains(&key.as_str()) {
                return Err(EvidenceError::Config(format!(
                    "unknown tuning key '{key}' for {}; expected one of {allowed:?}",
                    self.estimator
                )));
            }
            if !v.is_finite() {
                return Err(EvidenceError::Config(format!("tuning value {key} must be finite")));
            }
        }
        if let PriorSpec::Explicit(p) = &self.prior {
            p.validate().map_err(|e| EvidenceError::Config(e.to_string()))?;
        }
        match &self.dataset {
            DatasetSpec::File { scale, take, .. } => {
                if scale.is_some_and(|s| !(s.is_finite() && s != 0.0)) {
                    return Err(EvidenceError::Config("scale must be finite and nonzero".into()));
                }
                if *take == Some(0) {
                    return Err(EvidenceError::Config("take must be positive".into()));
                }
            }
            DatasetSpec::Synthetic(s) => s.validate()?,
        }
        if self.reference.is_some_and(|r| !r.is_finite()) {
            return Err(EvidenceError::Config("reference must be finite".into()));
        }
        let merged = self.resolved_tuning()?;
        Resolved::new(self.estimator, &merged)?;
        Ok(())
    }

    /// Preset tuning for the estimator overlaid with the explicit tuning.
    pub fn resolved_tuning(&self) -> Result<Tuning> {
        let mut t = match &self.preset {
            Some(name) => preset(name)?.tuning.get(&self.estimator).cloned().unwrap_or_default(),
            None => Tuning::new(),
        };
        t.extend(self.tuning.iter().map(|(k, v)| (k.clone(), *v)));
        Ok(t)
    }

    /// Load or simulate the data, applying the dataset transform (or the
    /// preset's when the config gives none).
    pub fn load_dataset(&self) -> Result<Dataset> {
        match &self.dataset {
            DatasetSpec::File { path, scale, take } => {
                let p = match &self.preset {
                    Some(name) => Some(preset(name)?),
                    None => None,
                };
                let scale = scale.or(p.as_ref().and_then(|p| p.scale));
                let take = take.or(p.as_ref().and_then(|p| p.take));
                let mut values = ingest_dataset(path)?.values;
                if let Some(t) = take {
                    if t > values.len() {
                        return Err(EvidenceError::Config(format!("take = {t} exceeds the {} observations", values.len())));
                    }
                    values.truncate(t);
                }
                if let Some(s) = scale {
                    values.iter_mut().for_each(|v| *v *= s);
                }
                Ok(Dataset::new(values))
            }
            DatasetSpec::Synthetic(spec) => Ok(Dataset::new(generate_synthetic(spec)?.values)),
        }
    }

    pub fn resolve_prior(&self, data: &[f64]) -> Result<NIGPrior> {
        match self.prior {
            PriorSpec::Raftery => hyperparams_from_data(data),
            PriorSpec::Explicit(p) => Ok(p),
        }
    }
}

/// Tuning keys each estimator understands.
pub fn tuning_keys(id: EstimatorId) -> &'static [&'static str] {
    match id {
        EstimatorId::ArithmeticMean | EstimatorId::Sis => &["T"],
        EstimatorId::HarmonicMean => &["T", "burnin"],
        EstimatorId::Chib | EstimatorId::ChibPermutation | EstimatorId::ChibPartition => &["T", "burnin", "nw_lag"],
        EstimatorId::ChibRandomPermutation => &["T", "burnin", "nw_lag", "R"],
        EstimatorId::BridgeSampling => &["T0", "T1", "T2", "burnin", "tol", "max_iter"],
        EstimatorId::Smc => &["N", "M", "ess_target"],
        EstimatorId::ChibDpm => &["T1", "burnin", "T2", "M_star", "nw_lag"],
        EstimatorId::RlrSis | EstimatorId::RlrPrior => &["T1", "T2", "burnin"],
    }
}

fn defaults(id: EstimatorId) -> &'static [(&'static str, f64)] {
    match id {
        EstimatorId::ArithmeticMean => &[("T", 1e5)],
        EstimatorId::Sis => &[("T", 2000.0)],
        EstimatorId::HarmonicMean => &[("T", 1e4), ("burnin", 1e3)],
        EstimatorId::Chib | EstimatorId::ChibPermutation => &[("T", 1e4), ("burnin", 1e3)],
        EstimatorId::ChibRandomPermutation => &[("T", 1e4), ("burnin", 1e3), ("R", 100.0)],
        EstimatorId::ChibPartition => &[("T", 5e4), ("burnin", 5e3)],
        EstimatorId::BridgeSampling => {
            &[("T0", 100.0), ("T1", 2000.0), ("T2", 2000.0), ("burnin", 1000.0), ("tol", 1e-10), ("max_iter", 500.0)]
        }
        EstimatorId::Smc => &[("N", 2000.0), ("M", 10.0), ("ess_target", 0.5)],
        EstimatorId::ChibDpm => &[("T1", 1e4), ("burnin", 1e3), ("T2", 2000.0)],
        EstimatorId::RlrSis | EstimatorId::RlrPrior => &[("T1", 2000.0), ("T2", 1e4), ("burnin", 1e3)],
    }
}

/// Tuning with defaults filled in and integer keys checked.
#[derive(Debug, Clone)]
pub(crate) struct Resolved(Tuning);

impl Resolved {
    pub(crate) fn new(id: EstimatorId, given: &Tuning) -> Result<Self> {
        let mut t: Tuning = defaults(id).iter().map(|(k, v)| (k.to_string(), *v)).collect();
        t.extend(given.iter().map(|(k, v)| (k.clone(), *v)));
        let r = Resolved(t);
        for key in tuning_keys(id) {
            if matches!(*key, "tol" | "ess_target" | "M_star") {
                continue;
            }
            if r.0.contains_key(*key) {
                r.count(key)?;
            }
        }
        Ok(r)
    }

    fn count(&self, key: &str) -> Result<usize> {
        let v = self.0[key];
        if !(v >= 0.0 && v.fract() == 0.0 && v <= 1e12) {
            return Err(EvidenceError::Config(format!("tuning {key} must be a nonnegative integer, got {v}")));
        }
        Ok(v as usize)
    }

    fn opt_count(&self, key: &str) -> Result<Option<usize>> {
        if self.0.contains_key(key) {
            self.count(key).map(Some)
        } else {
            Ok(None)
        }
    }

    fn real(&self, key: &str) -> f64 {
        self.0[key]
    }
}

/// Run one estimator once.
#[allow(clippy::too_many_arguments)]
pub fn run_estimator(
    model: ModelSpec,
    id: EstimatorId,
    tuning: &Tuning,
    data: &[f64],
    prior: &NIGPrior,
    alpha: &AlphaSpec,
    gprior: &GammaPrior,
    seed: u64,
) -> Result<EvidenceEstimate> {
    let r = Resolved::new(id, tuning)?;
    match model {
        ModelSpec::Fm { k } => {
            let alpha = alpha.resolve(k)?;
            let chib_cfg = || -> Result<ChibConfig> {
                let mut c = ChibConfig::new(r.count("T")?, r.count("burnin")?, seed);
                c.nw_lag = r.opt_count("nw_lag")?;
                Ok(c)
            };
            match id {
                EstimatorId::ArithmeticMean => arithmetic_mean(data, k, prior, &alpha, r.count("T")?, seed),
                EstimatorId::HarmonicMean => harmonic_mean(data, k, prior, &alpha, &chib_cfg()?),
                EstimatorId::Chib => chib(data, k, prior, &alpha, &chib_cfg()?),
                EstimatorId::ChibPermutation => chib_permutation(data, k, prior, &alpha, &chib_cfg()?, PermutationMode::Full),
                EstimatorId::ChibRandomPermutation => {
                    chib_permutation(data, k, prior, &alpha, &chib_cfg()?, PermutationMode::Random(r.count("R")?))
                }
                EstimatorId::ChibPartition => chib_partition(data, k, prior, &alpha, &chib_cfg()?),
                EstimatorId::BridgeSampling => {
                    let mut c = BridgeConfig::new(r.count("T0")?, r.count("T1")?, r.count("T2")?, r.count("burnin")?, seed);
                    c.tol = r.real("tol");
                    c.max_iter = r.count("max_iter")?;
                    bridge_sampling(data, k, prior, &alpha, &c)
                }
                EstimatorId::Smc => {
                    let mut c = SmcConfig::new(r.count("N")?, r.count("M")?, seed);
                    c.ess_target = r.real("ess_target");
                    smc_evidence(data, k, prior, &alpha, &c)
                }
                EstimatorId::Sis => sis_evidence(data, k, prior, &alpha, r.count("T")?, seed),
                other => Err(EvidenceError::Config(format!("{other} is not a finite-mixture estimator"))),
            }
        }
        ModelSpec::Dpm => match id {
            EstimatorId::ChibDpm => {
                let mut c = ChibDpmConfig::new(r.count("T1")?, r.count("burnin")?, r.count("T2")?, seed);
                if r.0.contains_key("M_star") {
                    c.m_star = MStarRule::Fixed(r.real("M_star"));
                }
                c.nw_lag = r.opt_count("nw_lag")?;
                chib_dpm(data, prior, gprior, &c)
            }
            EstimatorId::RlrSis | EstimatorId::RlrPrior => {
                let adv = if id == EstimatorId::RlrSis { Adversarial::Sis } else { Adversarial::Prior };
                let c = RlrConfig::new(r.count("T1")?, r.count("T2")?, r.count("burnin")?, adv, seed);
                rlr_evidence(data, prior, gprior, &c)
            }
            other => Err(EvidenceError::Config(format!("{other} is not a DPM estimator"))),
        },
    }
}

/// Named tuning for the published experiments.
#[derive(Debug, Clone, PartialEq)]
pub struct Preset {
    pub name: &'static str,
    pub description: &'static str,
    pub tuning: BTreeMap<EstimatorId, Tuning>,
    /// Data transform applied to file datasets unless the config sets one.
    pub scale: Option<f64>,
    pub take: Option<usize>,
}

pub const PRESET_NAMES: [&str; 11] = [
    "galaxy-k3",
    "galaxy-k5",
    "galaxy-k6",
    "galaxy-k8",
    "synth-n1000-k3",
    "synth-n1000-k13",
    "synth-n2000-k3",
    "synth-n2000-k13",
    "galaxy-dpm-n6",
    "galaxy-dpm-n36",
    "galaxy-dpm-n82",
];

fn tuning(pairs: &[(&str, f64)]) -> Tuning {
    pairs.iter().map(|(k, v)| (k.to_string(), *v)).collect()
}

/// Velocities are used in thousands of km/s.
const GALAXY_SCALE: f64 = 1e-3;

pub fn preset(name: &str) -> Result<Preset> {
    use EstimatorId::*;
    let mut t: BTreeMap<EstimatorId, Tuning> = BTreeMap::new();
    let (description, scale, take) = match name {
        "galaxy-k3" | "galaxy-k5" => {
            let sis_t = if name == "galaxy-k3" { 1e3 } else { 6e3 };
            t.insert(Chib, tuning(&[("T", 1e5), ("burnin", 1e4)]));
            t.insert(ChibPermutation, tuning(&[("T", 1e5), ("burnin", 1e4)]));
            t.insert(ChibRandomPermutation, tuning(&[("T", 1e5), ("burnin", 1e4), ("R", 100.0)]));
            t.insert(Smc, tuning(&[("N", 1e4), ("M", 10.0)]));
            t.insert(BridgeSampling, tuning(&[("T1", 12e3), ("T2", 12e3), ("T0", 100.0), ("burnin", 5000.0)]));
            if name == "galaxy-k5" {
                t.insert(ChibPartition, tuning(&[("T", 95_000.0), ("burnin", 5000.0)]));
            } else {
                t.insert(ChibPartition, tuning(&[("T", 1e5), ("burnin", 1e4)]));
            }
            t.insert(Sis, tuning(&[("T", sis_t)]));
            t.insert(ArithmeticMean, tuning(&[("T", 3e6)]));
            ("galaxy velocities, finite mixture", Some(GALAXY_SCALE), None)
        }
        "galaxy-k6" | "galaxy-k8" => {
            let (tt, burn, sis_t, am_t) = if name == "galaxy-k6" { (2e5, 2e4, 7e3, 3e6) } else { (3e5, 3e4, 1e4, 4e6) };
            t.insert(Chib, tuning(&[("T", tt), ("burnin", burn)]));
            t.insert(ChibRandomPermutation, tuning(&[("T", tt), ("burnin", burn), ("R", 100.0)]));
            t.insert(ChibPartition, tuning(&[("T", tt), ("burnin", burn)]));
            t.insert(Smc, tuning(&[("N", 1e4), ("M", 10.0)]));
            t.insert(Sis, tuning(&[("T", sis_t)]));
            t.insert(ArithmeticMean, tuning(&[("T", am_t)]));
            ("galaxy velocities, finite mixture", Some(GALAXY_SCALE), None)
        }
        "synth-n1000-k3" | "synth-n1000-k13" | "synth-n2000-k3" | "synth-n2000-k13" => {
            let big_n = name.contains("n2000");
            let small_k = name.ends_with("-k3");
            t.insert(Smc, tuning(&[("N", 2e4), ("M", 10.0)]));
            t.insert(Sis, tuning(&[("T", if big_n { 1e4 } else { 2e3 })]));
            if small_k {
                t.insert(BridgeSampling, tuning(&[("T1", 12e3), ("T2", 12e3), ("T0", 100.0), ("burnin", 5000.0)]));
            }
            if small_k && !big_n {
                t.insert(ChibPartition, tuning(&[("T", 1e5), ("burnin", 1e4)]));
            }
            ("synthetic six-component data, finite mixture", None, None)
        }
        "galaxy-dpm-n6" | "galaxy-dpm-n36" | "galaxy-dpm-n82" => {
            let (n, post, burn, prior_adv) = match name {
                "galaxy-dpm-n6" => (6, 3e4, 2e3, 2.8e4),
                "galaxy-dpm-n36" => (36, 5e4, 5e3, 4.5e4),
                _ => (82, 1e5, 1e4, 9e4),
            };
            t.insert(ChibDpm, tuning(&[("T1", post), ("burnin", burn), ("T2", 2e3)]));
            // RLR: T1 counts adversarial draws, T2 posterior draws.
            t.insert(RlrSis, tuning(&[("T1", 2e3), ("T2", post), ("burnin", burn)]));
            t.insert(RlrPrior, tuning(&[("T1", prior_adv), ("T2", post), ("burnin", burn)]));
            ("galaxy velocities (first n), Dirichlet process mixture", Some(GALAXY_SCALE), Some(n))
        }
        _ => return Err(EvidenceError::Config(format!("unknown preset '{name}'; known presets: {PRESET_NAMES:?}"))),
    };
    let name = PRESET_NAMES.iter().find(|p| **p == name).copied().expect("matched above");
    Ok(Preset { name, description, tuning: t, scale, take })
}
