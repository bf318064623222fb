use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use crate::error::EvidenceError;

/// Which estimator produced an [`EvidenceEstimate`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EstimatorId {
    ArithmeticMean,
    HarmonicMean,
    Chib,
    ChibPermutation,
    ChibRandomPermutation,
    ChibPartition,
    BridgeSampling,
    Smc,
    Sis,
    ChibDpm,
    RlrSis,
    RlrPrior,
}

impl EstimatorId {
    pub const FINITE_MIXTURE: [EstimatorId; 9] = [
        EstimatorId::ArithmeticMean,
        EstimatorId::HarmonicMean,
        EstimatorId::Chib,
        EstimatorId::ChibPermutation,
        EstimatorId::ChibRandomPermutation,
        EstimatorId::ChibPartition,
        EstimatorId::BridgeSampling,
        EstimatorId::Smc,
        EstimatorId::Sis,
    ];

    pub const DPM: [EstimatorId; 3] = [EstimatorId::ChibDpm, EstimatorId::RlrSis, EstimatorId::RlrPrior];

    pub fn as_str(&self) -> &'static str {
        match self {
            EstimatorId::ArithmeticMean => "arithmetic-mean",
            EstimatorId::HarmonicMean => "harmonic-mean",
            EstimatorId::Chib => "chib",
            EstimatorId::ChibPermutation => "chib-permutation",
            EstimatorId::ChibRandomPermutation => "chib-random-permutation",
            EstimatorId::ChibPartition => "chib-partition",
            EstimatorId::BridgeSampling => "bridge-sampling",
            EstimatorId::Smc => "smc",
            EstimatorId::Sis => "sis",
            EstimatorId::ChibDpm => "chib-dpm",
            EstimatorId::RlrSis => "rlr-sis",
            EstimatorId::RlrPrior => "rlr-prior",
        }
    }
}

impl fmt::Display for EstimatorId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for EstimatorId {
    type Err = EvidenceError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let all = EstimatorId::FINITE_MIXTURE.iter().chain(EstimatorId::DPM.iter());
        for id in all {
            if id.as_str() == s {
                return Ok(*id);
            }
        }
        match s {
            "am" => Ok(EstimatorId::ArithmeticMean),
            "hm" => Ok(EstimatorId::HarmonicMean),
            "chib-perm" => Ok(EstimatorId::ChibPermutation),
            "chib-rand-perm" => Ok(EstimatorId::ChibRandomPermutation),
            "bridge" => Ok(EstimatorId::BridgeSampling),
            _ => Err(EvidenceError::Config(format!("unknown estimator '{s}'"))),
        }
    }
}

/// A log-evidence estimate with its Monte Carlo standard error.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvidenceEstimate {
    pub log_evidence: f64,
    /// Standard error of `log_evidence`, when the estimator provides one.
    pub se_log: Option<f64>,
    pub estimator: EstimatorId,
    pub tuning: BTreeMap<String, f64>,
    pub wall_time: f64,
}

impl EvidenceEstimate {
    pub(crate) fn new(estimator: EstimatorId, log_evidence: f64, se_log: Option<f64>, started: Instant) -> Self {
        EvidenceEstimate {
            log_evidence,
            se_log,
            estimator,
            tuning: BTreeMap::new(),
            wall_time: started.elapsed().as_secs_f64(),
        }
    }

    pub(crate) fn with(mut self, key: &str, value: f64) -> Self {
        self.tuning.insert(key.to_string(), value);
        self
    }
}
