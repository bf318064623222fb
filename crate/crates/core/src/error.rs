use thiserror::Error;

/// Errors produced by the evidence library.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum EvidenceError {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("degenerate data: {0}")]
    DegenerateData(String),

    #[error("asymmetric Dirichlet concentration is not label-invariant on partitions: {0:?}")]
    AsymmetricAlpha(Vec<f64>),

    #[error("enumeration guard exceeded: {0}")]
    GuardExceeded(String),

    #[error("degenerate estimate: {0}")]
    DegenerateEstimate(String),

    #[error("reference partition visited {visits} times (< {required}); run a longer chain")]
    InsufficientOccupancy { visits: usize, required: usize },

    #[error("bridge sampling did not converge after {iterations} iterations (last log-evidence trace: {trace:?})")]
    NoConvergence { iterations: usize, trace: Vec<f64> },

    #[error("particle degeneracy (ESS {ess:.3}) at temperature trace {temperatures:?}")]
    ParticleDegeneracy { ess: f64, temperatures: Vec<f64> },

    #[error("quadrature did not converge: {0}")]
    Quadrature(String),

    #[error("could not bracket the log quasi-likelihood maximiser (IS estimates {is_adversarial:.4}, {is_posterior:.4})")]
    Bracket { is_adversarial: f64, is_posterior: f64 },

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("config error: {0}")]
    Config(String),

    #[error("io error: {0}")]
    Io(String),
}

impl EvidenceError {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        EvidenceError::InvalidInput(msg.into())
    }
}

impl From<std::io::Error> for EvidenceError {
    fn from(e: std::io::Error) -> Self {
        EvidenceError::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, EvidenceError>;
