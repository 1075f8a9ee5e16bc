use std::fmt;

use thiserror::Error;

/// Pipeline stage an error originated from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Phase1,
    Phase2,
    Decay,
    Phase3,
    Attack,
    Sim,
}

impl Phase {
    pub fn label(self) -> &'static str {
        match self {
            Phase::Phase1 => "phase1",
            Phase::Phase2 => "phase2",
            Phase::Decay => "decay",
            Phase::Phase3 => "phase3",
            Phase::Attack => "attack",
            Phase::Sim => "sim",
        }
    }
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in `{operand}`: expected {expected}, got {actual}")]
    DimensionMismatch {
        operand: &'static str,
        expected: String,
        actual: String,
    },

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("controller returned a non-finite control at step {step}")]
    NonFiniteControl { step: usize },

    #[error("non-finite state observed at step {step} (last finite norm {last_norm:e})")]
    NonFiniteState { step: usize, last_norm: f64 },

    #[error("system not {k}-step controllable")]
    NotControllable { k: usize },

    #[error("unstable closed loop: spectral radius {rho}")]
    UnstableClosedLoop { rho: f64 },

    #[error("certificate not found: {reason}")]
    CertificateNotFound { reason: String },

    #[error("probe scaling not representable: epsilon_0 = {value:e}")]
    ProbeScalingNotRepresentable { value: f64 },

    #[error("probe scaling overflow at input coordinate {index}")]
    ProbeScalingOverflow { index: usize },

    #[error("state index {index} missing: only {available} states recorded")]
    MissingState { index: usize, available: usize },

    #[error("estimates not controllable; increase epsilon accuracy or check k, kappa")]
    EstimatesNotControllable,

    #[error("affine constraint operator is numerically rank-deficient")]
    ConstraintRankDeficient,

    #[error("SDP infeasible or ill-conditioned: residual {residual:e} after {iterations} iterations")]
    SdpInfeasible { residual: f64, iterations: usize },

    #[error("Sigma_xx block is singular")]
    SingularSigmaXx,

    #[error("recovered controller fails the witness check: ||L|| = {witness_norm} > {bound}")]
    WitnessCheckFailed { witness_norm: f64, bound: f64 },

    #[error("controller not stabilizing at decay step {step} (||x|| = {norm:e}); prior bounds (k, kappa, beta) likely violated")]
    NotStabilizing { step: usize, norm: f64 },

    #[error("default constants exceed floating range ({detail}); supply an epsilon override")]
    ConstantsOutOfRange { detail: String },

    #[error("regret unavailable outside simulation mode")]
    RegretUnavailable,

    #[error("controller is not deterministic: step {step} produced different controls for the same history")]
    NonDeterministicController { step: usize },

    #[error("{phase}: {source}")]
    InPhase {
        phase: Phase,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub(crate) fn dims(operand: &'static str, expected: impl ToString, actual: impl ToString) -> Self {
        Error::DimensionMismatch {
            operand,
            expected: expected.to_string(),
            actual: actual.to_string(),
        }
    }

    /// Tags the error with the pipeline phase it came from.
    pub fn in_phase(self, phase: Phase) -> Self {
        match self {
            e @ Error::InPhase { .. } => e,
            e => Error::InPhase {
                phase,
                source: Box::new(e),
            },
        }
    }

    /// Phase tag, if one was attached.
    pub fn phase(&self) -> Option<Phase> {
        match self {
            Error::InPhase { phase, .. } => Some(*phase),
            _ => None,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
