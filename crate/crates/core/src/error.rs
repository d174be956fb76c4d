use thiserror::Error;

/// Which design LMI failed, so callers can report it by name.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LmiStage {
    /// Gain synthesis: the Ω-decay inequality together with X0·Y ≻ 0.
    Design,
    /// Trigger parameter LMI in (α, β, δ).
    Trigger,
}

impl std::fmt::Display for LmiStage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            LmiStage::Design => f.write_str("design LMI (gain synthesis, X0·Y ≻ 0)"),
            LmiStage::Trigger => f.write_str("trigger LMI (α, β, δ)"),
        }
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, found {found}")]
    Dimension {
        context: &'static str,
        expected: String,
        found: String,
    },
    #[error("non-finite value in {context} at t = {time}")]
    NonFinite { context: &'static str, time: f64 },
    #[error("matrix is not symmetric (max asymmetry {asymmetry:e})")]
    NotSymmetric { asymmetry: f64 },
    #[error("{0} is not positive definite")]
    NotPositiveDefinite(&'static str),
    #[error("{0} is singular")]
    Singular(&'static str),
    #[error("data matrix [U0; X0] has rank {rank}, full row rank {required} is required")]
    RankDeficient { rank: usize, required: usize },
    #[error("{stage} is infeasible (best margin {margin:e})")]
    Infeasible { stage: LmiStage, margin: f64 },
    #[error("LMI solver hit its iteration cap in {stage}")]
    SolverLimit { stage: LmiStage },
    #[error("eigenvalue iteration did not converge")]
    EigenNoConvergence,
    #[error("identity check failed: {what} residual {residual:e} exceeds {tolerance:e}")]
    Verification {
        what: &'static str,
        residual: f64,
        tolerance: f64,
    },
    #[error("invalid input: {0}")]
    Invalid(String),
    #[error("parse error: {0}")]
    Parse(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::Invalid(msg.into())
}

pub(crate) fn check_dims(
    context: &'static str,
    expected: (usize, usize),
    found: (usize, usize),
) -> Result<()> {
    if expected != found {
        return Err(Error::Dimension {
            context,
            expected: format!("{}×{}", expected.0, expected.1),
            found: format!("{}×{}", found.0, found.1),
        });
    }
    Ok(())
}
