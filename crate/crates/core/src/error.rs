use thiserror::Error;

/// Faults raised by the model, controller and simulator.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch in {what}: expected {expected}, got {got}")]
    Dimension {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("inertia matrix numerically singular (condition number {condition:.3e})")]
    SingularInertia { condition: f64 },

    #[error("muscle `{muscle}` has a degenerate path (attachment points coincide)")]
    DegeneratePath { muscle: String },

    #[error("tendon length must be positive, got {0}")]
    NonPositiveTendon(f64),

    #[error("matrix `{0}` is not symmetric positive definite")]
    NotPositiveDefinite(&'static str),

    #[error("error-system matrix is not Hurwitz: eigenvalue {re:+.6e}{im:+.6e}i has non-negative real part")]
    NotHurwitz { re: f64, im: f64 },

    #[error("linear system is singular: {0}")]
    Singular(&'static str),

    #[error("control authority lost: every singular value of the torque/tendon Jacobian is below threshold")]
    ControlAuthorityLost,

    #[error("simulation diverged at t = {t:.6} s: {reason}")]
    Divergence { t: f64, reason: String },

    #[error("simulation step failed at t = {t:.6} s: {source}")]
    StepFailed { t: f64, source: Box<Error> },
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn check_len(what: &'static str, expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(Error::Dimension {
            what,
            expected,
            got,
        });
    }
    Ok(())
}

pub(crate) fn check_finite(what: &'static str, values: &[f64]) -> Result<()> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(what))
    }
}
