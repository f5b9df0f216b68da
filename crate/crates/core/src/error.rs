use thiserror::Error;

/// Errors produced by the preference-game library.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum PrefError {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("shape mismatch: expected {expected}, found {found}")]
    Shape { expected: usize, found: usize },

    #[error("invalid state: {0}")]
    State(String),

    #[error("training diverged at step {step}: {reason}")]
    Training { step: usize, reason: String },

    #[error("generation failed: {0}")]
    Generation(String),

    #[error("equilibrium oracle exhausted its budget (best gap {best_gap:.3e})")]
    Oracle { best_gap: f64, best: Vec<f64> },

    #[error("invalid data: {0}")]
    Data(String),
}

impl PrefError {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        PrefError::Domain(msg.into())
    }
}

pub type Result<T> = std::result::Result<T, PrefError>;

pub(crate) fn check_len(expected: usize, found: usize) -> Result<()> {
    if expected == found {
        Ok(())
    } else {
        Err(PrefError::Shape { expected, found })
    }
}
