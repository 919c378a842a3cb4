use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, found {found}")]
    DimensionMismatch {
        context: &'static str,
        expected: String,
        found: String,
    },

    #[error("rank {rank} exceeds the smaller dimension {max}")]
    RankTooLarge { rank: usize, max: usize },

    #[error("invalid data: {0}")]
    InvalidData(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    /// The objective became non-finite (or a log-link predictor left the
    /// guarded range) even after the step-halving restarts.
    #[error("fit diverged: {reason} (step history: {})", format_steps(.step_history))]
    Diverged {
        reason: String,
        step_history: Vec<(f64, f64)>,
    },
}

fn format_steps(steps: &[(f64, f64)]) -> String {
    if steps.is_empty() {
        return "none".to_string();
    }
    steps
        .iter()
        .map(|(d, t)| format!("delta={d:.3e} tau={t:.3e}"))
        .collect::<Vec<_>>()
        .join("; ")
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn dim_mismatch(
    context: &'static str,
    expected: impl ToString,
    found: impl ToString,
) -> Error {
    Error::DimensionMismatch {
        context,
        expected: expected.to_string(),
        found: found.to_string(),
    }
}
