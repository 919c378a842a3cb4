use std::path::{Path, PathBuf};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("{}: {msg}", location(.path, *.line))]
    Ingest {
        path: PathBuf,
        line: Option<usize>,
        msg: String,
    },

    #[error("cannot write {}: {msg}", .path.display())]
    Output { path: PathBuf, msg: String },

    #[error("fit diverged: {reason}; steps tried: {}", format_history(.step_history))]
    Diverged {
        reason: String,
        step_history: Vec<(f64, f64)>,
    },
}

fn location(path: &Path, line: Option<usize>) -> String {
    match line {
        Some(l) => format!("{}:{l}", path.display()),
        None => path.display().to_string(),
    }
}

fn format_history(h: &[(f64, f64)]) -> String {
    h.iter()
        .map(|(d, t)| format!("delta={d:.4e} tau={t:.4e}"))
        .collect::<Vec<_>>()
        .join("; ")
}

impl CliError {
    /// 0 success, 2 config, 3 ingestion, 4 divergence.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::Output { .. } => 2,
            CliError::Ingest { .. } => 3,
            CliError::Diverged { .. } => 4,
        }
    }

    pub(crate) fn ingest(path: &Path, line: Option<usize>, msg: impl Into<String>) -> Self {
        CliError::Ingest {
            path: path.to_path_buf(),
            line,
            msg: msg.into(),
        }
    }

    pub(crate) fn output(path: &Path, err: impl std::fmt::Display) -> Self {
        CliError::Output {
            path: path.to_path_buf(),
            msg: err.to_string(),
        }
    }
}

/// Routes library errors: divergence keeps its step history, data problems
/// are attributed to `source` when given, everything else is configuration.
pub(crate) fn from_core(err: netresp::Error, source: Option<&Path>) -> CliError {
    use netresp::Error as E;
    match err {
        E::Diverged {
            reason,
            step_history,
        } => CliError::Diverged {
            reason,
            step_history,
        },
        E::InvalidData(_) | E::DimensionMismatch { .. } if source.is_some() => {
            CliError::ingest(source.expect("checked"), None, err.to_string())
        }
        other => CliError::Config(other.to_string()),
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;
