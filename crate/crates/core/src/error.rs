use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the crate.
#[derive(Debug, Error)]
pub enum Error {
    /// A configuration or instance field violates its constraint.
    #[error("invalid {field}: {reason}")]
    Validation { field: String, reason: String },

    #[error("client index {index} out of range (n = {n})")]
    ClientIndex { index: usize, n: usize },

    #[error("dimension mismatch for {what}: expected {expected}, got {got}")]
    Dimension {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    /// The weighted lower-level Hessian is not numerically SPD.
    #[error("weighted Hessian is singular or ill-conditioned (condition number {condition:e})")]
    Singular { condition: f64 },

    /// A non-finite value appeared during the iteration.
    #[error("divergence in round {round}: non-finite {variable}{}", location(.client, .step))]
    Divergence {
        round: usize,
        variable: &'static str,
        client: Option<usize>,
        step: Option<usize>,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}:{line}: {reason}")]
    Parse {
        path: PathBuf,
        line: usize,
        reason: String,
    },
}

fn location(client: &Option<usize>, step: &Option<usize>) -> String {
    match (client, step) {
        (Some(c), Some(k)) => format!(" at client {c}, local step {k}"),
        (Some(c), None) => format!(" at client {c}"),
        _ => " in server update".to_string(),
    }
}

impl Error {
    pub(crate) fn invalid(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Validation {
            field: field.into(),
            reason: reason.into(),
        }
    }

    /// Attach the round index to a divergence error raised below the runner.
    pub(crate) fn at_round(self, t: usize) -> Self {
        match self {
            Error::Divergence {
                variable,
                client,
                step,
                ..
            } => Error::Divergence {
                round: t,
                variable,
                client,
                step,
            },
            other => other,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
