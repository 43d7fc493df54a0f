use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Errors produced anywhere in the discovery pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("integration failed at step {step} (t = {t}): non-finite state")]
    Integration { step: usize, t: f64 },

    #[error("solution diverged at t = {t} (|state| > 1e12)")]
    Divergence { t: f64 },

    #[error("rollout produced a non-finite state at step {step}")]
    Rollout { step: usize },

    #[error("domain error in `{op}` at operand {value}")]
    Domain { op: &'static str, value: f64 },

    #[error("insufficient excitation richness (condition number {cond:.3e})")]
    RankDeficient { cond: f64 },

    #[error("bad initialization: {0}")]
    BadInitialization(String),

    #[error("diverged, reduce learning rate (loss {loss:.3e} vs initial {initial:.3e})")]
    Diverged { loss: f64, initial: f64 },

    #[error("operator alphabet cannot fit data")]
    NoViableExpression,

    #[error("unbound variable `{0}`")]
    UnboundVariable(String),

    #[error("parse error at byte {offset}: {msg}")]
    Parse { offset: usize, msg: String },

    #[error("unsupported model file version {0}")]
    UnknownVersion(u32),

    #[error("dataset error: {0}")]
    Dataset(String),

    #[error("zero range in ground truth")]
    ZeroRange,

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error("stage `{stage}` failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Tags the error with the pipeline stage it came from.
    pub fn in_stage(self, stage: &'static str) -> Self {
        match self {
            e @ Error::Stage { .. } => e,
            e => Error::Stage {
                stage,
                source: Box::new(e),
            },
        }
    }

    /// The error without any stage tag.
    pub fn root(&self) -> &Error {
        match self {
            Error::Stage { source, .. } => source.root(),
            e => e,
        }
    }

    /// True for failures caused by numerical blow-up rather than bad input.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self.root(),
            Error::Integration { .. }
                | Error::Divergence { .. }
                | Error::Rollout { .. }
                | Error::Diverged { .. }
                | Error::BadInitialization(_)
                | Error::NoViableExpression
        )
    }
}
