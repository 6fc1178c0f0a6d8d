use std::io;

use thiserror::Error;

/// Errors produced anywhere in the pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("input error: {0}")]
    Input(String),

    #[error("parameter error: {0}")]
    Parameter(String),

    #[error("certificate error: {0}")]
    Certificate(String),

    #[error("unsupported certificate: {0}")]
    UnsupportedCertificate(String),

    #[error("dwell-time violation: switch from mode {from} to mode {to} requested with counter {counter} < {limit}")]
    DwellViolation {
        from: usize,
        to: usize,
        counter: usize,
        limit: usize,
    },

    #[error("network error: {0}")]
    Network(String),

    #[error("format error: {0}")]
    Format(String),

    #[error("unsupported format version {found} (expected {expected})")]
    Version { found: u32, expected: u32 },

    #[error("synthesis infeasible: empty fixed point after {iterations} iteration(s)")]
    SynthesisInfeasible { iterations: usize },

    #[error("refinement-domain error{}: {detail}", step.map(|s| format!(" at step {s}")).unwrap_or_default())]
    RefinementDomain { step: Option<usize>, detail: String },

    #[error("invariant violation: {0}")]
    Invariant(String),

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
