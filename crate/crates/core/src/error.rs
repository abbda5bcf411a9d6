//! Error type shared across the crate.

use thiserror::Error;

/// Errors raised by the ranking model, estimators, learners, environments,
/// and game harness.
#[derive(Debug, Error)]
pub enum Error {
    #[error("action set must contain at least two actions, got {0}")]
    ActionSetTooSmall(usize),

    #[error("temperature must be positive and finite, got {0}")]
    InvalidTemperature(f64),

    #[error("utility vector has a non-finite entry at index {0}")]
    NonFiniteUtility(usize),

    #[error("utility entry {value} at index {index} is outside [-1, 1]")]
    UtilityOutOfRange { index: usize, value: f64 },

    #[error("expected {expected} utility entries, got {got}")]
    UtilityLengthMismatch { expected: usize, got: usize },

    #[error("action index {index} is out of range for {count} actions")]
    ActionOutOfRange { index: usize, count: usize },

    #[error("action {0} does not occur in the proposal")]
    ActionNotProposed(usize),

    #[error("proposal must be nonempty")]
    EmptyProposal,

    #[error("ranking is not a permutation of the proposal multiset")]
    NotAPermutation,

    #[error("estimation window is empty")]
    EmptyWindow,

    #[error("estimator window length must be at least 1")]
    InvalidWindowLength,

    #[error("invalid estimator probability parameter p={0}, need 0 < p <= 1")]
    InvalidProposalProbability(f64),

    #[error("invalid failure probability delta={0}, need 0 < delta < 1")]
    InvalidDelta(f64),

    #[error("window variation must be nonnegative and finite, got {0}")]
    InvalidWindowVariation(f64),

    #[error("{0}")]
    InvalidConfig(String),

    #[error("utility sequence lengths mismatch: {0} vs {1}")]
    SequenceLengthMismatch(usize, usize),

    #[error("environment horizon {horizon} exhausted at step {step}")]
    HorizonExhausted { horizon: usize, step: usize },

    #[error("learner temperature {learner} does not match environment temperature {environment}")]
    TemperatureMismatch { learner: f64, environment: f64 },

    #[error("game definition invalid: {0}")]
    InvalidGame(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;
