//! Online learning and equilibrium computation from ranking feedback.
//!
//! A learner proposes a multiset of actions each round and observes only a
//! permutation of it, sampled from a Plackett-Luce model whose scores are the
//! (hidden) action utilities divided by a temperature `tau`. This crate
//! provides:
//!
//! - the exact Plackett-Luce distribution, marginals, and a seeded sampler
//!   ([`ranking`]);
//! - a pairwise utility estimator that inverts logistic win rates against a
//!   zero-utility reference action, with a computable error bound
//!   ([`estimation`]);
//! - full-information no-regret oracles with numeric feedback — FTRL with
//!   entropic or quadratic regularizers, Hedge, and projected gradient ascent
//!   ([`oracles`]);
//! - ranking-feedback learners that wrap any oracle, covering instantaneous
//!   and time-average ranking bases under full-information and bandit
//!   proposals ([`learners`]);
//! - utility-sequence generators (bounded variation, noise shifts, and the
//!   hard instances used to separate the feedback models) plus the stateful
//!   ranking environment ([`environments`]);
//! - normal-form games where every player learns from rankings, with
//!   coarse-correlated-equilibrium exploitability measurement ([`games`]);
//! - regret and variation accounting ([`metrics`]).
//!
//! All randomness flows through explicitly seeded generators; identical
//! (configuration, seed) pairs produce bitwise-identical traces.

pub mod enumeration;
pub mod environments;
pub mod error;
pub mod estimation;
pub mod games;
pub mod learners;
pub mod metrics;
pub mod oracles;
pub mod ranking;
pub mod stats;

pub use error::{Error, Result};
