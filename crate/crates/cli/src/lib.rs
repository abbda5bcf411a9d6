//! Experiment harness for the ranking-feedback learners: config parsing,
//! batch execution with per-seed traces and summary tables, score-log
//! ingestion, and plot-data aggregation. The binary in `main.rs` is a thin
//! dispatcher over these modules so tests can drive them directly.

pub mod config;
pub mod experiment;
pub mod ingest;
pub mod plotdata;
