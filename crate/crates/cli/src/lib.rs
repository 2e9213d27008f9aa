//! Experiment harness: configuration, metric ledgers, and the multi-seed
//! comparison protocol around the core transfer library.

pub mod config;
pub mod experiment;
pub mod metrics;
