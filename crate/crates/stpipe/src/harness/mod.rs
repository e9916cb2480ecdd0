//! Experiment driver: synthetic corpora, a deterministic virtual clock, the
//! discrete-event engine, experiment scenarios and report emission.

pub mod clock;
pub mod config;
pub mod corpus;
pub mod engine;
pub mod report;
pub mod scenarios;
