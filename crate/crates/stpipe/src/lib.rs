//! Low-latency simultaneous speech translation pipeline, simulated end to end.
//!
//! The crate wires a mediator-routed session graph (gateway, speech middleware,
//! text middleware, shared mock backends) over an in-process topic broker and
//! drives it on a deterministic virtual clock. The [`eval`] module scores the
//! resulting message logs: first-unchanged latency, flickering rate, WER and
//! BLEU. The [`harness`] module generates synthetic corpora, runs experiment
//! matrices and emits JSON/CSV reports.

pub mod backend;
pub mod broker;
pub mod eval;
pub mod gateway;
pub mod harness;
pub mod mediator;
pub mod speech;
pub mod text;
pub mod types;
