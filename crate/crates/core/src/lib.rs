//! Offline privacy auditing for smart-speaker ecosystems.
//!
//! The library takes three kinds of evidence collected from an instrumented
//! device and its companion web crawls, all as plain files:
//!
//! * network flow traces (JSONL, one [`trace::FlowRecord`] per line),
//! * header-bidding exports (JSONL, one [`bids::BidRecord`] per line),
//! * skill privacy policies (plain text, one file per skill).
//!
//! From those it attributes every flow to an organization and a purpose,
//! detects identifier syncing between organizations, compares ad bid values
//! across interest personas, and checks whether observed data flows are
//! disclosed in the relevant privacy policies. [`report::run_pipeline`] wires
//! the stages together and produces a deterministic [`report::AuditReport`];
//! the `spkaudit` binary exposes each stage as a subcommand.

pub mod bids;
pub mod bundled;
pub mod config;
pub mod demo;
pub mod endpoint;
pub mod error;
pub mod policy;
pub mod report;
pub mod stats;
pub mod sync;
pub mod trace;

pub use config::AuditConfig;
pub use error::AuditError;
pub use report::{run_pipeline, AuditReport};
