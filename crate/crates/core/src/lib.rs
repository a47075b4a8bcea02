//! Audit toolkit for drift-induced label leakage in multi-sensor gas
//! recording datasets.
//!
//! The pipeline ingests trials into a uniformly sampled resistance store,
//! detects recording sessions, measures baseline drift, probes whether gas
//! identity is predictable from pre-exposure windows, and proposes a
//! minimally drift-affected subset. A synthetic generator with known drift
//! supplies ground truth for every probe.

pub mod config;
pub mod curation;
pub mod drift;
pub mod error;
pub mod ingest;
pub mod probes;
pub mod report;
pub mod rng;
pub mod schedule;
pub mod stats;
pub mod synth;

pub use config::AuditConfig;
pub use error::{Error, Result};
pub use ingest::{Dataset, Protocol, TrialMeta, TrialSeries};
pub use probes::DatasetView;
pub use report::{run_audit, AuditVerdict};
