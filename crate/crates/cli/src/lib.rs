//! Experiment harness: configuration, JSONL completion-record ingestion for
//! model-agnostic best-of-N analysis, pipeline orchestration, report
//! emission, and the verification suites behind `sharpen verify`.

// `!(x > 0.0)` deliberately rejects NaN along with the out-of-range values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analyze;
pub mod config;
pub mod experiment;
pub mod records;
pub mod report;
pub mod verify;

/// Version string embedded in every report so results are attributable to
/// the code that produced them.
pub fn version_tag() -> String {
    format!("{}-{}", env!("CARGO_PKG_NAME"), env!("CARGO_PKG_VERSION"))
}
