//! Experiment harness: property suites, benchmarks, toy training,
//! extrapolation, and head analysis, with CSV/manifest reporting. The `pape`
//! binary is a thin CLI over these modules.

pub mod alloc_meter;
pub mod analyze;
pub mod bench;
pub mod config;
pub mod extrapolate;
pub mod report;
pub mod task;
pub mod train;
pub mod verify;
