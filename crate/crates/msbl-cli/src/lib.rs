//! Experiment runner library: configuration, file formats, and
//! orchestration for the multi-scale bandit toolkit. The `msbl` binary is a
//! thin layer over this crate; integration tests drive the same entry
//! points.

pub mod config;
pub mod format;
pub mod runner;
