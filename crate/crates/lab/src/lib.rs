//! Experiment harness, file formats and CLI around `signadam-core`.
//!
//! Each experiment takes an [`config::ExperimentConfig`] and a
//! [`runner::Pool`] and returns a serializable report with pass/fail
//! [`report::Check`]s. The `signadam` binary wires them to subcommands.

// `!(x > 0.0)` is deliberate: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod ablation;
pub mod audit;
pub mod cli;
pub mod conditions;
pub mod config;
pub mod error;
pub mod lemmas;
pub mod output;
pub mod rate;
pub mod report;
pub mod runner;
pub mod sweep;

pub use error::{LabError, Result};
