use serde::Serialize;

/// A named pass/fail verdict carried by every report.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl Check {
    pub fn new(name: impl Into<String>, passed: bool, detail: impl Into<String>) -> Self {
        Check { name: name.into(), passed, detail: detail.into() }
    }
}

pub fn all_pass(checks: &[Check]) -> bool {
    checks.iter().all(|c| c.passed)
}

/// Stream-key namespaces, one per experiment.
pub(crate) mod tag {
    pub const RUN: u64 = 1;
    pub const RATE: u64 = 2;
    pub const ABLATION: u64 = 3;
    pub const SWEEP: u64 = 4;
    pub const AUDIT: u64 = 5;
    pub const CONDITIONS: u64 = 6;
    pub const LEMMAS: u64 = 7;
}

/// Stated in every synthetic-rate report.
pub const PROTOCOL_NOTE: &str =
    "T grid, seed count and problem family are this harness's own protocol for synthetic problems";
