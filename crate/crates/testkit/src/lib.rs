//! Independent oracles and randomized suites over the reeltree engine.
//!
//! Each suite takes a case count and returns a [`Tally`] or the first
//! violated property. Runs are seeded, so a failure reproduces exactly.

pub mod bench;
pub mod layout_check;
pub mod metrics_logs;
pub mod planning;
pub mod provenance;
pub mod tree_ops;

use proptest::test_runner::{Config, RngAlgorithm, TestRng, TestRunner};

/// What a suite exercised, for reporting.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Tally {
    pub cases: u64,
    pub steps: u64,
    /// Steps the engine accepted rather than refused.
    pub accepted: u64,
    pub checks: u64,
}

impl std::fmt::Display for Tally {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "{} cases, {} steps ({} accepted), {} checks",
            self.cases, self.steps, self.accepted, self.checks
        )
    }
}

/// A deterministic runner: the same seed generates the same `cases` inputs.
pub fn runner(cases: u32, seed: u8) -> TestRunner {
    let config = Config {
        cases,
        failure_persistence: None,
        ..Config::default()
    };
    TestRunner::new_with_rng(config, TestRng::from_seed(RngAlgorithm::ChaCha, &[seed; 32]))
}

/// Fails the enclosing check with a formatted message.
#[macro_export]
macro_rules! ensure {
    ($cond:expr, $($arg:tt)+) => {{
        let holds: bool = $cond;
        if !holds {
            return Err(format!($($arg)+));
        }
    }};
}
