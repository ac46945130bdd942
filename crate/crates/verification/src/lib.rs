//! Acceptance experiments for the navigation stack.
//!
//! Each criterion is a function returning an [`Outcome`]; the `acceptance`
//! test target runs them all and prints one line per criterion.

use std::fmt;
use std::time::{Duration, Instant};

pub mod detection;
pub mod filtering;
pub mod lie_oracle;
pub mod metrics;

/// Result of one acceptance criterion.
#[derive(Clone, Debug)]
pub struct Outcome {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
    pub elapsed: Duration,
    pub budget: Duration,
}

impl Outcome {
    /// Runs `check`, timing it; the criterion fails if it overruns `budget`.
    pub fn measure(
        name: &'static str,
        budget: Duration,
        check: impl FnOnce() -> (bool, String),
    ) -> Self {
        let start = Instant::now();
        let (ok, detail) = check();
        let elapsed = start.elapsed();
        Self {
            name,
            passed: ok && elapsed <= budget,
            detail,
            elapsed,
            budget,
        }
    }
}

impl fmt::Display for Outcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "[{}] {} ({:.2} s of {} s): {}",
            if self.passed { "PASS" } else { "FAIL" },
            self.name,
            self.elapsed.as_secs_f64(),
            self.budget.as_secs(),
            self.detail
        )
    }
}

/// Every criterion, in reporting order.
pub fn all_criteria() -> Vec<fn() -> Outcome> {
    vec![
        lie_oracle::exponential_oracle,
        lie_oracle::jacobian_finite_differences,
        filtering::zero_noise_closure,
        filtering::zupt_bias_recovery,
        filtering::motion_constraint_ablation,
        filtering::filter_consistency,
        detection::amvd_baseline,
        metrics::metric_properties,
    ]
}
