//! Independent runs fanned out over a thread pool.
//!
//! With the `parallel` feature (on by default) work is spread with rayon;
//! without it the same functions run sequentially. Results keep input order
//! either way, and each item is computed by the same code, so both paths
//! produce identical results.

use crate::error::ScenarioError;
use crate::qp::{self, QpProblem, QpSettings, QpSolution};
use crate::scenario::Scenario;
use crate::sim::{run_scenario, RunOutput};

/// Maps `f` over `items`, in parallel when the feature is enabled.
pub fn par_map<T, R, F>(items: &[T], f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        items.par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        items.iter().map(f).collect()
    }
}

/// Always sequential; the baseline for benchmarks and cross-checks.
pub fn seq_map<T, R, F>(items: &[T], f: F) -> Vec<R>
where
    F: Fn(&T) -> R,
{
    items.iter().map(f).collect()
}

/// Runs every scenario to completion.
pub fn run_batch(scenarios: &[Scenario]) -> Vec<Result<RunOutput, ScenarioError>> {
    par_map(scenarios, run_scenario)
}

/// Solves a set of independent QPs.
pub fn solve_batch(
    problems: &[QpProblem],
    settings: &QpSettings,
) -> Vec<Result<QpSolution, qp::QpError>> {
    par_map(problems, |p| qp::solve(p, settings))
}

/// True when the crate was built with the rayon backend.
pub const fn is_parallel() -> bool {
    cfg!(feature = "parallel")
}
