//! Independent solves fanned out over a thread pool (or run in order).
//!
//! Results always come back in input order, so parallel and sequential
//! execution produce identical output apart from wall-clock columns.

use std::time::Instant;

use crate::analysis::Solution;
use crate::error::{Result, SolverError};
use crate::l0::{solve_l0, L0Options};
use crate::model::LiftedProblem;
use crate::outer::{solve_relaxed, OuterOptions, RegimeSpec, Relaxation};
use crate::penalties::PenaltyConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Execution {
    Sequential,
    /// Rayon pool; degrades to sequential without the `parallel` feature.
    Parallel,
}

impl Default for Execution {
    fn default() -> Self {
        if cfg!(feature = "parallel") {
            Execution::Parallel
        } else {
            Execution::Sequential
        }
    }
}

/// `items.map(f)` preserving order.
pub fn map_ordered<T, R, F>(items: &[T], exec: Execution, f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    match exec {
        #[cfg(feature = "parallel")]
        Execution::Parallel => {
            use rayon::prelude::*;
            items.par_iter().map(f).collect()
        }
        _ => items.iter().map(f).collect(),
    }
}

/// Solver settings shared by every relaxation.
#[derive(Debug, Clone, Default)]
pub struct SolveSettings {
    pub outer: OuterOptions,
    pub l0: L0Options,
}

/// Dispatch to the ℓ1, piecewise-quadratic or ℓ0 solver.
///
/// `NotConverged` is returned as an error carrying the last iterate.
pub fn solve(
    lifted: &LiftedProblem,
    relaxation: Relaxation,
    penalty: &PenaltyConfig,
    settings: &SolveSettings,
) -> Result<Solution> {
    match relaxation {
        Relaxation::L0 => solve_l0(lifted, penalty.gamma, &settings.l0).map(|o| o.solution),
        _ => solve_relaxed(
            lifted,
            &RegimeSpec::for_relaxation(relaxation, penalty.clone()),
            &settings.outer,
        ),
    }
}

/// Accept a capped run as a result, keeping other errors.
pub fn accept_capped(res: Result<Solution>) -> Result<Solution> {
    match res {
        Err(SolverError::NotConverged(sol)) => Ok(*sol),
        other => other,
    }
}

/// One row of a γ sweep.
#[derive(Debug, Clone)]
pub struct SweepRow {
    pub gamma: f64,
    pub j_upper: f64,
    pub j_vertex_max: f64,
    pub n_zeros: usize,
    pub iters: usize,
    pub wall_ms: f64,
    pub solution: Solution,
}

/// Solve once per `γ`; capped runs are kept (their status says so).
pub fn sweep_gammas(
    lifted: &LiftedProblem,
    relaxation: Relaxation,
    base: &PenaltyConfig,
    gammas: &[f64],
    settings: &SolveSettings,
    exec: Execution,
) -> Vec<Result<SweepRow>> {
    map_ordered(gammas, exec, |&gamma| {
        let start = Instant::now();
        let penalty = PenaltyConfig { gamma, ..base.clone() };
        let sol = accept_capped(solve(lifted, relaxation, &penalty, settings))?;
        Ok(SweepRow {
            gamma,
            j_upper: sol.j_upper,
            j_vertex_max: sol.j_vertex_max(),
            n_zeros: sol.n_zeros,
            iters: sol.iterations,
            wall_ms: start.elapsed().as_secs_f64() * 1e3,
            solution: sol,
        })
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn order_preserved() {
        let items: Vec<u64> = (0..200).collect();
        let seq = map_ordered(&items, Execution::Sequential, |x| x * x);
        let par = map_ordered(&items, Execution::Parallel, |x| x * x);
        assert_eq!(seq, par);
        assert_eq!(seq[17], 289);
    }
}
