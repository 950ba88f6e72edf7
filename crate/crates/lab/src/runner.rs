//! Fan-out of independent runs over a worker pool.
//!
//! Each cell draws from its own stream, keyed by `(experiment, T, replicate,
//! cell)`, and results come back in input order, so the thread count never
//! changes a number.

use rayon::prelude::*;
use serde::Serialize;
use signadam_core::optimizer::{run, AdamParams, RunOptions, Trajectory};
use signadam_core::problems::Problem;
use signadam_core::rng::stream_id;
use signadam_core::{Error as CoreError, RngStream, SampleStats};

use crate::error::{LabError, Result};

/// Share of diverged runs above which an experiment gives up.
pub const MAX_DIVERGED_SHARE: f64 = 0.25;

#[derive(Debug)]
pub struct Pool {
    inner: rayon::ThreadPool,
}

impl Pool {
    /// `threads = 0` picks rayon's default.
    pub fn new(threads: usize) -> Result<Self> {
        let inner = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .map_err(|e| LabError::config(format!("thread pool: {e}")))?;
        Ok(Pool { inner })
    }

    /// Maps `f` over `items` in parallel, keeping input order.
    pub fn map<T, R, F>(&self, items: &[T], f: F) -> Vec<R>
    where
        T: Sync,
        R: Send,
        F: Fn(&T) -> R + Sync + Send,
    {
        self.inner.install(|| items.par_iter().map(f).collect())
    }
}

pub fn cell_rng(master: u64, experiment: u64, horizon: u64, replicate: u64, cell: u64) -> RngStream {
    RngStream::new(master, stream_id(&[experiment, horizon, replicate, cell]))
}

/// What one run contributes to an experiment.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RunSummary {
    pub horizon: u64,
    pub replicate: u64,
    /// `(1/T) Σ ‖∇F(x_t)‖₂`; NaN when diverged.
    pub metric: f64,
    pub mean_grad_sq: f64,
    pub mean_u_grad_l1: f64,
    /// Smallest per-step mean of `u`.
    pub min_u_mean: f64,
    pub max_u: f64,
    /// Largest `√d ‖∇F‖₂ / ‖∇F‖₁` along the run.
    pub max_c1: f64,
    pub diverged: bool,
}

impl RunSummary {
    pub fn from_trajectory(horizon: u64, replicate: u64, d: usize, tr: &Trajectory) -> Self {
        let mut min_u_mean = f64::INFINITY;
        let mut max_u: f64 = 0.0;
        let mut max_c1: f64 = 1.0;
        for r in &tr.rows {
            min_u_mean = min_u_mean.min(r.u_mean);
            max_u = max_u.max(r.u_max);
            if r.grad_l1 > 0.0 {
                max_c1 = max_c1.max((d as f64).sqrt() * r.grad_l2 / r.grad_l1);
            }
        }
        RunSummary {
            horizon,
            replicate,
            metric: tr.mean_grad_l2(),
            mean_grad_sq: tr.mean_grad_l2_sq(),
            mean_u_grad_l1: tr.mean_u_grad_l1(),
            min_u_mean,
            max_u,
            max_c1,
            diverged: false,
        }
    }

    fn diverged(horizon: u64, replicate: u64) -> Self {
        RunSummary {
            horizon,
            replicate,
            metric: f64::NAN,
            mean_grad_sq: f64::NAN,
            mean_u_grad_l1: f64::NAN,
            min_u_mean: f64::NAN,
            max_u: f64::NAN,
            max_c1: f64::NAN,
            diverged: true,
        }
    }
}

/// Runs one cell. Divergence is a result, not an error.
pub fn run_summary(
    problem: &Problem,
    params: &AdamParams,
    horizon: u64,
    replicate: u64,
    rng: &mut RngStream,
    opts: &RunOptions,
) -> Result<RunSummary> {
    match run(problem, params, horizon, rng, opts) {
        Ok(tr) => Ok(RunSummary::from_trajectory(horizon, replicate, problem.dim(), &tr)),
        Err(CoreError::Divergence { .. }) => Ok(RunSummary::diverged(horizon, replicate)),
        Err(e) => Err(e.into()),
    }
}

/// Seed-averaged metric at one grid point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GridPoint {
    pub horizon: u64,
    pub mean: f64,
    pub std_err: f64,
    pub runs: usize,
    pub diverged: usize,
}

pub fn aggregate(horizon: u64, runs: &[RunSummary]) -> GridPoint {
    let mut s = SampleStats::new();
    let mut diverged = 0;
    for r in runs {
        if r.diverged {
            diverged += 1;
        } else {
            s.push(r.metric);
        }
    }
    GridPoint { horizon, mean: s.mean(), std_err: s.std_error(), runs: runs.len(), diverged }
}

/// Excludes diverged runs with a warning; errors when more than a quarter diverged.
pub fn divergence_gate(label: &str, runs: &[RunSummary], warnings: &mut Vec<String>) -> Result<()> {
    let bad = runs.iter().filter(|r| r.diverged).count();
    if bad == 0 {
        return Ok(());
    }
    let share = bad as f64 / runs.len() as f64;
    if share > MAX_DIVERGED_SHARE {
        return Err(LabError::Failed(format!("{label}: {bad} of {} runs diverged", runs.len())));
    }
    warnings.push(format!("{label}: excluded {bad} diverged run(s) of {}", runs.len()));
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use signadam_core::problems::{make_problem, ProblemKind, ProblemSpec};

    #[test]
    fn pool_preserves_order() {
        let items: Vec<u64> = (0..100).collect();
        for threads in [1, 3] {
            let out = Pool::new(threads).unwrap().map(&items, |x| x * 2);
            assert_eq!(out, items.iter().map(|x| x * 2).collect::<Vec<_>>());
        }
    }

    #[test]
    fn divergence_is_counted() {
        let p = make_problem(&ProblemSpec::new(ProblemKind::Quartic, 4)).unwrap();
        let params = AdamParams::constant(0.0, 0.0, 0.5, 1e-8);
        let mut rng = cell_rng(1, 0, 10, 0, 0);
        let opts = RunOptions { divergence_cap: 1e-3, ..RunOptions::default() };
        let s = run_summary(&p, &params, 10, 0, &mut rng, &opts).unwrap();
        assert!(s.diverged && s.metric.is_nan());

        let mut warnings = Vec::new();
        let runs =
            [s, RunSummary { diverged: false, metric: 1.0, ..s }, RunSummary { diverged: false, metric: 1.0, ..s }];
        assert!(divergence_gate("x", &runs, &mut warnings).is_err());
        let many: Vec<_> = std::iter::repeat(runs[1]).take(7).chain([s]).collect();
        divergence_gate("x", &many, &mut warnings).unwrap();
        assert_eq!(warnings.len(), 1);
        assert_eq!(aggregate(10, &many).diverged, 1);
        assert_eq!(aggregate(10, &many).mean, 1.0);
    }
}
