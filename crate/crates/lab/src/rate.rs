//! Empirical convergence rate: slope of log M(T) against log T.

use serde::Serialize;
use signadam_core::diagnostics::condition1_from_moments;
use signadam_core::optimizer::{AdamParams, RunOptions};
use signadam_core::schedules::{min_t_threshold, ScheduleSpec};
use signadam_core::stats::{linear_fit, LinearFit};

use crate::config::{oracle_constants, ExperimentConfig};
use crate::error::{LabError, Result};
use crate::report::{tag, Check, PROTOCOL_NOTE};
use crate::runner::{aggregate, cell_rng, divergence_gate, run_summary, GridPoint, Pool, RunSummary};

pub const MIN_T_POINTS: usize = 4;
/// Smallest accepted `T_max / T_min`.
pub const MIN_T_SPAN: f64 = 64.0;
pub const MIN_SEEDS: usize = 8;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RateFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
    /// `(T, M(T))`
    pub per_t_points: Vec<(u64, f64)>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ScheduleEcho {
    pub horizon: u64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub schedule: Option<ScheduleSpec>,
}

impl ScheduleEcho {
    pub fn new(horizon: u64, params: &AdamParams, schedule: Option<ScheduleSpec>) -> Self {
        ScheduleEcho {
            horizon,
            lr: params.lr.at(0),
            beta1: params.beta1,
            beta2: params.beta2,
            epsilon: params.epsilon,
            schedule,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct RateReport {
    pub protocol: &'static str,
    pub fit: RateFit,
    pub points: Vec<GridPoint>,
    /// `M(T)` nonincreasing up to twice the combined standard error.
    pub monotone: bool,
    pub schedules: Vec<ScheduleEcho>,
    pub checks: Vec<Check>,
    pub warnings: Vec<String>,
    #[serde(skip)]
    pub runs: Vec<RunSummary>,
}

pub fn validate_grid(t_grid: &[u64]) -> Result<()> {
    if t_grid.len() < MIN_T_POINTS {
        return Err(LabError::config(format!("t_grid needs at least {MIN_T_POINTS} points, got {}", t_grid.len())));
    }
    if t_grid[0] == 0 || t_grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(LabError::config("t_grid must be positive and strictly increasing"));
    }
    let span = *t_grid.last().unwrap() as f64 / t_grid[0] as f64;
    if span < MIN_T_SPAN {
        return Err(LabError::config(format!("t_grid spans {span}x; at least {MIN_T_SPAN}x is required")));
    }
    Ok(())
}

/// `M(T)` at every grid point and the log-log fit through them.
pub fn estimate_rate(cfg: &ExperimentConfig, pool: &Pool) -> Result<RateReport> {
    validate_grid(&cfg.t_grid)?;
    cfg.require_seeds(MIN_SEEDS)?;
    let problem = cfg.build_problem()?;
    let opts = RunOptions { form: cfg.form, divergence_cap: cfg.divergence_cap, dump_every: None };

    let mut setups = Vec::new();
    for &t in &cfg.t_grid {
        let (params, spec) = cfg.params_at(&problem, t)?;
        params.validate()?;
        setups.push((t, params, spec));
    }
    let cells: Vec<(usize, u64)> = (0..setups.len()).flat_map(|i| cfg.seeds.iter().map(move |&s| (i, s))).collect();
    let results = pool.map(&cells, |&(i, seed)| {
        let (t, params, _) = &setups[i];
        let mut rng = cell_rng(cfg.seed, tag::RATE, *t, seed, 0);
        run_summary(&problem, params, *t, seed, &mut rng, &opts)
    });
    let runs: Vec<RunSummary> = results.into_iter().collect::<Result<_>>()?;

    let mut warnings = Vec::new();
    divergence_gate("rate", &runs, &mut warnings)?;
    let per_t: Vec<&[RunSummary]> = runs.chunks(cfg.seeds.len()).collect();
    let points: Vec<GridPoint> = setups.iter().zip(&per_t).map(|((t, ..), r)| aggregate(*t, r)).collect();
    if points.iter().any(|p| p.runs == p.diverged) {
        return Err(LabError::Failed("rate: every run diverged at some T".into()));
    }

    let xs: Vec<f64> = points.iter().map(|p| (p.horizon as f64).ln()).collect();
    let ys: Vec<f64> = points.iter().map(|p| p.mean.ln()).collect();
    let LinearFit { slope, intercept, r_squared } = linear_fit(&xs, &ys)?;
    let fit =
        RateFit { slope, intercept, r_squared, per_t_points: points.iter().map(|p| (p.horizon, p.mean)).collect() };
    let monotone = points.windows(2).all(|w| {
        let tol = 2.0 * (w[0].std_err.powi(2) + w[1].std_err.powi(2)).sqrt();
        w[1].mean <= w[0].mean + tol
    });
    if !monotone {
        warnings.push("M(T) increases somewhere on the grid beyond twice the Monte-Carlo error".into());
    }

    // Threshold on T, with C0, C1 and v̄ read off the runs.
    if let Some(sc) = &cfg.schedule {
        for ((t, _, spec), r) in setups.iter().zip(&per_t) {
            let Some(spec) = spec else { continue };
            let ok: Vec<&RunSummary> = r.iter().filter(|x| !x.diverged).collect();
            let n = ok.len() as f64;
            let mean = ok.iter().map(|x| x.metric).sum::<f64>() / n;
            let mean_sq = ok.iter().map(|x| x.mean_grad_sq).sum::<f64>() / n;
            let c0 = condition1_from_moments(mean, mean_sq, (*t as f64).sqrt()).c0;
            let c1 = ok.iter().map(|x| x.max_c1).fold(1.0, f64::max);
            let v_bar = ok.iter().map(|x| x.min_u_mean).fold(f64::INFINITY, f64::min);
            let consts = oracle_constants(&problem, sc.sigma_hat, c0, c1, 1.0);
            if v_bar > 0.0 {
                if let Some(w) = min_t_threshold(&consts, &spec.with_v_bar(v_bar))?.warning {
                    warnings.push(format!("{w} (v_bar estimated post hoc as {v_bar:.3e})"));
                }
            }
        }
    }

    let mut checks = Vec::new();
    if let Some([lo, hi]) = cfg.rate.expected_slope {
        checks.push(Check::new("slope", (lo..=hi).contains(&slope), format!("slope {slope:.4} in [{lo}, {hi}]")));
    }
    if let Some(min) = cfg.rate.min_r_squared {
        checks.push(Check::new("r_squared", r_squared >= min, format!("r^2 {r_squared:.4} >= {min}")));
    }
    let schedules = setups.into_iter().map(|(t, p, s)| ScheduleEcho::new(t, &p, s)).collect();
    Ok(RateReport { protocol: PROTOCOL_NOTE, fit, points, monotone, schedules, checks, warnings, runs })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_preconditions() {
        assert!(validate_grid(&[1024, 4096]).is_err());
        assert!(validate_grid(&[16, 32, 64, 128]).is_err());
        assert!(validate_grid(&[16, 64, 32, 2048]).is_err());
        validate_grid(&[16, 64, 256, 1024]).unwrap();
    }
}
