//! Dimension sweep: best constant learning rate against `d`, and the
//! scheduled run's metric across `d` and `ε`.

use serde::Serialize;
use signadam_core::optimizer::{AdamParams, RunOptions};
use signadam_core::problems::{make_problem, Problem};
use signadam_core::schedules::schedule_beta1;
use signadam_core::stats::linear_fit;

use crate::config::ExperimentConfig;
use crate::error::{LabError, Result};
use crate::report::{tag, Check, PROTOCOL_NOTE};
use crate::runner::{aggregate, cell_rng, divergence_gate, run_summary, Pool, RunSummary};

#[derive(Debug, Clone, Serialize)]
pub struct LrCurve {
    pub d: usize,
    /// `(γ, M)` over the grid.
    pub grid: Vec<(f64, f64)>,
    pub argmin: f64,
    /// Parabolic refinement of `log M` against `log γ` around the argmin.
    pub best_lr: f64,
    pub at_edge: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct ScheduledPoint {
    pub d: usize,
    pub epsilon: f64,
    pub lr: f64,
    pub metric: f64,
    pub std_err: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepReport {
    pub protocol: &'static str,
    pub horizon: u64,
    pub beta: f64,
    pub curves: Vec<LrCurve>,
    /// Slope of `log best γ` against `log d`.
    pub lr_slope: f64,
    pub lr_r_squared: f64,
    pub scheduled: Vec<ScheduledPoint>,
    /// Worst `max/min` of the scheduled metric across `d`, over `ε`.
    pub d_ratio: f64,
    /// Worst `(max − min)/min` across `ε`, over `d`.
    pub eps_spread: f64,
    pub checks: Vec<Check>,
    pub warnings: Vec<String>,
}

pub fn lr_grid(lo: f64, hi: f64, per_octave: u32) -> Result<Vec<f64>> {
    if !(lo > 0.0 && hi > lo && per_octave > 0) {
        return Err(LabError::config("sweep needs 0 < lr_min < lr_max and steps_per_octave >= 1"));
    }
    let k = per_octave as f64;
    let (a, b) = ((lo.log2() * k).ceil() as i64, (hi.log2() * k).floor() as i64);
    if b - a < 2 {
        return Err(LabError::config("learning-rate grid needs at least three points"));
    }
    Ok((a..=b).map(|i| (i as f64 / k).exp2()).collect())
}

/// Vertex of the parabola through three equally spaced points.
fn parabolic_vertex(x1: f64, h: f64, y: [f64; 3]) -> f64 {
    let den = y[0] - 2.0 * y[1] + y[2];
    if den > 0.0 {
        x1 + 0.5 * h * (y[0] - y[2]) / den
    } else {
        x1
    }
}

enum Cell {
    Grid { di: usize, li: usize },
    Scheduled { di: usize, ei: usize },
}

pub fn dimension_sweep(cfg: &ExperimentConfig, pool: &Pool) -> Result<SweepReport> {
    let sw = &cfg.sweep;
    if sw.d_grid.len() < 2 || sw.d_grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(LabError::config("d_grid needs two or more increasing dimensions"));
    }
    if sw.epsilons.is_empty() {
        return Err(LabError::config("sweep needs at least one epsilon"));
    }
    let sched = cfg.schedule.as_ref().ok_or_else(|| LabError::config("sweep-dim needs a [schedule] section"))?;
    cfg.require_seeds(1)?;
    let grid = lr_grid(sw.lr_min, sw.lr_max, sw.steps_per_octave)?;
    let t = sw.horizon;
    let beta = schedule_beta1(sw.c3, t)?;

    let base = cfg.problem_spec()?;
    let problems: Vec<Problem> = sw
        .d_grid
        .iter()
        .map(|&d| {
            let mut spec = base.clone();
            spec.d = d;
            make_problem(&spec)
        })
        .collect::<std::result::Result<_, _>>()?;
    let mut sched_params = Vec::new();
    for p in &problems {
        let spec = sched.spec(p, t)?;
        sched_params.push(sw.epsilons.iter().map(|&e| spec.adam_params(e)).collect::<Vec<_>>());
    }

    let mut cells = Vec::new();
    for di in 0..problems.len() {
        cells.extend((0..grid.len()).map(|li| Cell::Grid { di, li }));
        cells.extend((0..sw.epsilons.len()).map(|ei| Cell::Scheduled { di, ei }));
    }
    let jobs: Vec<(usize, u64)> = (0..cells.len()).flat_map(|c| cfg.seeds.iter().map(move |&s| (c, s))).collect();
    let opts = RunOptions { form: cfg.form, divergence_cap: cfg.divergence_cap, dump_every: None };
    let results = pool.map(&jobs, |&(c, seed)| {
        let (di, params, cell) = match cells[c] {
            // Learning rates at one d share a stream too.
            Cell::Grid { di, li } => (di, AdamParams::constant(grid[li], beta, beta, cfg.optimizer.epsilon), 0),
            // ε arms share a stream so their difference is not sampling noise.
            Cell::Scheduled { di, ei } => (di, sched_params[di][ei], 1),
        };
        let mut rng = cell_rng(cfg.seed, tag::SWEEP, sw.d_grid[di] as u64, seed, cell);
        run_summary(&problems[di], &params, t, seed, &mut rng, &opts)
    });
    let runs: Vec<RunSummary> = results.into_iter().collect::<Result<_>>()?;
    let per_cell: Vec<&[RunSummary]> = runs.chunks(cfg.seeds.len()).collect();

    let mut warnings = Vec::new();
    let mut curves = Vec::new();
    let mut scheduled = Vec::new();
    for (c, cell) in cells.iter().enumerate() {
        match *cell {
            Cell::Grid { di, li } => {
                // Diverged grid points are just bad learning rates.
                let m = aggregate(t, per_cell[c]);
                let metric = if m.diverged > 0 { f64::INFINITY } else { m.mean };
                if li == 0 {
                    curves.push(LrCurve {
                        d: sw.d_grid[di],
                        grid: Vec::new(),
                        argmin: 0.0,
                        best_lr: 0.0,
                        at_edge: false,
                    });
                }
                curves.last_mut().unwrap().grid.push((grid[li], metric));
            }
            Cell::Scheduled { di, ei } => {
                divergence_gate(&format!("scheduled d={}", sw.d_grid[di]), per_cell[c], &mut warnings)?;
                let m = aggregate(t, per_cell[c]);
                let lr = sched_params[di][ei].lr.at(0);
                scheduled.push(ScheduledPoint {
                    d: sw.d_grid[di],
                    epsilon: sw.epsilons[ei],
                    lr,
                    metric: m.mean,
                    std_err: m.std_err,
                });
            }
        }
    }

    let h = (grid[1] / grid[0]).ln();
    for curve in &mut curves {
        let i = (0..curve.grid.len()).min_by(|&a, &b| curve.grid[a].1.total_cmp(&curve.grid[b].1)).unwrap();
        curve.argmin = curve.grid[i].0;
        curve.at_edge = i == 0 || i + 1 == curve.grid.len();
        curve.best_lr = if curve.at_edge {
            warnings.push(format!("d={}: best learning rate sits on the grid edge", curve.d));
            curve.argmin
        } else {
            let y = [curve.grid[i - 1].1.ln(), curve.grid[i].1.ln(), curve.grid[i + 1].1.ln()];
            parabolic_vertex(curve.argmin.ln(), h, y).exp()
        };
    }
    let xs: Vec<f64> = curves.iter().map(|c| (c.d as f64).ln()).collect();
    let ys: Vec<f64> = curves.iter().map(|c| c.best_lr.ln()).collect();
    let fit = linear_fit(&xs, &ys)?;

    let mut d_ratio: f64 = 1.0;
    for &e in &sw.epsilons {
        let ms: Vec<f64> = scheduled.iter().filter(|p| p.epsilon == e).map(|p| p.metric).collect();
        d_ratio = d_ratio.max(max(&ms) / min(&ms));
    }
    let mut eps_spread: f64 = 0.0;
    for &d in &sw.d_grid {
        let ms: Vec<f64> = scheduled.iter().filter(|p| p.d == d).map(|p| p.metric).collect();
        eps_spread = eps_spread.max(max(&ms) / min(&ms) - 1.0);
    }

    let mut checks = Vec::new();
    if let Some([lo, hi]) = sw.expected_slope {
        checks.push(Check::new(
            "best_lr_slope",
            (lo..=hi).contains(&fit.slope) && !curves.iter().any(|c| c.at_edge),
            format!("log best-lr vs log d slope {:.4} in [{lo}, {hi}]", fit.slope),
        ));
    }
    checks.push(Check::new(
        "scheduled_dimension_free",
        d_ratio < sw.max_d_ratio,
        format!("max/min across d {d_ratio:.4} < {}", sw.max_d_ratio),
    ));
    checks.push(Check::new(
        "scheduled_epsilon_free",
        eps_spread < sw.max_eps_spread,
        format!("relative spread across epsilon {eps_spread:.3e} < {}", sw.max_eps_spread),
    ));
    Ok(SweepReport {
        protocol: PROTOCOL_NOTE,
        horizon: t,
        beta,
        curves,
        lr_slope: fit.slope,
        lr_r_squared: fit.r_squared,
        scheduled,
        d_ratio,
        eps_spread,
        checks,
        warnings,
    })
}

fn max(xs: &[f64]) -> f64 {
    xs.iter().copied().fold(f64::NEG_INFINITY, f64::max)
}

fn min(xs: &[f64]) -> f64 {
    xs.iter().copied().fold(f64::INFINITY, f64::min)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_is_geometric_and_inclusive() {
        let g = lr_grid(0.25, 1.0, 2).unwrap();
        assert_eq!(g.len(), 5);
        assert_eq!(g[0], 0.25);
        assert_eq!(*g.last().unwrap(), 1.0);
        assert!(lr_grid(0.5, 0.6, 1).is_err());
    }

    #[test]
    fn vertex_of_exact_parabola() {
        // y = (x − 0.3)²
        let f = |x: f64| (x - 0.3) * (x - 0.3);
        let v = parabolic_vertex(0.0, 1.0, [f(-1.0), f(0.0), f(1.0)]);
        assert!((v - 0.3).abs() < 1e-12);
    }
}
