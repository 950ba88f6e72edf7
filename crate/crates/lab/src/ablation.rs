//! Momentum ablation: plain sign descent (`β1 = β2 = 0`) against the
//! horizon-scheduled momentum, at a shared learning rate.

use serde::Serialize;
use signadam_core::optimizer::{AdamParams, RunOptions};
use signadam_core::problems::{make_problem, Problem};
use signadam_core::schedules::schedule_beta1;

use crate::config::ExperimentConfig;
use crate::error::{LabError, Result};
use crate::rate::{ScheduleEcho, MIN_SEEDS};
use crate::report::{tag, Check, PROTOCOL_NOTE};
use crate::runner::{aggregate, cell_rng, divergence_gate, run_summary, GridPoint, Pool, RunSummary};

#[derive(Debug, Clone, Serialize)]
pub struct Arm {
    pub name: String,
    pub sigma0: f64,
    pub points: Vec<GridPoint>,
    pub params: Vec<ScheduleEcho>,
    #[serde(skip)]
    pub runs: Vec<RunSummary>,
}

impl Arm {
    pub fn terminal(&self) -> f64 {
        self.points.last().map_or(f64::NAN, |p| p.mean)
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct AblationReport {
    pub protocol: &'static str,
    pub arms: Vec<Arm>,
    /// Plain arm at the largest T.
    pub plateau: f64,
    /// Plain arm with scaled `σ0` over the plain arm, at the largest T.
    pub floor_ratio: Option<f64>,
    pub momentum_terminal: f64,
    pub checks: Vec<Check>,
    pub warnings: Vec<String>,
}

fn arm_params(cfg: &ExperimentConfig, momentum: bool, horizon: u64) -> Result<AdamParams> {
    let a = &cfg.ablation;
    let b = if momentum { schedule_beta1(a.c3, horizon)? } else { 0.0 };
    Ok(AdamParams::constant(a.lr, b, b, a.epsilon))
}

pub fn momentum_ablation(cfg: &ExperimentConfig, pool: &Pool) -> Result<AblationReport> {
    let t = &cfg.t_grid;
    if t.len() < 2 || t[0] == 0 || t.windows(2).any(|w| w[1] <= w[0]) {
        return Err(LabError::config("ablation t_grid needs two or more increasing horizons"));
    }
    cfg.require_seeds(MIN_SEEDS)?;
    let a = &cfg.ablation;
    if !(a.lr > 0.0) || !(a.sigma0_factor > 1.0) {
        return Err(LabError::config("ablation needs lr > 0 and sigma0_factor > 1"));
    }
    let sigma0 = cfg.problem_spec()?.sigma0;
    let noisy = sigma0 > 0.0;

    // (name, momentum, problem, σ0)
    let mut arms: Vec<(String, bool, Problem, f64)> = vec![
        ("plain".into(), false, make_problem(cfg.problem_spec()?)?, sigma0),
        ("momentum".into(), true, make_problem(cfg.problem_spec()?)?, sigma0),
    ];
    if noisy {
        let mut spec = cfg.problem_spec()?.clone();
        spec.sigma0 *= a.sigma0_factor;
        arms.push(("plain_scaled_sigma0".into(), false, make_problem(&spec)?, spec.sigma0));
    }

    let mut cells = Vec::new();
    for (ai, (_, momentum, ..)) in arms.iter().enumerate() {
        for &t in &cfg.t_grid {
            let params = arm_params(cfg, *momentum, t)?;
            params.validate()?;
            for &s in &cfg.seeds {
                cells.push((ai, t, s, params));
            }
        }
    }
    let opts = RunOptions { form: cfg.form, divergence_cap: cfg.divergence_cap, dump_every: None };
    let results = pool.map(&cells, |(ai, t, s, params)| {
        // Arms at the same (T, seed) share a stream: common random numbers.
        let mut rng = cell_rng(cfg.seed, tag::ABLATION, *t, *s, 0);
        run_summary(&arms[*ai].2, params, *t, *s, &mut rng, &opts)
    });
    let runs: Vec<RunSummary> = results.into_iter().collect::<Result<_>>()?;

    let mut warnings = Vec::new();
    let per_arm = cfg.t_grid.len() * cfg.seeds.len();
    let mut out = Vec::new();
    for (ai, (name, momentum, _, s0)) in arms.iter().enumerate() {
        let arm_runs = &runs[ai * per_arm..(ai + 1) * per_arm];
        divergence_gate(name, arm_runs, &mut warnings)?;
        let points: Vec<GridPoint> =
            cfg.t_grid.iter().zip(arm_runs.chunks(cfg.seeds.len())).map(|(&t, r)| aggregate(t, r)).collect();
        let params = cfg
            .t_grid
            .iter()
            .map(|&t| Ok(ScheduleEcho::new(t, &arm_params(cfg, *momentum, t)?, None)))
            .collect::<Result<_>>()?;
        out.push(Arm { name: name.clone(), sigma0: *s0, points, params, runs: arm_runs.to_vec() });
    }

    let plateau = out[0].terminal();
    let momentum_terminal = out[1].terminal();
    let first = |arm: &Arm| arm.points.first().map_or(f64::NAN, |p| p.mean);
    let mut checks = Vec::new();
    let floor_ratio = if noisy {
        let ratio = out[2].terminal() / plateau;
        checks.push(Check::new(
            "floor_scales_with_sigma0",
            ratio >= a.min_floor_ratio,
            format!(
                "plain-arm plateau ratio {ratio:.3} at sigma0 x{} (need >= {})",
                a.sigma0_factor, a.min_floor_ratio
            ),
        ));
        checks.push(Check::new(
            "momentum_below_floor",
            momentum_terminal < plateau,
            format!("momentum {momentum_terminal:.4e} vs plain plateau {plateau:.4e}"),
        ));
        Some(ratio)
    } else {
        for arm in &out {
            let (m0, m1) = (first(arm), arm.terminal());
            checks.push(Check::new(
                format!("{}_converges", arm.name),
                m1 < m0,
                format!("noiseless: M falls from {m0:.4e} to {m1:.4e}"),
            ));
        }
        None
    };
    checks.push(Check::new(
        "momentum_keeps_decreasing",
        momentum_terminal < first(&out[1]),
        format!("momentum M(T) from {:.4e} to {momentum_terminal:.4e}", first(&out[1])),
    ));
    Ok(AblationReport { protocol: PROTOCOL_NOTE, arms: out, plateau, floor_ratio, momentum_terminal, checks, warnings })
}
