//! Audit of the main convergence inequality on certified problems.
//!
//! Per seed, the left side is
//! `(1/T) Σ ‖u_t ∘ ∇F(x_t)‖₁ − K · (1/T) Σ ‖∇F(x_t)‖₂`
//! with the exact gradient, and `K` the coefficient from
//! [`lhs_coefficient`]. The right side is deterministic.

use serde::Serialize;
use signadam_core::diagnostics::condition1_from_moments;
use signadam_core::optimizer::RunOptions;
use signadam_core::problems::{make_problem, SigmaHatReading};
use signadam_core::schedules::{lhs_coefficient, min_t_threshold, theorem_rhs, BoundInputs, MinT, TheoremRhs};
use signadam_core::{Norm, SampleStats};

use crate::config::{oracle_constants, AuditCase, Expectation, ExperimentConfig};
use crate::error::{LabError, Result};
use crate::report::{tag, Check};
use crate::runner::{cell_rng, divergence_gate, run_summary, Pool, RunSummary};

pub const MIN_SEEDS: usize = 16;
/// Error bars are this many standard errors.
pub const Z: f64 = 2.0;

pub const V_BAR_CAVEAT: &str =
    "v_bar is the smallest per-step mean of u seen in the runs, a post-hoc estimate rather than a known bound";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    /// Upper error bar of the left side is at most the right side.
    Holds,
    /// Lower error bar exceeds the right side.
    Violated,
    Inconclusive,
}

#[derive(Debug, Clone, Serialize)]
pub struct ReadingResult {
    pub reading: &'static str,
    pub sigma_hat: f64,
    pub lhs_coefficient: f64,
    pub lhs: f64,
    pub lhs_std_err: f64,
    pub rhs: TheoremRhs,
    /// `rhs / lhs` when the left side is positive.
    pub slack: Option<f64>,
    pub min_t: Option<MinT>,
    pub verdict: Verdict,
}

#[derive(Debug, Clone, Serialize)]
pub struct HorizonResult {
    pub horizon: u64,
    pub bound_inputs: BoundInputs,
    pub c0: f64,
    pub c1: f64,
    pub v_bar: f64,
    pub mean_u_grad_l1: f64,
    pub mean_grad_l2: f64,
    pub readings: Vec<ReadingResult>,
}

#[derive(Debug, Clone, Serialize)]
pub struct CaseResult {
    pub name: String,
    pub expect: Expectation,
    pub l_hat_scale: f64,
    pub horizons: Vec<HorizonResult>,
}

#[derive(Debug, Clone, Serialize)]
pub struct AuditReport {
    pub v_bar_caveat: &'static str,
    pub error_bars: String,
    pub cases: Vec<CaseResult>,
    pub checks: Vec<Check>,
    pub warnings: Vec<String>,
}

struct Prepared {
    problem: signadam_core::problems::Problem,
    setups:
        Vec<(u64, signadam_core::optimizer::AdamParams, BoundInputs, Option<signadam_core::schedules::ScheduleSpec>)>,
}

fn prepare(case: &AuditCase) -> std::result::Result<Prepared, Vec<String>> {
    let mut errs = Vec::new();
    let problem = match make_problem(&case.problem) {
        Ok(p) => p,
        Err(e) => return Err(vec![format!("{}: {e}", case.name)]),
    };
    if !problem.certificate().is_certified() {
        errs.push(format!("{}: problem has no certified smoothness constants", case.name));
    }
    if case.t_grid.is_empty() {
        errs.push(format!("{}: empty t_grid", case.name));
    }
    if !(case.l_hat_scale > 0.0) {
        errs.push(format!("{}: l_hat_scale must be positive", case.name));
    }
    let mut setups = Vec::new();
    for &t in &case.t_grid {
        let built = match &case.schedule {
            Some(s) => s.spec(&problem, t).map(|spec| (spec.adam_params(s.epsilon), spec.bound_inputs(), Some(spec))),
            None => {
                let o = &case.optimizer;
                let params = o.params().theory();
                BoundInputs::from_constant(o.lr, o.beta1, o.beta2, problem.dim(), t)
                    .map_err(Into::into)
                    .and_then(|b| params.validate().map(|_| (params, b, None)).map_err(Into::into))
            }
        };
        match built {
            Ok((p, b, s)) => setups.push((t, p, b, s)),
            Err(e) => errs.push(format!("{} at T={t}: {e}", case.name)),
        }
    }
    if errs.is_empty() {
        Ok(Prepared { problem, setups })
    } else {
        Err(errs)
    }
}

pub fn audit_theorem_bound(cfg: &ExperimentConfig, pool: &Pool) -> Result<AuditReport> {
    let mut errs = Vec::new();
    if cfg.audit.cases.is_empty() {
        errs.push("audit needs at least one [[audit.cases]] entry".to_string());
    }
    if let Err(e) = cfg.require_seeds(MIN_SEEDS) {
        errs.push(e.to_string());
    }
    let mut prepared = Vec::new();
    for case in &cfg.audit.cases {
        match prepare(case) {
            Ok(p) => prepared.push(p),
            Err(e) => errs.extend(e),
        }
    }
    if !errs.is_empty() {
        return Err(LabError::config(format!("audit preconditions violated: {}", errs.join("; "))));
    }

    let mut jobs = Vec::new();
    for (ci, p) in prepared.iter().enumerate() {
        for hi in 0..p.setups.len() {
            jobs.extend(cfg.seeds.iter().map(|&s| (ci, hi, s)));
        }
    }
    let opts = RunOptions { form: cfg.form, divergence_cap: cfg.divergence_cap, dump_every: None };
    let results = pool.map(&jobs, |&(ci, hi, seed)| {
        let p = &prepared[ci];
        let (t, params, ..) = &p.setups[hi];
        let mut rng = cell_rng(cfg.seed, tag::AUDIT, *t, seed, ci as u64);
        run_summary(&p.problem, params, *t, seed, &mut rng, &opts)
    });
    let runs: Vec<RunSummary> = results.into_iter().collect::<Result<_>>()?;
    let mut chunks = runs.chunks(cfg.seeds.len());

    let mut warnings = Vec::new();
    let mut cases = Vec::new();
    let mut checks = Vec::new();
    for (case, p) in cfg.audit.cases.iter().zip(&prepared) {
        let g0 = p.problem.grad(p.problem.x0()).norm(Norm::L2);
        let mut horizons = Vec::new();
        for (t, _, b, spec) in &p.setups {
            let r = chunks.next().expect("one chunk per horizon");
            divergence_gate(&format!("{} T={t}", case.name), r, &mut warnings)?;
            let ok: Vec<&RunSummary> = r.iter().filter(|x| !x.diverged).collect();
            let n = ok.len() as f64;
            let mean_g = ok.iter().map(|x| x.metric).sum::<f64>() / n;
            let mean_sq = ok.iter().map(|x| x.mean_grad_sq).sum::<f64>() / n;
            let c0 = condition1_from_moments(mean_g, mean_sq, (*t as f64).sqrt()).c0;
            let c1 = ok.iter().map(|x| x.max_c1).fold(1.0, f64::max);
            let v_bar = ok.iter().map(|x| x.min_u_mean).fold(f64::INFINITY, f64::min);
            let mean_ug = ok.iter().map(|x| x.mean_u_grad_l1).sum::<f64>() / n;

            let mut readings = Vec::new();
            for reading in SigmaHatReading::ALL {
                let consts = oracle_constants(&p.problem, reading, c0, c1, case.l_hat_scale);
                consts.validate()?;
                let k = lhs_coefficient(&consts, b);
                let lhs =
                    SampleStats::from_slice(&ok.iter().map(|x| x.mean_u_grad_l1 - k * x.metric).collect::<Vec<_>>());
                let rhs = theorem_rhs(&consts, b, g0);
                let (m, se) = (lhs.mean(), lhs.std_error());
                let verdict = if m + Z * se <= rhs.total {
                    Verdict::Holds
                } else if m - Z * se > rhs.total {
                    Verdict::Violated
                } else {
                    Verdict::Inconclusive
                };
                let min_t = match spec {
                    Some(s) if v_bar > 0.0 => {
                        let mt = min_t_threshold(&consts, &s.with_v_bar(v_bar))?;
                        if let Some(w) = &mt.warning {
                            warnings.push(format!("{} ({}): {w}", case.name, reading.name()));
                        }
                        Some(mt)
                    }
                    _ => None,
                };
                readings.push(ReadingResult {
                    reading: reading.name(),
                    sigma_hat: consts.sigma_hat,
                    lhs_coefficient: k,
                    lhs: m,
                    lhs_std_err: se,
                    slack: (m > 0.0).then(|| rhs.total / m),
                    rhs,
                    min_t,
                    verdict,
                });
            }
            horizons.push(HorizonResult {
                horizon: *t,
                bound_inputs: *b,
                c0,
                c1,
                v_bar,
                mean_u_grad_l1: mean_ug,
                mean_grad_l2: mean_g,
                readings,
            });
        }
        let want = match case.expect {
            Expectation::Holds => Verdict::Holds,
            Expectation::Violates => Verdict::Violated,
        };
        let got: Vec<String> = horizons
            .iter()
            .flat_map(|h| h.readings.iter().map(move |r| format!("T={} {}: {:?}", h.horizon, r.reading, r.verdict)))
            .collect();
        let passed = horizons.iter().all(|h| h.readings.iter().all(|r| r.verdict == want));
        checks.push(Check::new(case.name.clone(), passed, format!("expect {want:?}; {}", got.join(", "))));
        cases.push(CaseResult {
            name: case.name.clone(),
            expect: case.expect,
            l_hat_scale: case.l_hat_scale,
            horizons,
        });
    }
    Ok(AuditReport {
        v_bar_caveat: V_BAR_CAVEAT,
        error_bars: format!("{Z} standard errors over {} seeds", cfg.seeds.len()),
        cases,
        checks,
        warnings,
    })
}
