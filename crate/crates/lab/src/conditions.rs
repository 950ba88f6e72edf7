//! Diagnostics on one trajectory: Conditions 1–3, the `u ≤ R` bound, and
//! smoothness and variance fits for the configured problem.

use serde::Serialize;
use signadam_core::diagnostics::{
    check_condition1, check_condition2, condition3_from_norms, fit_smoothness, fit_variance, Condition1,
    ConditionReport, FitResult, Thresholds, Verdicts,
};
use signadam_core::optimizer::{run, RunOptions, UDump};
use signadam_core::rng::stream_id;
use signadam_core::schedules::compute_r;
use signadam_core::stats::ks_two_sample;
use signadam_core::RngStream;

use crate::config::ExperimentConfig;
use crate::error::{LabError, Result};
use crate::output::CsvRow;
use crate::report::{tag, Check};

/// Smallest KS group used for the within-step test.
pub const MIN_GROUP: usize = 8;

pub const CONDITION2_NOTE: &str = "independence across coordinates is not testable from one trajectory; \
     this tests identical distribution with two-sample KS, within steps and across steps";

#[derive(Debug, Clone)]
pub struct TrajectoryData {
    pub rows: Vec<CsvRow>,
    pub dumps: Vec<UDump>,
}

#[derive(Debug, Clone, Serialize)]
pub struct Condition1Report {
    pub c0: f64,
    pub sqrt_t: f64,
    pub max_ratio: f64,
    pub degenerate: bool,
    pub passes: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct AcrossStep {
    pub pairs: usize,
    pub mean_p: f64,
    pub reject_rate: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct Condition2Report {
    /// Within-step pools, averaged over dumped steps. `None` when no step
    /// has enough coordinates for two groups of [`MIN_GROUP`].
    pub mean_p: Option<f64>,
    pub reject_rate: Option<f64>,
    pub trials: usize,
    pub group_size: usize,
    pub steps_tested: usize,
    /// Consecutive dumped steps compared with each other.
    pub across_step: Option<AcrossStep>,
    pub min_mean_p: f64,
    pub passes: Option<bool>,
    pub note: &'static str,
}

#[derive(Debug, Clone, Serialize)]
pub struct Condition3Report {
    pub series: Vec<f64>,
    pub max: f64,
    pub threshold: f64,
    pub passes: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct Fits {
    pub smoothness: Option<FitResult>,
    pub variance: Option<FitResult>,
}

#[derive(Debug, Clone, Serialize)]
pub struct DiagnosticsReport {
    pub steps: usize,
    pub dimension: usize,
    pub condition1: Condition1Report,
    pub condition2: Condition2Report,
    pub condition3: Condition3Report,
    pub lemma_checks: Vec<Check>,
    pub fits: Fits,
    pub verdicts: Verdicts,
}

impl DiagnosticsReport {
    pub fn passed(&self) -> bool {
        self.verdicts.condition1
            && self.verdicts.condition2.unwrap_or(true)
            && self.verdicts.condition3
            && self.lemma_checks.iter().all(|c| c.passed)
    }
}

/// Runs the configured trajectory with a `u` dump. Without `dump_every`
/// about a hundred steps are dumped.
pub fn simulate(cfg: &ExperimentConfig, seed: u64) -> Result<TrajectoryData> {
    let problem = cfg.build_problem()?;
    let (params, _) = cfg.params_at(&problem, cfg.horizon)?;
    let every = cfg.dump_every.unwrap_or((cfg.horizon as usize / 100).max(1));
    let opts = RunOptions { form: cfg.form, divergence_cap: cfg.divergence_cap, dump_every: Some(every) };
    let mut rng = RngStream::new(seed, stream_id(&[tag::RUN, cfg.horizon]));
    let tr = run(&problem, &params, cfg.horizon, &mut rng, &opts)?;
    Ok(TrajectoryData { rows: tr.rows.iter().map(CsvRow::from).collect(), dumps: tr.u_dumps })
}

fn condition2(dumps: &[UDump], cfg: &ExperimentConfig, seed: u64) -> Result<Condition2Report> {
    let c = &cfg.conditions;
    let d = dumps.first().map_or(0, |x| x.u.len());
    let group = c.group_size.min(d / 2);
    let (mut p_sum, mut r_sum, mut tested) = (0.0, 0.0, 0usize);
    if group >= MIN_GROUP {
        for dump in dumps {
            let rng = RngStream::new(seed, stream_id(&[tag::CONDITIONS, dump.step]));
            let r = check_condition2(&dump.u, group, c.trials, &rng)?;
            p_sum += r.mean_p;
            r_sum += r.reject_rate;
            tested += 1;
        }
    }
    let across = if dumps.len() >= 2 {
        let mut ps = Vec::new();
        for w in dumps.windows(2) {
            let mut a = w[0].u.clone();
            let mut b = w[1].u.clone();
            a.sort_unstable_by(f64::total_cmp);
            b.sort_unstable_by(f64::total_cmp);
            ps.push(ks_two_sample(&a, &b)?.p_value);
        }
        let n = ps.len() as f64;
        Some(AcrossStep {
            pairs: ps.len(),
            mean_p: ps.iter().sum::<f64>() / n,
            reject_rate: ps.iter().filter(|&&p| p < 0.05).count() as f64 / n,
        })
    } else {
        None
    };
    let mean_p = (tested > 0).then(|| p_sum / tested as f64);
    Ok(Condition2Report {
        mean_p,
        reject_rate: (tested > 0).then(|| r_sum / tested as f64),
        trials: c.trials,
        group_size: group,
        steps_tested: tested,
        across_step: across,
        min_mean_p: cfg.thresholds.ks_min_mean_p,
        passes: mean_p.map(|p| p >= cfg.thresholds.ks_min_mean_p),
        note: CONDITION2_NOTE,
    })
}

pub fn check_conditions(cfg: &ExperimentConfig, data: &TrajectoryData, seed: u64) -> Result<DiagnosticsReport> {
    if data.rows.is_empty() {
        return Err(LabError::config("trajectory has no rows"));
    }
    let problem = cfg.build_problem()?;
    let d = problem.dim();
    if let Some(bad) = data.dumps.iter().find(|u| u.u.len() != d) {
        return Err(LabError::config(format!(
            "u dump at step {} has {} coordinates, problem has d = {d}",
            bad.step,
            bad.u.len()
        )));
    }
    let th: Thresholds = cfg.thresholds;

    let norms: Vec<f64> = data.rows.iter().map(|r| r.grad_l2).collect();
    let c1: Condition1 = check_condition1(&norms)?;
    let c3_series: Vec<f64> = data.rows.iter().map(|r| condition3_from_norms(r.grad_l1, r.grad_l2, d).c1).collect();
    let c2 = condition2(&data.dumps, cfg, seed)?;
    let core_c2 = c2.mean_p.map(|mean_p| signadam_core::diagnostics::Condition2 {
        mean_p,
        reject_rate: c2.reject_rate.unwrap_or(0.0),
        trials: c2.trials,
        group_size: c2.group_size,
    });
    let summary = ConditionReport::new(&c1, c3_series.clone(), core_c2.as_ref(), &th);

    let mut lemma_checks = Vec::new();
    let (params, _) = cfg.params_at(&problem, cfg.horizon)?;
    if let Ok(r) = compute_r(params.beta1, params.beta2) {
        let max_u = data.rows.iter().map(|x| x.u_max).fold(0.0, f64::max);
        lemma_checks.push(Check::new(
            "u_le_r",
            max_u <= r * (1.0 + 1e-12),
            format!("max u {max_u:.6} vs R {r:.6} at beta1 {}, beta2 {}", params.beta1, params.beta2),
        ));
    }

    let c = &cfg.conditions;
    let mut rng = RngStream::new(seed, stream_id(&[tag::CONDITIONS, u64::MAX]));
    let smoothness =
        if c.smoothness_pairs > 0 { Some(fit_smoothness(&problem, c.smoothness_pairs, &mut rng)?) } else { None };
    let variance = if c.variance_points > 0 && !problem.noise().is_zero() {
        Some(fit_variance(&problem, c.variance_points, c.variance_draws, &mut rng)?)
    } else {
        None
    };

    Ok(DiagnosticsReport {
        steps: data.rows.len(),
        dimension: d,
        condition1: Condition1Report {
            c0: c1.c0,
            sqrt_t: c1.sqrt_t,
            max_ratio: th.c0_ratio,
            degenerate: c1.degenerate,
            passes: summary.verdicts.condition1,
        },
        condition3: Condition3Report {
            max: summary.c1_max,
            series: c3_series,
            threshold: th.c1_max,
            passes: summary.verdicts.condition3,
        },
        condition2: c2,
        lemma_checks,
        fits: Fits { smoothness, variance },
        verdicts: summary.verdicts,
    })
}
