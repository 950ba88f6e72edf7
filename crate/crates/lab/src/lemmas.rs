//! The `verify-lemmas` suites: optimizer form equivalence, the `u ≤ R`
//! bound, the sign-flip and threshold inequalities, KS calibration, noise
//! oracle fidelity and smoothness certificates.
//!
//! Every suite is a pure function of its sizes and the seed.

use serde::Serialize;
use serde_json::{json, Value};
use signadam_core::diagnostics::{
    check_lemma2, check_lemma3, check_lemma4, check_proposition21, check_smoothness_pairs, fit_smoothness,
    fit_variance, FitParams, GradientSequence, ScalarLaw,
};
use signadam_core::optimizer::{step_with, AdamParams, AdamState, Form};
use signadam_core::problems::{make_problem, Problem, ProblemKind, ProblemSpec};
use signadam_core::rng::stream_id;
use signadam_core::schedules::{compute_r, r_upper};
use signadam_core::stats::ks_two_sample;
use signadam_core::{RngStream, Vector};

use crate::config::LemmaConfig;
use crate::error::Result;
use crate::report::tag;
use crate::runner::Pool;

#[derive(Debug, Clone, Serialize)]
pub struct Suite {
    pub name: &'static str,
    pub passed: bool,
    pub summary: String,
    pub details: Value,
}

#[derive(Debug, Clone, Serialize)]
pub struct LemmaReport {
    pub passed: bool,
    pub suites: Vec<Suite>,
}

pub const SUITES: [&str; 9] = [
    "form_equivalence",
    "lemma2_bound",
    "lemma3_sign_flip",
    "lemma4_threshold",
    "proposition21",
    "ks_calibration",
    "noise_fidelity",
    "variance_fit",
    "smoothness_certificates",
];

fn rng_for(seed: u64, suite: u64, item: u64) -> RngStream {
    RngStream::new(seed, stream_id(&[tag::LEMMAS, suite, item]))
}

pub fn run_suite(name: &str, cfg: &LemmaConfig, seed: u64) -> Result<Suite> {
    match name {
        "form_equivalence" => form_equivalence(cfg.form_problems, cfg.form_steps, seed),
        "lemma2_bound" => lemma2_bound(cfg.lemma2_draws, seed),
        "lemma3_sign_flip" => lemma3_sign_flip(cfg.lemma3_samples, seed),
        "lemma4_threshold" => lemma4_threshold(cfg.lemma4_cases, seed),
        "proposition21" => proposition21(),
        "ks_calibration" => ks_calibration(cfg.ks_group_size, cfg.ks_trials, seed),
        "noise_fidelity" => noise_fidelity(cfg.noise_samples, seed),
        "variance_fit" => variance_fit(seed),
        "smoothness_certificates" => smoothness_certificates(cfg.smoothness_pairs, seed),
        other => Err(crate::error::LabError::config(format!("unknown suite {other}"))),
    }
}

pub fn verify_lemmas(cfg: &LemmaConfig, seed: u64, pool: &Pool) -> Result<LemmaReport> {
    let suites: Vec<Suite> = pool.map(&SUITES, |name| run_suite(name, cfg, seed)).into_iter().collect::<Result<_>>()?;
    Ok(LemmaReport { passed: suites.iter().all(|s| s.passed), suites })
}

fn random_problem(i: usize, rng: &mut RngStream) -> Result<Problem> {
    let kind = [ProblemKind::Quadratic, ProblemKind::Quartic, ProblemKind::Logsumexp][i % 3];
    let mut spec =
        ProblemSpec::new(kind, 1 + rng.index(32)).with_noise(rng.uniform(), 0.5 * rng.uniform(), 2.0 * rng.uniform());
    spec.x0_scale = 0.5 + rng.uniform();
    Ok(make_problem(&spec)?)
}

/// Sign form and preconditioned form from the same start and noise stream,
/// compared coordinate by coordinate at every step.
pub fn form_equivalence(problems: usize, steps: usize, seed: u64) -> Result<Suite> {
    let mut violations = 0usize;
    let mut max_rel: f64 = 0.0;
    let mut compared = 0u64;
    let mut stopped = 0usize;
    for i in 0..problems {
        let mut rng = rng_for(seed, 1, i as u64);
        let problem = random_problem(i, &mut rng)?;
        let beta1 = 0.99 * rng.uniform();
        let beta2 = beta1 * beta1 + (1.0 - beta1 * beta1) * (0.01 + 0.98 * rng.uniform());
        let eps = 10f64.powf(-12.0 + 8.0 * rng.uniform());
        let lr = 10f64.powf(-4.0 + 2.5 * rng.uniform());
        let params = AdamParams::constant(lr, beta1, beta2, eps);

        let d = problem.dim();
        let (mut sa, mut sb) = (AdamState::new(d), AdamState::new(d));
        let (mut xa, mut xb) = (problem.x0().clone(), problem.x0().clone());
        let (mut ra, mut rb) = (rng.fork(1), rng.fork(1));
        let (mut ga, mut gb) = (vec![0.0; d], vec![0.0; d]);
        let (mut na, mut nb) = (vec![0.0; d], vec![0.0; d]);
        for _ in 0..steps {
            problem.grad_into(xa.as_slice(), &mut ga);
            problem.grad_into(xb.as_slice(), &mut gb);
            problem.noisy_from_grad(&ga, &mut ra, &mut na);
            problem.noisy_from_grad(&gb, &mut rb, &mut nb);
            let (Ok(va), Ok(vb)) = (Vector::from_vec(na.clone()), Vector::from_vec(nb.clone())) else {
                stopped += 1;
                break;
            };
            match (
                step_with(&mut sa, &params, &va, &xa, Form::Preconditioned),
                step_with(&mut sb, &params, &vb, &xb, Form::Sign),
            ) {
                (Ok((a, _)), Ok((b, _))) => {
                    xa = a;
                    xb = b;
                }
                (Err(_), Err(_)) => {
                    stopped += 1;
                    break;
                }
                // one form blew up and the other did not
                _ => {
                    violations += 1;
                    break;
                }
            }
            for j in 0..d {
                let (p, q) = (xa[j], xb[j]);
                let scale = p.abs().max(q.abs());
                let rel = if scale > 0.0 { (p - q).abs() / scale } else { 0.0 };
                max_rel = max_rel.max(rel);
                if rel > 1e-12 {
                    violations += 1;
                }
                compared += 1;
            }
        }
    }
    Ok(Suite {
        name: "form_equivalence",
        passed: violations == 0,
        summary: format!(
            "{problems} problems x {steps} steps: {violations} violations, max relative gap {max_rel:.3e}"
        ),
        details: json!({ "problems": problems, "steps": steps, "coordinates_compared": compared,
                          "violations": violations, "max_relative_gap": max_rel, "stopped_early": stopped }),
    })
}

/// The 20 `(β1, β2)` pairs of the `u ≤ R` check, all with `β1² < β2`.
pub fn lemma2_pairs() -> Vec<(f64, f64)> {
    let mut out = Vec::new();
    for b1 in [0.0, 0.5, 0.9, 0.99, 0.999] {
        for frac in [0.001, 0.1, 0.5, 0.999] {
            out.push((b1, b1 * b1 + frac * (1.0 - b1 * b1)));
        }
    }
    out
}

pub fn lemma2_bound(draws: u64, seed: u64) -> Result<Suite> {
    let pairs = lemma2_pairs();
    let d = 10usize;
    let per = (draws as usize).div_ceil(pairs.len() * GradientSequence::ALL.len() * d).max(1);
    let mut failures = Vec::new();
    let mut total = 0u64;
    let mut worst: f64 = 0.0;
    for (k, &(b1, b2)) in pairs.iter().enumerate() {
        for (s, seq) in GradientSequence::ALL.into_iter().enumerate() {
            let mut rng = rng_for(seed, 2, (k * 8 + s) as u64);
            let c = check_lemma2(b1, b2, seq, d, per, &mut rng)?;
            total += c.draws;
            worst = worst.max(c.max_u / c.r);
            if !c.holds {
                failures.push(json!({ "beta1": b1, "beta2": b2, "sequence": seq, "max_u": c.max_u, "r": c.r }));
            }
        }
    }
    // R ≥ 1 and R ≤ √((1−β1)/(1−β2)) whenever β1 ≤ β2.
    let mut bracket_fail = 0usize;
    let mut grid = 0usize;
    for i in 0..10 {
        let b1 = i as f64 / 10.0;
        for k in 1..=5 {
            let b2 = b1 + (1.0 - b1) * k as f64 / 6.0;
            let r = compute_r(b1, b2)?;
            grid += 1;
            if r < 1.0 - 1e-12 || r > r_upper(b1, b2) * (1.0 + 1e-12) {
                bracket_fail += 1;
            }
        }
    }
    Ok(Suite {
        name: "lemma2_bound",
        passed: failures.is_empty() && bracket_fail == 0,
        summary: format!(
            "{total} draws over {} pairs: max u/R {worst:.6}; R bracket {bracket_fail} failures on {grid} points",
            pairs.len()
        ),
        details: json!({ "draws": total, "pairs": pairs.len(), "max_u_over_r": worst, "failures": failures,
                          "bracket_points": grid, "bracket_failures": bracket_fail }),
    })
}

pub const LEMMA3_C: [f64; 3] = [-1.5, 0.5, 3.0];

pub fn lemma3_sign_flip(samples: usize, seed: u64) -> Result<Suite> {
    let mut rows = Vec::new();
    let mut bad = 0usize;
    for (i, law) in ScalarLaw::sweep().into_iter().enumerate() {
        for (k, &c) in LEMMA3_C.iter().enumerate() {
            let mut rng = rng_for(seed, 3, (i * 4 + k) as u64);
            let r = check_lemma3(|g| law.sample(g), c, samples, &mut rng)?;
            if !r.holds {
                bad += 1;
            }
            rows.push(
                json!({ "law": law, "c": c, "lhs": r.lhs, "rhs": r.rhs, "std_err": r.std_err, "holds": r.holds }),
            );
        }
    }
    Ok(Suite {
        name: "lemma3_sign_flip",
        passed: bad == 0,
        summary: format!("{} cases, {bad} significant violations", rows.len()),
        details: json!({ "samples": samples, "cases": rows }),
    })
}

pub fn lemma4_threshold(cases: usize, seed: u64) -> Result<Suite> {
    let mut rng = rng_for(seed, 4, 0);
    let (mut bad, mut loose) = (0usize, 0usize);
    let mut worst: f64 = 0.0;
    for _ in 0..cases {
        let a = 10f64.powf(-3.0 + 6.0 * rng.uniform());
        let b = 10f64.powf(-3.0 + 6.0 * rng.uniform());
        let alpha = 0.05 + 1.95 * rng.uniform();
        let beta = alpha * (1.01 + 3.0 * rng.uniform());
        let r = check_lemma4(a, b, alpha, beta)?;
        worst = worst.max(r.value);
        if !r.holds {
            bad += 1;
        }
        if !r.halved_violates {
            loose += 1;
        }
    }
    Ok(Suite {
        name: "lemma4_threshold",
        passed: bad == 0 && loose == 0,
        summary: format!(
            "{cases} cases: {bad} violations, max value {worst:.6}; {loose} still hold at half the threshold"
        ),
        details: json!({ "cases": cases, "violations": bad, "max_value": worst, "halving_not_tight": loose }),
    })
}

pub fn proposition21() -> Result<Suite> {
    let mut rows = Vec::new();
    let mut bad = 0;
    for i in 0..10 {
        for t in [8u64, 64, 512, 4096] {
            let r = check_proposition21(0.05 * i as f64, t)?;
            if !r.holds {
                bad += 1;
            }
            rows.push(r);
        }
    }
    Ok(Suite {
        name: "proposition21",
        passed: bad == 0,
        summary: format!("{} grid points, {bad} violations", rows.len()),
        details: json!({ "grid": rows }),
    })
}

/// Rejection rate under H0 and mean p-value under a one-sigma shift.
pub fn ks_calibration(group: usize, trials: usize, seed: u64) -> Result<Suite> {
    let draw = |rng: &mut RngStream, shift: f64| {
        let mut v: Vec<f64> = (0..group).map(|_| rng.normal() + shift).collect();
        v.sort_unstable_by(f64::total_cmp);
        v
    };
    let mut rejects = 0usize;
    for t in 0..trials {
        let mut rng = rng_for(seed, 6, t as u64);
        let (a, b) = (draw(&mut rng, 0.0), draw(&mut rng, 0.0));
        if ks_two_sample(&a, &b)?.p_value < 0.05 {
            rejects += 1;
        }
    }
    let alt_trials = (trials / 10).max(1);
    let mut p_alt = 0.0;
    for t in 0..alt_trials {
        let mut rng = rng_for(seed, 6, (trials + t) as u64);
        let (a, b) = (draw(&mut rng, 0.0), draw(&mut rng, 1.0));
        p_alt += ks_two_sample(&a, &b)?.p_value / alt_trials as f64;
    }
    let rate = rejects as f64 / trials as f64;
    Ok(Suite {
        name: "ks_calibration",
        passed: (0.03..=0.07).contains(&rate) && p_alt < 0.01,
        summary: format!("H0 rejection rate {rate:.4} at 0.05 over {trials} trials; shift mean p {p_alt:.3e}"),
        details: json!({ "group_size": group, "trials": trials, "null_reject_rate": rate,
                          "shift_trials": alt_trials, "shift_mean_p": p_alt }),
    })
}

pub const NOISE_CASES: [(f64, f64, f64); 9] = [
    (1.0, 0.0, 2.0),
    (0.0, 1.0, 2.0),
    (0.5, 0.7, 1.0),
    (0.3, 1.2, 0.0),
    (1.0, 0.5, 2.0),
    (0.0, 1.0, 1.0),
    (2.0, 0.1, 0.5),
    (0.1, 2.0, 1.5),
    (1.0, 1.0, 0.0),
];

/// Empirical `E‖g − ∇F‖²` at `‖∇F‖ = 3` against the model, for each case.
pub fn noise_fidelity(samples: usize, seed: u64) -> Result<Suite> {
    let d = 8;
    let mut rows = Vec::new();
    let mut worst: f64 = 0.0;
    for (i, &(s0, s1, p)) in NOISE_CASES.iter().enumerate() {
        let problem = make_problem(&ProblemSpec::new(ProblemKind::Quartic, d).with_noise(s0, s1, p))?;
        let x = vec![(3.0 / (4.0 * (d as f64).sqrt())).cbrt(); d];
        let mut g = vec![0.0; d];
        problem.grad_into(&x, &mut g);
        let gn = g.iter().map(|v| v * v).sum::<f64>().sqrt();
        let target = problem.noise().variance(gn);
        let mut rng = rng_for(seed, 7, i as u64);
        let mut out = vec![0.0; d];
        let mut acc = 0.0;
        for _ in 0..samples {
            problem.noisy_from_grad(&g, &mut rng, &mut out);
            acc += out.iter().zip(&g).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
        }
        let emp = acc / samples as f64;
        let rel = (emp / target - 1.0).abs();
        worst = worst.max(rel);
        rows.push(json!({ "sigma0": s0, "sigma1": s1, "p": p, "grad_norm": gn, "model": target, "empirical": emp, "relative_error": rel }));
    }
    Ok(Suite {
        name: "noise_fidelity",
        passed: worst < 0.03,
        summary: format!("{} cases at N={samples}: worst relative error {worst:.4}", rows.len()),
        details: json!({ "samples": samples, "cases": rows }),
    })
}

/// Planted noise constants recovered by the variance fit.
pub fn variance_fit(seed: u64) -> Result<Suite> {
    let mut rows = Vec::new();
    let mut ok = true;
    for (i, (s0, s1, p)) in [(1.0, 0.5, 2.0), (0.0, 1.0, 1.0), (1.0, 0.0, 2.0)].into_iter().enumerate() {
        let problem = make_problem(&ProblemSpec::new(ProblemKind::Quadratic, 16).with_noise(s0, s1, p))?;
        let fit = fit_variance(&problem, 64, 2000, &mut rng_for(seed, 8, i as u64))?;
        let FitParams::Variance(n) = fit.params else { unreachable!("variance fit") };
        let close = |got: f64, want: f64| if want == 0.0 { got < 0.05 } else { (got / want - 1.0).abs() <= 0.05 };
        let pass = close(n.sigma0, s0)
            && close(n.sigma1, s1)
            && if s1 == 0.0 { fit.degenerate } else { !fit.degenerate && (n.p - p).abs() <= 0.25 };
        ok &= pass;
        rows.push(json!({ "planted": [s0, s1, p], "fitted": [n.sigma0, n.sigma1, n.p],
                          "degenerate": fit.degenerate, "passed": pass }));
    }
    Ok(Suite {
        name: "variance_fit",
        passed: ok,
        summary: format!("{} planted models, all recovered: {ok}", rows.len()),
        details: json!({ "cases": rows }),
    })
}

pub fn smoothness_certificates(pairs: usize, seed: u64) -> Result<Suite> {
    let mut rows = Vec::new();
    let mut ok = true;
    let mut quad = ProblemSpec::new(ProblemKind::Quadratic, 8);
    quad.lambda = 2.0;
    let mut norm_quartic = ProblemSpec::new(ProblemKind::Quartic, 16);
    norm_quartic.normalized = true;
    let certified = [
        ("quadratic", quad.clone()),
        ("quartic", ProblemSpec::new(ProblemKind::Quartic, 8)),
        ("normalized_quartic", norm_quartic),
        ("logsumexp", ProblemSpec::new(ProblemKind::Logsumexp, 8)),
    ];
    for (i, (name, spec)) in certified.iter().enumerate() {
        let problem = make_problem(spec)?;
        let c = check_smoothness_pairs(&problem, pairs, &mut rng_for(seed, 9, i as u64))?;
        ok &= c.holds();
        rows.push(json!({ "problem": name, "check": c, "holds": c.holds() }));
    }

    let mut fits = Vec::new();
    let fit_cases = [
        (
            "quadratic_lambda2",
            {
                let mut q = quad;
                q.d = 1;
                q
            },
            None,
            0.0,
        ),
        ("quartic", ProblemSpec::new(ProblemKind::Quartic, 1), Some(2.0 / 3.0), 0.1),
        ("logsumexp", ProblemSpec::new(ProblemKind::Logsumexp, 1), Some(1.0), 0.15),
    ];
    for (i, (name, spec, q_true, tol)) in fit_cases.into_iter().enumerate() {
        let problem = make_problem(&spec)?;
        let f = fit_smoothness(&problem, 2000, &mut rng_for(seed, 10, i as u64))?;
        let FitParams::Smoothness(m) = f.params else { unreachable!("smoothness fit") };
        let pass = match q_true {
            Some(q) => (m.q - q).abs() <= tol,
            // λ = 2: L0 within 5%, no gradient-dependent part
            None => (m.l0 / 2.0 - 1.0).abs() <= 0.05 && m.l1 <= 0.05 * m.l0,
        };
        ok &= pass;
        fits.push(json!({ "problem": name, "fitted": { "l0": m.l0, "l1": m.l1, "q": m.q }, "expected_q": q_true, "passed": pass }));
    }
    Ok(Suite {
        name: "smoothness_certificates",
        passed: ok,
        summary: format!("{} certified problems x {pairs} pairs and {} fits, all pass: {ok}", rows.len(), fits.len()),
        details: json!({ "pairs": rows, "fits": fits }),
    })
}
