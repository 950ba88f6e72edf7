//! Theory constants and the horizon-dependent hyperparameter schedules.
//!
//! With horizon `T` and dimension `d`:
//!
//! * `γ = C2 / (T^{3/4} √d)`
//! * `1 − β1 = C3 / √T`
//! * `R = (1 − β1) / √((1 − β2)(1 − β1²/β2))` bounds every `u` coordinate
//!   when `β1² < β2`.

use alloc::format;
use alloc::string::String;

use crate::error::{Error, Result};
use crate::optimizer::{AdamParams, BiasCorrection, LrSchedule};

/// Bound on `|m| / (√v + ε)`; needs `0 ≤ β1`, `β1² < β2 < 1`.
pub fn compute_r(beta1: f64, beta2: f64) -> Result<f64> {
    if !(0.0..1.0).contains(&beta1) || !(0.0..1.0).contains(&beta2) {
        return Err(Error::config(format!("need 0 <= beta1, beta2 < 1 (got {beta1}, {beta2})")));
    }
    if beta1 * beta1 >= beta2 {
        return Err(Error::config(format!("need beta1^2 < beta2 (got beta1 = {beta1}, beta2 = {beta2})")));
    }
    Ok((1.0 - beta1) / libm::sqrt((1.0 - beta2) * (1.0 - beta1 * beta1 / beta2)))
}

/// `√((1 − β1)/(1 − β2))`, an upper bound on `R` when `β1 ≤ β2`.
pub fn r_upper(beta1: f64, beta2: f64) -> f64 {
    libm::sqrt((1.0 - beta1) / (1.0 - beta2))
}

/// `C2 / (T^{3/4} √d)`; the same at every step `t`.
pub fn schedule_lr(c2: f64, horizon: u64, d: usize, _t: u64) -> f64 {
    c2 * libm::pow(horizon as f64, -0.75) / libm::sqrt(d as f64)
}

/// `1 − C3/√T`; needs `0 < C3 ≤ √T` (equality gives `β1 = 0`).
pub fn schedule_beta1(c3: f64, horizon: u64) -> Result<f64> {
    let rt = libm::sqrt(horizon as f64);
    if !(c3 > 0.0) || c3 > rt {
        return Err(Error::config(format!("C3 = {c3} must satisfy 0 < C3 <= sqrt(T) = {rt}")));
    }
    Ok((1.0 - c3 / rt).max(0.0))
}

/// How `β2` is tied to the scheduled `β1`.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum Beta2Rule {
    /// `β2 = β1`, which gives `R = 1`.
    MatchBeta1,
    Fixed(f64),
    /// `β2 = 1 − c / T^exponent`.
    Power {
        c: f64,
        exponent: f64,
    },
}

impl Beta2Rule {
    pub fn beta2(&self, beta1: f64, horizon: u64) -> f64 {
        match *self {
            Beta2Rule::MatchBeta1 => beta1,
            Beta2Rule::Fixed(b) => b,
            Beta2Rule::Power { c, exponent } => 1.0 - c / libm::pow(horizon as f64, exponent),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum ScheduleMode {
    GeneralCase1,
    OracleCase2,
    Corollary32,
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize))]
pub struct OracleConstants {
    pub f0_minus_fstar: f64,
    pub l_hat: f64,
    pub sigma_hat: f64,
    pub sigma1: f64,
    pub p: f64,
    pub q: f64,
    pub l1: f64,
    pub c0: f64,
    pub c1: f64,
}

impl OracleConstants {
    pub fn validate(&self) -> Result<()> {
        let all =
            [self.f0_minus_fstar, self.l_hat, self.sigma_hat, self.sigma1, self.p, self.q, self.l1, self.c0, self.c1];
        if all.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::config("oracle constants must be finite and nonnegative"));
        }
        if self.c0 < 1.0 || self.c1 < 1.0 {
            return Err(Error::config("C0 and C1 must be at least 1"));
        }
        Ok(())
    }
}

/// `(Ĉ2, Ĉ3)`, the closed-form minimizers of the leading bound terms.
///
/// `Ĉ2 = (F0 − F*)^{3/4} / (2^{1/4} R σ̂^{1/2} L̂^{1/4})`,
/// `Ĉ3 = √2 L̂^{1/2} (F0 − F*)^{1/2} / σ̂`.
pub fn oracle_constants(consts: &OracleConstants, r: f64) -> Result<(f64, f64)> {
    if !(consts.sigma_hat > 0.0) {
        return Err(Error::config("sigma_hat must be positive; use corollary32 mode for noiseless problems"));
    }
    if !(consts.l_hat > 0.0) {
        return Err(Error::config("L_hat must be positive"));
    }
    if !(r > 0.0) {
        return Err(Error::config("R must be positive"));
    }
    let f = consts.f0_minus_fstar;
    let c2 =
        libm::pow(f, 0.75) / (libm::pow(2.0, 0.25) * r * libm::sqrt(consts.sigma_hat) * libm::pow(consts.l_hat, 0.25));
    let c3 = libm::sqrt(2.0) * libm::sqrt(consts.l_hat) * libm::sqrt(f) / consts.sigma_hat;
    Ok((c2, c3))
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize))]
pub struct ScheduleSpec {
    pub c2: f64,
    pub c3: f64,
    pub horizon: u64,
    pub d: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub r: f64,
    /// Lower bound on `E[u]`. Unknown before a run; set with [`ScheduleSpec::with_v_bar`].
    pub v_bar: f64,
    pub mode: ScheduleMode,
}

impl ScheduleSpec {
    pub fn new(mode: ScheduleMode, c2: f64, c3: f64, horizon: u64, d: usize, beta2: Beta2Rule) -> Result<Self> {
        if horizon == 0 || d == 0 {
            return Err(Error::config("T and d must be at least 1"));
        }
        if !(c2 > 0.0 && c2.is_finite()) {
            return Err(Error::config(format!("C2 = {c2} must be positive")));
        }
        let beta1 = schedule_beta1(c3, horizon)?;
        let b2 = beta2.beta2(beta1, horizon);
        let r = compute_r(beta1, b2)?;
        Ok(ScheduleSpec { c2, c3, horizon, d, beta1, beta2: b2, r, v_bar: f64::NAN, mode })
    }

    /// Case 2: `C3 = Ĉ3` first (it does not involve `R`), then `β2`, `R`, `C2 = Ĉ2`.
    pub fn oracle_case2(consts: &OracleConstants, horizon: u64, d: usize, beta2: Beta2Rule) -> Result<Self> {
        let (_, c3) = oracle_constants(consts, 1.0)?;
        let beta1 = schedule_beta1(c3, horizon)?;
        let r = compute_r(beta1, beta2.beta2(beta1, horizon))?;
        let (c2, _) = oracle_constants(consts, r)?;
        Self::new(ScheduleMode::OracleCase2, c2, c3, horizon, d, beta2)
    }

    pub fn with_v_bar(mut self, v_bar: f64) -> Self {
        self.v_bar = v_bar;
        self
    }

    pub fn lr(&self) -> f64 {
        schedule_lr(self.c2, self.horizon, self.d, 0)
    }

    /// Theory-mode Adam parameters realizing this schedule.
    pub fn adam_params(&self, epsilon: f64) -> AdamParams {
        AdamParams {
            beta1: self.beta1,
            beta2: self.beta2,
            epsilon,
            bias_correction: BiasCorrection::Off,
            lr: LrSchedule::Horizon { c2: self.c2, horizon: self.horizon, dim: self.d },
            theory_mode: true,
        }
    }

    pub fn bound_inputs(&self) -> BoundInputs {
        BoundInputs { lr: self.lr(), beta1: self.beta1, r: self.r, d: self.d, horizon: self.horizon }
    }
}

/// The hyperparameters the bound depends on, however they were chosen.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize))]
pub struct BoundInputs {
    pub lr: f64,
    pub beta1: f64,
    pub r: f64,
    pub d: usize,
    pub horizon: u64,
}

impl BoundInputs {
    pub fn from_constant(lr: f64, beta1: f64, beta2: f64, d: usize, horizon: u64) -> Result<Self> {
        Ok(BoundInputs { lr, beta1, r: compute_r(beta1, beta2)?, d, horizon })
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize))]
pub struct MinT {
    /// Ceiling of the threshold expression, at least 1.
    pub threshold: u64,
    pub raw: f64,
    pub satisfied: bool,
    pub warning: Option<String>,
}

/// Smallest horizon past which the schedule's perturbation terms total at most `v̄/2`.
///
/// Case 1 and 2:
/// `(4 C0 C1 √C3 √p R σ1 / v̄ + 4 C1 C2 R² q L1 / (C3 v̄) + (C1 C2 R² q L1 / v̄)^{1/3})^4`.
/// With the `corollary32` schedule: `(4 C2 R² √d q L1 / (C3 v) + (C2 R² √d q L1 / v)^{1/3})^4`.
pub fn min_t_threshold(consts: &OracleConstants, spec: &ScheduleSpec) -> Result<MinT> {
    let v = spec.v_bar;
    if !(v > 0.0) {
        return Err(Error::invalid("v_bar must be positive"));
    }
    let (c2, c3, r) = (spec.c2, spec.c3, spec.r);
    let k = c2 * r * r * consts.q * consts.l1;
    let base = match spec.mode {
        ScheduleMode::GeneralCase1 | ScheduleMode::OracleCase2 => {
            4.0 * consts.c0 * consts.c1 * libm::sqrt(c3) * libm::sqrt(consts.p) * r * consts.sigma1 / v
                + 4.0 * consts.c1 * k / (c3 * v)
                + libm::cbrt(consts.c1 * k / v)
        }
        ScheduleMode::Corollary32 => {
            let kd = k * libm::sqrt(spec.d as f64);
            4.0 * kd / (c3 * v) + libm::cbrt(kd / v)
        }
    };
    let raw = libm::pow(base, 4.0);
    let threshold = if raw.is_finite() { libm::ceil(raw).max(1.0) as u64 } else { u64::MAX };
    let satisfied = spec.horizon >= threshold;
    let warning = (!satisfied).then(|| format!("T = {} is below the threshold {}", spec.horizon, threshold));
    Ok(MinT { threshold, raw, satisfied, warning })
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize))]
pub struct TheoremRhs {
    /// `(F0−F*)/(γT)`, `2R√d‖∇F0‖/(T(1−β1))`, `2√(1−β1) R√d σ̂`,
    /// `2γR²dL̂/(1−β1)`, `γR²dL̂/(2T)`.
    pub terms: [f64; 5],
    pub total: f64,
}

/// Right-hand side of the main convergence inequality.
pub fn theorem_rhs(consts: &OracleConstants, b: &BoundInputs, grad_norm_x0: f64) -> TheoremRhs {
    let (g, t, om) = (b.lr, b.horizon as f64, 1.0 - b.beta1);
    let (r, d) = (b.r, b.d as f64);
    let sd = libm::sqrt(d);
    let terms = [
        consts.f0_minus_fstar / (g * t),
        2.0 * r * sd * grad_norm_x0 / (t * om),
        2.0 * libm::sqrt(om) * r * sd * consts.sigma_hat,
        2.0 * g * r * r * d * consts.l_hat / om,
        g * r * r * d * consts.l_hat / (2.0 * t),
    ];
    TheoremRhs { terms, total: terms.iter().sum() }
}

/// Coefficient multiplying `Σ E‖∇F(x_t)‖₂` on the left-hand side:
/// `γR²dqL1/2 + 2 C0 R √d σ1 √(p(1−β1)) + 2γR²dqL1/(1−β1)`.
pub fn lhs_coefficient(consts: &OracleConstants, b: &BoundInputs) -> f64 {
    let (g, om, r, d) = (b.lr, 1.0 - b.beta1, b.r, b.d as f64);
    let ql = consts.q * consts.l1;
    g * r * r * d * ql / 2.0
        + 2.0 * consts.c0 * r * libm::sqrt(d) * consts.sigma1 * libm::sqrt(consts.p * om)
        + 2.0 * g * r * r * d * ql / om
}

/// `x = (a + b^{α/β})^{1/α}`, past which `a/x^α + b/x^β ≤ 1`.
pub fn lemma4_point(a: f64, b: f64, alpha: f64, beta: f64) -> f64 {
    libm::pow(a + libm::pow(b, alpha / beta), 1.0 / alpha)
}

pub fn lemma4_value(a: f64, b: f64, alpha: f64, beta: f64, x: f64) -> f64 {
    a / libm::pow(x, alpha) + b / libm::pow(x, beta)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit_consts() -> OracleConstants {
        OracleConstants {
            f0_minus_fstar: 1.0,
            l_hat: 1.0,
            sigma_hat: 1.0,
            sigma1: 0.0,
            p: 2.0,
            q: 0.0,
            l1: 0.0,
            c0: 1.0,
            c1: 1.0,
        }
    }

    #[test]
    fn r_examples() {
        // direct evaluation: 0.1 / sqrt(0.001 * (1 - 0.81/0.999))
        let oracle = 0.1 / (0.001f64 * (1.0 - 0.81 / 0.999)).sqrt();
        let r = compute_r(0.9, 0.999).unwrap();
        assert!((r - oracle).abs() < 1e-12);
        assert!((r - 7.2703).abs() < 1e-3);
        assert!(r <= r_upper(0.9, 0.999) && (r_upper(0.9, 0.999) - 10.0).abs() < 1e-9);
        for b in [0.01, 0.5, 0.9, 0.999] {
            assert!((compute_r(b, b).unwrap() - 1.0).abs() < 1e-12);
        }
        assert!(compute_r(0.9, 0.8).unwrap_err().is_config());
    }

    #[test]
    fn lr_examples() {
        assert_eq!(schedule_lr(1.0, 256, 16, 0), 0.00390625);
        assert_eq!(schedule_lr(1.0, 1, 1, 5), 1.0);
        let ratio = schedule_lr(1.0, 100, 64, 0) / schedule_lr(1.0, 100, 32, 0);
        assert!((ratio - 1.0 / 2f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn beta1_examples() {
        assert_eq!(schedule_beta1(1.0, 256).unwrap(), 0.9375);
        assert_eq!(schedule_beta1(1.0, 1).unwrap(), 0.0);
        assert!(schedule_beta1(1.0, 1 << 40).unwrap() > 0.999999);
        assert!(schedule_beta1(17.0, 256).is_err());
        assert_eq!(schedule_beta1(16.0, 256).unwrap(), 0.0);
        assert!(schedule_beta1(0.0, 256).is_err());
    }

    #[test]
    fn oracle_examples() {
        let (c2, c3) = oracle_constants(&unit_consts(), 1.0).unwrap();
        assert!((c2 - 2f64.powf(-0.25)).abs() < 1e-15 && (c2 - 0.8409).abs() < 1e-4);
        assert!((c3 - 2f64.sqrt()).abs() < 1e-15);
        let four = OracleConstants { sigma_hat: 4.0, ..unit_consts() };
        let (d2, d3) = oracle_constants(&four, 1.0).unwrap();
        assert!((d2 / c2 - 0.5).abs() < 1e-15 && (d3 / c3 - 0.25).abs() < 1e-15);
        let zero = OracleConstants { f0_minus_fstar: 0.0, ..unit_consts() };
        assert_eq!(oracle_constants(&zero, 1.0).unwrap(), (0.0, 0.0));
        let silent = OracleConstants { sigma_hat: 0.0, ..unit_consts() };
        assert!(oracle_constants(&silent, 1.0).unwrap_err().is_config());
    }

    #[test]
    fn min_t_collapses_without_growth_terms() {
        let spec = ScheduleSpec::new(ScheduleMode::GeneralCase1, 1.0, 1.0, 64, 4, Beta2Rule::MatchBeta1)
            .unwrap()
            .with_v_bar(0.5);
        let m = min_t_threshold(&unit_consts(), &spec).unwrap();
        assert_eq!((m.threshold, m.raw, m.satisfied), (1, 0.0, true));
    }

    #[test]
    fn min_t_hand_value() {
        // C0=C1=1, C3=1, p=1, R=1, σ1=1, v̄=1, C2=1, q L1=1:
        // (4 + 4 + 1)^4 = 6561
        let c = OracleConstants { sigma1: 1.0, p: 1.0, q: 0.5, l1: 2.0, ..unit_consts() };
        let spec = ScheduleSpec::new(ScheduleMode::GeneralCase1, 1.0, 1.0, 100, 1, Beta2Rule::MatchBeta1)
            .unwrap()
            .with_v_bar(1.0);
        let m = min_t_threshold(&c, &spec).unwrap();
        assert_eq!(m.threshold, 6561);
        assert!(!m.satisfied && m.warning.is_some());
        // corollary32 form with d=1: (4 + 1)^4
        let spec32 = ScheduleSpec { mode: ScheduleMode::Corollary32, ..spec };
        assert_eq!(min_t_threshold(&c, &spec32).unwrap().threshold, 625);
    }

    #[test]
    fn lemma4_examples() {
        let x = lemma4_point(1.0, 1.0, 1.0, 2.0);
        assert_eq!(x, 2.0);
        assert_eq!(lemma4_value(1.0, 1.0, 1.0, 2.0, x), 0.75);
        let x = lemma4_point(3.0, 8.0, 1.0, 3.0);
        assert!((x - 5.0).abs() < 1e-12);
        assert!((lemma4_value(3.0, 8.0, 1.0, 3.0, x) - 0.664).abs() < 1e-12);
    }

    #[test]
    fn rhs_term_isolation() {
        let c = OracleConstants { f0_minus_fstar: 3.0, l_hat: 0.0, sigma_hat: 0.0, ..unit_consts() };
        let b = BoundInputs { lr: 0.01, beta1: 0.5, r: 1.0, d: 4, horizon: 100 };
        let rhs = theorem_rhs(&c, &b, 0.0);
        assert!((rhs.total - 3.0 / (0.01 * 100.0)).abs() < 1e-12);
        let tiny = BoundInputs { lr: 1e-300, ..b };
        assert!(theorem_rhs(&unit_consts(), &tiny, 1.0).total > 1e290);
    }

    #[test]
    fn case2_leading_terms_collapse() {
        // Substituting Ĉ2, Ĉ3: the three T^{-1/4} terms sum to
        // √d · 512^{1/4} R σ̂^{1/2} L̂^{1/4} (F0−F*)^{1/4} / T^{1/4}.
        for (f, r, s, l) in [(1.0, 1.0, 1.0, 1.0), (2.5, 1.7, 0.3, 9.0)] {
            let c = OracleConstants { f0_minus_fstar: f, sigma_hat: s, l_hat: l, ..unit_consts() };
            let (c2, c3) = oracle_constants(&c, r).unwrap();
            let t = 4096u64;
            let d = 16usize;
            let b = BoundInputs { lr: schedule_lr(c2, t, d, 0), beta1: 1.0 - c3 / 64.0, r, d, horizon: t };
            let rhs = theorem_rhs(&c, &b, 0.0);
            let lead = rhs.terms[0] + rhs.terms[2] + rhs.terms[3];
            let closed = 4.0 * libm::pow(512.0, 0.25) * r * s.sqrt() * l.powf(0.25) * f.powf(0.25) / 8.0;
            assert!((lead - closed).abs() < 1e-10 * closed, "{lead} vs {closed}");
            if f == 1.0 {
                let printed_form = 4.0 * libm::pow(512.0, 0.25) * r * s.sqrt() * l.powf(0.25) * f / 8.0;
                assert!((lead - printed_form).abs() < 1e-10 * printed_form);
            }
        }
    }

    #[test]
    fn case2_spec_sets_r_before_c2() {
        let c = OracleConstants { f0_minus_fstar: 4.0, l_hat: 2.0, sigma_hat: 1.0, ..unit_consts() };
        let s = ScheduleSpec::oracle_case2(&c, 1024, 8, Beta2Rule::Fixed(0.9999)).unwrap();
        let (c2, c3) = oracle_constants(&c, s.r).unwrap();
        assert_eq!((s.c2, s.c3), (c2, c3));
        assert!(s.r > 1.0);
        let p = s.adam_params(1e-8);
        assert!(p.validate().is_ok() && p.theory_mode);
    }
}
