//! Synthetic objectives with known smoothness and an exact-variance
//! stochastic gradient oracle.
//!
//! | kind | F(x) | F* | (L0, L1, q) |
//! |------|------|----|-------------|
//! | `quadratic` | ½λ‖x‖² | 0 | (λ, 0, 0), global |
//! | `quartic` | a Σ x_j⁴ | 0 | (24aρ², 24a^{1/3}4^{−2/3}, 2/3) for ‖y−x‖ ≤ ρ |
//! | `logsumexp` | c Σ (e^{x_j} + e^{−x_j} − 2) | 0 | (2c e^ρ, e^ρ, 1) for ‖y−x‖ ≤ ρ |
//! | `rosenbrock_like` | Σ b(x_{i+1} − x_i²)² + (1 − x_i)² | 0 | fitted |
//!
//! `logsumexp` is `exp(LSE(x, −x)) − 2d` scaled by `c`, the exponential of a
//! log-sum-exp over the paired coordinates.
//!
//! With `normalized`, the quadratic and quartic become
//! `(1/d) Σ φ(√d x_j)`, which makes the dynamics at learning rate `γ`
//! in dimension `d` match those at `γ√d` in dimension 1.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::rng::RngStream;
use crate::vector::{check_finite, l2, Vector};

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SmoothnessModel {
    pub l0: f64,
    pub l1: f64,
    pub q: f64,
}

impl SmoothnessModel {
    /// `L̂ = L0 + (1 − q) L1`
    pub fn l_hat(&self) -> f64 {
        self.l0 + (1.0 - self.q) * self.l1
    }

    /// Local constant `L0 + L1 ‖∇F(x)‖^q`.
    pub fn local(&self, grad_norm: f64) -> f64 {
        self.l0 + self.l1 * libm::pow(grad_norm, self.q)
    }
}

/// Which σ̂ to use: the stated constant `σ0 + √((2−p)/2)`, or the one the
/// variance argument produces, `σ0 + √((2−p)/2) σ1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum SigmaHatReading {
    Stated,
    Derived,
}

impl SigmaHatReading {
    pub const ALL: [SigmaHatReading; 2] = [SigmaHatReading::Stated, SigmaHatReading::Derived];

    pub fn name(&self) -> &'static str {
        match self {
            SigmaHatReading::Stated => "stated",
            SigmaHatReading::Derived => "derived",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct NoiseModel {
    pub sigma0: f64,
    pub sigma1: f64,
    pub p: f64,
}

impl NoiseModel {
    pub fn noiseless() -> Self {
        NoiseModel { sigma0: 0.0, sigma1: 0.0, p: 2.0 }
    }

    /// `σ0² + σ1² ‖∇F‖^p`
    pub fn variance(&self, grad_norm: f64) -> f64 {
        self.sigma0 * self.sigma0 + self.sigma1 * self.sigma1 * libm::pow(grad_norm, self.p)
    }

    pub fn sigma_hat(&self, reading: SigmaHatReading) -> f64 {
        let k = libm::sqrt((2.0 - self.p) / 2.0);
        match reading {
            SigmaHatReading::Stated => self.sigma0 + k,
            SigmaHatReading::Derived => self.sigma0 + k * self.sigma1,
        }
    }

    pub fn is_zero(&self) -> bool {
        self.sigma0 == 0.0 && self.sigma1 == 0.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum ProblemKind {
    Quadratic,
    Quartic,
    RosenbrockLike,
    Logsumexp,
}

impl ProblemKind {
    pub fn name(&self) -> &'static str {
        match self {
            ProblemKind::Quadratic => "quadratic",
            ProblemKind::Quartic => "quartic",
            ProblemKind::RosenbrockLike => "rosenbrock_like",
            ProblemKind::Logsumexp => "logsumexp",
        }
    }
}

/// Construction parameters. Unused fields are ignored by kinds that do not
/// need them.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct ProblemSpec {
    pub kind: ProblemKind,
    pub d: usize,
    /// Quadratic curvature λ.
    pub lambda: f64,
    /// Quartic and logsumexp scale.
    pub coef: f64,
    /// Rosenbrock valley stiffness.
    pub b: f64,
    pub normalized: bool,
    pub sigma0: f64,
    pub sigma1: f64,
    pub p: f64,
    /// Pair separation ρ over which the smoothness certificate holds.
    pub separation: f64,
    /// Every coordinate of the start point (divided by √d when normalized).
    pub x0_scale: f64,
    /// Explicit start point; overrides `x0_scale`.
    pub x0: Option<Vec<f64>>,
    /// Seeds the smoothness fit of kinds without a certificate.
    pub seed: u64,
}

impl Default for ProblemSpec {
    fn default() -> Self {
        ProblemSpec::new(ProblemKind::Quadratic, 1)
    }
}

impl ProblemSpec {
    pub fn new(kind: ProblemKind, d: usize) -> Self {
        ProblemSpec {
            kind,
            d,
            lambda: 1.0,
            coef: 1.0,
            b: 100.0,
            normalized: false,
            sigma0: 0.0,
            sigma1: 0.0,
            p: 2.0,
            separation: 1.0,
            x0_scale: 1.0,
            x0: None,
            seed: 0,
        }
    }

    pub fn with_noise(mut self, sigma0: f64, sigma1: f64, p: f64) -> Self {
        self.sigma0 = sigma0;
        self.sigma1 = sigma1;
        self.p = p;
        self
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize))]
pub enum Certificate {
    /// Analytic constants valid for every pair with `‖y − x‖₂ ≤ max_separation`.
    Certified { model: SmoothnessModel, max_separation: f64, region: String },
    /// No analytic constants; a fitted envelope is recorded instead.
    Fitted { model: SmoothnessModel, region: String },
}

impl Certificate {
    pub fn model(&self) -> SmoothnessModel {
        match self {
            Certificate::Certified { model, .. } | Certificate::Fitted { model, .. } => *model,
        }
    }

    pub fn is_certified(&self) -> bool {
        matches!(self, Certificate::Certified { .. })
    }

    pub fn region(&self) -> &str {
        match self {
            Certificate::Certified { region, .. } | Certificate::Fitted { region, .. } => region,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Objective {
    Quadratic { lambda: f64 },
    Quartic { a: f64 },
    Rosenbrock { b: f64 },
    ExpPair { c: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Problem {
    kind: ProblemKind,
    d: usize,
    objective: Objective,
    noise: NoiseModel,
    x0: Vector,
    certificate: Certificate,
}

pub fn make_problem(spec: &ProblemSpec) -> Result<Problem> {
    let d = spec.d;
    if d == 0 {
        return Err(Error::config("problem dimension d must be >= 1"));
    }
    let positive = |name: &str, v: f64| {
        if v > 0.0 && v.is_finite() {
            Ok(())
        } else {
            Err(Error::config(format!("{name} must be positive and finite, got {v}")))
        }
    };
    for (name, v) in [("sigma0", spec.sigma0), ("sigma1", spec.sigma1)] {
        if !(v >= 0.0 && v.is_finite()) {
            return Err(Error::config(format!("{name} must be nonnegative, got {v}")));
        }
    }
    if !(0.0..=2.0).contains(&spec.p) {
        return Err(Error::config(format!("p must lie in [0, 2], got {}", spec.p)));
    }
    positive("separation", spec.separation)?;
    if !spec.x0_scale.is_finite() {
        return Err(Error::config("x0_scale must be finite"));
    }
    let rho = spec.separation;
    let dn = d as f64;

    let (objective, model, region) = match spec.kind {
        ProblemKind::Quadratic => {
            positive("lambda", spec.lambda)?;
            let m = SmoothnessModel { l0: spec.lambda, l1: 0.0, q: 0.0 };
            (Objective::Quadratic { lambda: spec.lambda }, Some(m), String::from("all of R^d"))
        }
        ProblemKind::Quartic => {
            positive("coef", spec.coef)?;
            let a = if spec.normalized { spec.coef * dn } else { spec.coef };
            let m = SmoothnessModel {
                l0: 24.0 * a * rho * rho,
                l1: 24.0 * libm::cbrt(a) * libm::pow(4.0, -2.0 / 3.0),
                q: 2.0 / 3.0,
            };
            (Objective::Quartic { a }, Some(m), format!("pairs with |y - x|_2 <= {rho}"))
        }
        ProblemKind::Logsumexp => {
            positive("coef", spec.coef)?;
            let e = libm::exp(rho);
            let m = SmoothnessModel { l0: 2.0 * spec.coef * e, l1: e, q: 1.0 };
            (Objective::ExpPair { c: spec.coef }, Some(m), format!("pairs with |y - x|_2 <= {rho}"))
        }
        ProblemKind::RosenbrockLike => {
            positive("b", spec.b)?;
            (Objective::Rosenbrock { b: spec.b }, None, String::new())
        }
    };
    if spec.normalized && !matches!(spec.kind, ProblemKind::Quadratic | ProblemKind::Quartic) {
        return Err(Error::config("normalized is supported for quadratic and quartic only"));
    }

    let x0 = match &spec.x0 {
        Some(v) if v.len() != d => return Err(Error::config(format!("x0 has length {}, expected d = {d}", v.len()))),
        Some(v) => Vector::from_vec(v.clone()).map_err(|_| Error::config("x0 must be finite"))?,
        None => {
            let s = if spec.normalized { spec.x0_scale / libm::sqrt(dn) } else { spec.x0_scale };
            match spec.kind {
                ProblemKind::RosenbrockLike => {
                    Vector::from_vec((0..d).map(|j| if j % 2 == 0 { -1.2 * s } else { s }).collect())?
                }
                _ => Vector::filled(d, s)?,
            }
        }
    };

    let noise = NoiseModel { sigma0: spec.sigma0, sigma1: spec.sigma1, p: spec.p };
    let placeholder =
        Certificate::Fitted { model: SmoothnessModel { l0: 0.0, l1: 0.0, q: 0.0 }, region: String::new() };
    let mut problem = Problem { kind: spec.kind, d, objective, noise, x0, certificate: placeholder };
    problem.certificate = match model {
        Some(model) => Certificate::Certified {
            model,
            max_separation: if spec.kind == ProblemKind::Quadratic { f64::INFINITY } else { rho },
            region,
        },
        None => {
            let mut rng = RngStream::new(spec.seed, crate::rng::stream_id(&[0x05ee_df17, d as u64]));
            let fit = crate::diagnostics::fit_smoothness(&problem, 2000, &mut rng)?;
            match fit.params {
                crate::diagnostics::FitParams::Smoothness(model) => Certificate::Fitted { model, region: fit.region },
                _ => unreachable!("fit_smoothness returns smoothness parameters"),
            }
        }
    };
    Ok(problem)
}

impl Problem {
    pub fn kind(&self) -> ProblemKind {
        self.kind
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn x0(&self) -> &Vector {
        &self.x0
    }

    pub fn f_star(&self) -> f64 {
        0.0
    }

    pub fn noise(&self) -> NoiseModel {
        self.noise
    }

    pub fn certificate(&self) -> &Certificate {
        &self.certificate
    }

    pub fn smoothness(&self) -> SmoothnessModel {
        self.certificate.model()
    }

    /// A global minimizer.
    pub fn minimizer(&self) -> Vec<f64> {
        match self.objective {
            Objective::Rosenbrock { .. } => vec![1.0; self.d],
            _ => vec![0.0; self.d],
        }
    }

    pub fn value(&self, x: &[f64]) -> f64 {
        match self.objective {
            Objective::Quadratic { lambda } => 0.5 * lambda * x.iter().map(|v| v * v).sum::<f64>(),
            Objective::Quartic { a } => a * x.iter().map(|v| (v * v) * (v * v)).sum::<f64>(),
            Objective::ExpPair { c } => {
                // e^x + e^-x - 2 = 4 sinh²(x/2), accurate near 0
                4.0 * c * x.iter().map(|v| sq(libm::sinh(0.5 * v))).sum::<f64>()
            }
            Objective::Rosenbrock { b } => {
                let n = x.len();
                let mut f = 0.0;
                for i in 0..n.saturating_sub(1) {
                    f += b * sq(x[i + 1] - x[i] * x[i]) + sq(1.0 - x[i]);
                }
                if n == 1 {
                    f = sq(1.0 - x[0]);
                }
                f
            }
        }
    }

    pub fn grad_into(&self, x: &[f64], out: &mut [f64]) {
        match self.objective {
            Objective::Quadratic { lambda } => {
                for (o, v) in out.iter_mut().zip(x) {
                    *o = lambda * v;
                }
            }
            Objective::Quartic { a } => {
                for (o, v) in out.iter_mut().zip(x) {
                    *o = 4.0 * a * v * v * v;
                }
            }
            Objective::ExpPair { c } => {
                for (o, v) in out.iter_mut().zip(x) {
                    *o = 2.0 * c * libm::sinh(*v);
                }
            }
            Objective::Rosenbrock { b } => {
                let n = x.len();
                out.iter_mut().for_each(|o| *o = 0.0);
                if n == 1 {
                    out[0] = -2.0 * (1.0 - x[0]);
                    return;
                }
                for i in 0..n - 1 {
                    let r = x[i + 1] - x[i] * x[i];
                    out[i] += -4.0 * b * r * x[i] - 2.0 * (1.0 - x[i]);
                    out[i + 1] += 2.0 * b * r;
                }
            }
        }
    }

    pub fn grad(&self, x: &Vector) -> Vector {
        let mut g = vec![0.0; self.d];
        self.grad_into(x.as_slice(), &mut g);
        Vector::from_vec(g).unwrap_or_else(|_| Vector::filled(self.d, f64::MAX).unwrap())
    }

    /// Writes `∇F + s ξ/√d` into `out`, with `s² = σ0² + σ1² ‖∇F‖^p`.
    ///
    /// A noiseless model draws nothing from `rng`.
    pub fn noisy_from_grad(&self, grad: &[f64], rng: &mut RngStream, out: &mut [f64]) {
        out.copy_from_slice(grad);
        if self.noise.is_zero() {
            return;
        }
        let s = libm::sqrt(self.noise.variance(l2(grad))) / libm::sqrt(self.d as f64);
        for o in out.iter_mut() {
            *o += s * rng.normal();
        }
    }

    /// Points `x* + t·dir` whose exact gradient norm is `target` (bisection on `t`).
    pub fn point_with_grad_norm(&self, dir: &[f64], target: f64) -> Option<Vec<f64>> {
        let base = self.minimizer();
        let at = |t: f64| -> Vec<f64> { base.iter().zip(dir).map(|(b, u)| b + t * u).collect() };
        let mut g = vec![0.0; self.d];
        let mut gnorm = |x: &[f64]| {
            self.grad_into(x, &mut g);
            l2(&g)
        };
        let (mut lo, mut hi) = (0.0, 1e-6);
        loop {
            let n = gnorm(&at(hi));
            if !n.is_finite() {
                return None;
            }
            if n >= target {
                break;
            }
            lo = hi;
            hi *= 2.0;
            if hi > 1e4 {
                return None;
            }
        }
        for _ in 0..100 {
            let mid = 0.5 * (lo + hi);
            if gnorm(&at(mid)) < target {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        Some(at(0.5 * (lo + hi)))
    }
}

fn sq(v: f64) -> f64 {
    v * v
}

/// Stochastic gradient at `x`.
pub fn noisy_grad(problem: &Problem, x: &Vector, rng: &mut RngStream) -> Result<Vector> {
    let g = problem.grad(x);
    let mut out = vec![0.0; problem.dim()];
    problem.noisy_from_grad(g.as_slice(), rng, &mut out);
    Vector::from_vec(out)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradientCheck {
    /// `‖fd − ∇F‖∞ / ‖∇F‖∞`, or the absolute error when `absolute`.
    pub max_error: f64,
    /// The gradient is numerically zero, so the error is absolute.
    pub absolute: bool,
}

impl GradientCheck {
    /// Absolute mode compares against 1e-8 regardless of `rel_tol`.
    pub fn passes(&self, rel_tol: f64) -> bool {
        if self.absolute {
            self.max_error <= 1e-8
        } else {
            self.max_error <= rel_tol
        }
    }
}

/// Central differences with per-coordinate step `h (1 + |x_j|)`.
pub fn gradient_check(problem: &Problem, x: &Vector, h: f64) -> Result<GradientCheck> {
    if !(h > 0.0) {
        return Err(Error::invalid("gradient_check needs h > 0"));
    }
    check_finite(x.as_slice())?;
    let g = problem.grad(x);
    let mut xp = x.as_slice().to_vec();
    let mut worst: f64 = 0.0;
    for j in 0..problem.dim() {
        let hj = h * (1.0 + x[j].abs());
        let orig = xp[j];
        xp[j] = orig + hj;
        let fp = problem.value(&xp);
        xp[j] = orig - hj;
        let fm = problem.value(&xp);
        xp[j] = orig;
        let fd = (fp - fm) / (2.0 * hj);
        worst = worst.max((fd - g[j]).abs());
    }
    let gmax = g.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if gmax < 1e-6 {
        Ok(GradientCheck { max_error: worst, absolute: true })
    } else {
        Ok(GradientCheck { max_error: worst / gmax, absolute: false })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn build(kind: ProblemKind, d: usize) -> Problem {
        make_problem(&ProblemSpec::new(kind, d)).unwrap()
    }

    #[test]
    fn quadratic_values() {
        let mut spec = ProblemSpec::new(ProblemKind::Quadratic, 2);
        spec.lambda = 2.0;
        let p = make_problem(&spec).unwrap();
        let x = Vector::from_vec(vec![1.0, 1.0]).unwrap();
        assert_eq!(p.value(x.as_slice()), 2.0);
        assert_eq!(p.grad(&x).as_slice(), &[2.0, 2.0]);
        assert_eq!(p.f_star(), 0.0);
        assert_eq!(p.smoothness(), SmoothnessModel { l0: 2.0, l1: 0.0, q: 0.0 });
    }

    #[test]
    fn quartic_values_and_exponent() {
        let p = build(ProblemKind::Quartic, 1);
        let x = Vector::from_vec(vec![1.0]).unwrap();
        assert_eq!(p.value(x.as_slice()), 1.0);
        assert_eq!(p.grad(&x)[0], 4.0);
        // Hessian 12x² written through the gradient: 12 (|g|/4)^{2/3}
        let xv = 0.7f64;
        let g = 4.0 * xv * xv * xv;
        assert!((12.0 * xv * xv - 12.0 * libm::pow(g / 4.0, 2.0 / 3.0)).abs() < 1e-12);
        assert!((p.smoothness().q - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn minimizers_have_zero_gradient() {
        for kind in [ProblemKind::Quadratic, ProblemKind::Quartic, ProblemKind::Logsumexp, ProblemKind::RosenbrockLike]
        {
            for d in [1, 2, 5] {
                let p = build(kind, d);
                let xs = Vector::from_vec(p.minimizer()).unwrap();
                assert!(p.grad(&xs).iter().all(|g| *g == 0.0), "{kind:?} d={d}");
                assert_eq!(p.value(xs.as_slice()), p.f_star());
            }
        }
    }

    #[test]
    fn gradient_checks() {
        let mut rng = RngStream::new(1, 1);
        for kind in [ProblemKind::Quadratic, ProblemKind::Quartic, ProblemKind::Logsumexp, ProblemKind::RosenbrockLike]
        {
            let p = build(kind, 6);
            for _ in 0..20 {
                let x = Vector::from_vec((0..6).map(|_| 2.0 * rng.normal()).collect()).unwrap();
                let c = gradient_check(&p, &x, 1e-6).unwrap();
                assert!(!c.absolute && c.max_error < 1e-7, "{kind:?}: {c:?}");
            }
        }
        let q = build(ProblemKind::Quartic, 1);
        let c = gradient_check(&q, &Vector::from_vec(vec![1.0]).unwrap(), 1e-6).unwrap();
        assert!(c.max_error < 1e-6);
        let at_min = gradient_check(&q, &Vector::zeros(1), 1e-6).unwrap();
        assert!(at_min.absolute && at_min.passes(0.0));
    }

    #[test]
    fn noiseless_oracle_is_exact() {
        let p = build(ProblemKind::Quartic, 3);
        let x = Vector::from_vec(vec![0.5, -1.0, 2.0]).unwrap();
        let g = noisy_grad(&p, &x, &mut RngStream::new(0, 0)).unwrap();
        assert_eq!(g, p.grad(&x));
    }

    #[test]
    fn sigma_hat_readings() {
        let n = NoiseModel { sigma0: 1.0, sigma1: 0.5, p: 0.0 };
        assert_eq!(n.sigma_hat(SigmaHatReading::Stated), 2.0);
        assert_eq!(n.sigma_hat(SigmaHatReading::Derived), 1.5);
        let n2 = NoiseModel { p: 2.0, ..n };
        assert_eq!(n2.sigma_hat(SigmaHatReading::Stated), n2.sigma_hat(SigmaHatReading::Derived));
    }

    #[test]
    fn l_hat_reductions() {
        let m = SmoothnessModel { l0: 2.0, l1: 3.0, q: 0.0 };
        assert_eq!(m.l_hat(), 5.0);
        assert_eq!(SmoothnessModel { q: 1.0, ..m }.l_hat(), 2.0);
    }

    #[test]
    fn invalid_specs() {
        let mut s = ProblemSpec::new(ProblemKind::Quadratic, 0);
        assert!(make_problem(&s).unwrap_err().is_config());
        s.d = 2;
        s.p = 3.0;
        assert!(make_problem(&s).is_err());
        s.p = 2.0;
        s.x0 = Some(vec![1.0]);
        assert!(make_problem(&s).is_err());
        let mut l = ProblemSpec::new(ProblemKind::Logsumexp, 2);
        l.normalized = true;
        assert!(make_problem(&l).is_err());
    }

    #[test]
    fn rosenbrock_is_fitted_not_certified() {
        let p = build(ProblemKind::RosenbrockLike, 4);
        assert!(!p.certificate().is_certified());
        let m = p.smoothness();
        assert!(m.l0 >= 0.0 && m.l1 >= 0.0 && (0.0..=1.0).contains(&m.q));
    }

    #[test]
    fn normalized_quartic_scaling() {
        let mut s = ProblemSpec::new(ProblemKind::Quartic, 16);
        s.normalized = true;
        let p = make_problem(&s).unwrap();
        assert!((p.x0()[0] - 0.25).abs() < 1e-15);
        // (1/d) Σ (√d x)^4 at x = x0 equals (1/d)·d·1 = 1
        assert!((p.value(p.x0().as_slice()) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn targeted_gradient_norm() {
        let p = build(ProblemKind::Logsumexp, 3);
        let dir = [0.6, 0.0, -0.8];
        let x = p.point_with_grad_norm(&dir, 7.5).unwrap();
        let mut g = [0.0; 3];
        p.grad_into(&x, &mut g);
        assert!((l2(&g) - 7.5).abs() < 1e-9);
    }
}
